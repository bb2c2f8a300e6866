//! Offline training data and the closed-loop operation phase.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::solve_mpc;
use crate::edmd::{format_f64, KoopmanModel, SnapshotSet};
use crate::error::{Error, Result};
use crate::matops::Matrix;
use crate::observer::KalmanState;
use crate::plants::{apply_schedule, measure, step_plant, PlantState};
use crate::redmd::RecursiveEstimator;

use super::config::ExperimentConfig;

const TRAINING_STREAM: u64 = 1;
const LOOP_STREAM: u64 = 2;

/// One sample of a closed-loop run. `x`, `x_meas`, `w` refer to `t`; the
/// estimator fields are the values after this sample's update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub x_meas: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub lambda: f64,
    pub trace_gamma: f64,
    pub updated: bool,
    pub e_post: f64,
    pub window_error: f64,
    pub e_cum: f64,
}

/// A run stopped by a numerical failure, with everything recorded before it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAbort {
    pub records: Vec<StepRecord>,
    pub error: Error,
    pub t: f64,
}

impl std::fmt::Display for RunAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted at t = {} after {} samples: {}",
            self.t,
            self.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RunAbort {}

/// Per-sample view handed to [`run_closed_loop_with`] callbacks.
pub struct LoopView<'a> {
    pub k: usize,
    pub record: &'a StepRecord,
    pub controller_model: &'a KoopmanModel,
    pub observer_model: &'a KoopmanModel,
    pub estimator: &'a RecursiveEstimator,
}

pub fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt).round() as usize
}

/// Excite the nominal plant from rest and record measured snapshots.
pub fn generate_training_data(cfg: &ExperimentConfig) -> Result<SnapshotSet> {
    let plant = &cfg.plant;
    let spec = &cfg.run.training;
    let n = plant.state_dim();
    let steps = sample_count(spec.duration, plant.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    rng.set_stream(TRAINING_STREAM);
    let phases: Vec<f64> = spec.amplitudes.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut state = PlantState {
        x: DVector::zeros(n),
        t: 0.0,
    };
    let mut x = Matrix::zeros(n, steps);
    let mut x_next = Matrix::zeros(n, steps);
    let mut u = Matrix::zeros(1, steps);
    let (mut xm, _) = measure(plant, &state, &mut rng);
    for k in 0..steps {
        let t = k as f64 * plant.dt;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut uk = spec.noise * noise;
        for ((a, f), ph) in spec.amplitudes.iter().zip(&spec.frequencies).zip(&phases) {
            uk += a * (2.0 * PI * f * t + ph).sin();
        }
        let uv = DVector::from_element(1, uk);
        state = step_plant(plant, &state, &uv)?;
        let (xm_next, _) = measure(plant, &state, &mut rng);
        x.set_column(k, &xm);
        x_next.set_column(k, &xm_next);
        u[(0, k)] = uk;
        xm = xm_next;
    }
    SnapshotSet::new(x, x_next, u, plant.dt)
}

/// Offline initialisation: training data, batch fit and `Gamma_0`.
pub fn initial_estimator(cfg: &ExperimentConfig) -> Result<RecursiveEstimator> {
    cfg.validate()?;
    let data = generate_training_data(cfg)?;
    RecursiveEstimator::init_from_batch(&data, &cfg.dictionary()?, cfg.redmd.clone())
}

/// Train, then run the closed loop for `cfg.run.t_sim`.
pub fn run_closed_loop(cfg: &ExperimentConfig) -> std::result::Result<Vec<StepRecord>, RunAbort> {
    let est = initial_estimator(cfg).map_err(|error| RunAbort {
        records: Vec::new(),
        error,
        t: 0.0,
    })?;
    run_closed_loop_with(cfg, est, |_| {})
}

/// The closed loop from a given initial estimator. Per sample:
/// measure, correct the observer, solve the MPC, step the plant,
/// predict the observer, update the model.
pub fn run_closed_loop_with<F>(
    cfg: &ExperimentConfig,
    mut est: RecursiveEstimator,
    mut inspect: F,
) -> std::result::Result<Vec<StepRecord>, RunAbort>
where
    F: FnMut(&LoopView<'_>),
{
    let mut records = Vec::new();
    let mut t = 0.0;
    match closed_loop(cfg, &mut est, &mut records, &mut t, &mut inspect) {
        Ok(()) => Ok(records),
        Err(error) => Err(RunAbort { records, error, t }),
    }
}

fn closed_loop<F>(
    cfg: &ExperimentConfig,
    est: &mut RecursiveEstimator,
    records: &mut Vec<StepRecord>,
    t_out: &mut f64,
    inspect: &mut F,
) -> Result<()>
where
    F: FnMut(&LoopView<'_>),
{
    cfg.validate()?;
    let dict = cfg.dictionary()?;
    if est.model().dict != dict {
        return Err(Error::Config("estimator dictionary differs from the config".into()));
    }
    let n = cfg.plant.state_dim();
    let dt = cfg.plant.dt;
    let horizon = cfg.mpc.horizon;
    let reference = &cfg.run.reference;
    let variant = cfg.run.variant;
    let initial = est.model().clone();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    rng.set_stream(LOOP_STREAM);
    let mut state = PlantState {
        x: DVector::from_column_slice(&cfg.run.x0),
        t: 0.0,
    };
    let (mut xm, mut y) = measure(&cfg.plant, &state, &mut rng);
    let mut kf = KalmanState::from_config(dict.lift(&xm)?, &cfg.observer)?;
    let steps = sample_count(cfg.run.t_sim, dt);
    records.reserve(steps);
    let mut e_cum = 0.0;

    for k in 0..steps {
        let t = k as f64 * dt;
        *t_out = t;
        kf.correct(&dict, y)?;
        let x_hat = kf.estimate_state(&dict)?;

        let ctrl_model = if variant.adapts_controller() { est.model() } else { &initial };
        let window = reference.window(t, dt, horizon, n);
        let u = solve_mpc(ctrl_model, &cfg.mpc, &kf.psi_hat, &window)?.u0;

        let plant_now = apply_schedule(&cfg.plant, &cfg.schedule, t)?;
        let next = step_plant(&plant_now, &state, &u)?;

        let obs_model = if variant.adapts_observer() { est.model() } else { &initial };
        kf.predict(obs_model, &u)?;

        let (xm_next, y_next) = measure(&plant_now, &next, &mut rng);
        let report = est.step(&xm, &u, &xm_next)?;

        let w = reference.state(t, n);
        e_cum += (&w - &state.x).norm_squared();
        let record = StepRecord {
            t,
            x: state.x.clone(),
            x_meas: xm,
            x_hat,
            u,
            w,
            lambda: report.lambda,
            trace_gamma: report.trace_gamma,
            updated: report.updated,
            e_post: report.e_post,
            window_error: report.window_error,
            e_cum,
        };
        inspect(&LoopView {
            k,
            record: &record,
            controller_model: if variant.adapts_controller() { est.model() } else { &initial },
            observer_model: if variant.adapts_observer() { est.model() } else { &initial },
            estimator: est,
        });
        records.push(record);
        state = next;
        xm = xm_next;
        y = y_next;
    }
    Ok(())
}

/// Final cumulated squared tracking error.
pub fn compute_metric(records: &[StepRecord]) -> Result<f64> {
    records.last().map(|r| r.e_cum).ok_or(Error::EmptyTrace)
}

/// `sum_m ||w(t_m)||^2`, the normaliser of the comparison table.
pub fn reference_energy(records: &[StepRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(records.iter().map(|r| r.w.norm_squared()).sum())
}

pub fn trace_header(n: usize, p: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for prefix in ["x", "xmeas", "xhat"] {
        cols.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    cols.extend((1..=p).map(|i| format!("u{i}")));
    cols.extend((1..=n).map(|i| format!("w{i}")));
    for c in ["lambda", "trace_gamma", "updated", "e_post", "window_error", "e_cum"] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

/// Trace CSV with 17 significant digits and LF line endings.
pub fn write_trace_csv<W: Write>(records: &[StepRecord], mut out: W) -> Result<()> {
    let (n, p) = records.first().map_or((0, 0), |r| (r.x.len(), r.u.len()));
    writeln!(out, "{}", trace_header(n, p))?;
    let mut line = String::new();
    for r in records {
        line.clear();
        line.push_str(&format_f64(r.t));
        for v in r.x.iter().chain(&r.x_meas).chain(&r.x_hat).chain(&r.u).chain(&r.w) {
            line.push(',');
            line.push_str(&format_f64(*v));
        }
        for v in [r.lambda, r.trace_gamma] {
            line.push(',');
            line.push_str(&format_f64(v));
        }
        line.push_str(if r.updated { ",1" } else { ",0" });
        for v in [r.e_post, r.window_error, r.e_cum] {
            line.push(',');
            line.push_str(&format_f64(v));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::ChangeSchedule;

    fn short(t_sim: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.run.t_sim = t_sim;
        cfg.run.training.duration = 5.0;
        cfg
    }

    #[test]
    fn record_count_and_monotone_cost() {
        let mut cfg = short(0.01);
        cfg.plant.dt = 1e-3;
        cfg.plant.substeps = 1;
        let recs = run_closed_loop(&cfg).unwrap();
        assert_eq!(recs.len(), 10);
        assert!(recs.windows(2).all(|w| w[1].e_cum >= w[0].e_cum));
    }

    #[test]
    fn metric_rules() {
        assert_eq!(compute_metric(&[]), Err(Error::EmptyTrace));
        let v = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
        let rec = StepRecord {
            t: 0.0,
            x: v(0.0, 0.0),
            x_meas: v(0.0, 0.0),
            x_hat: v(0.0, 0.0),
            u: DVector::zeros(1),
            w: v(2.0, 0.0),
            lambda: 1.0,
            trace_gamma: 1.0,
            updated: false,
            e_post: 0.0,
            window_error: 0.0,
            e_cum: 4.0,
        };
        assert_eq!(compute_metric(std::slice::from_ref(&rec)).unwrap(), 4.0);
        assert_eq!(reference_energy(&[rec]).unwrap(), 4.0);
    }

    #[test]
    fn zero_excitation_is_degenerate() {
        let mut cfg = short(1.0);
        cfg.run.training.amplitudes = vec![0.0];
        cfg.run.training.frequencies = vec![1.0];
        cfg.run.training.noise = 0.0;
        cfg.plant.noise_x = 0.0;
        let data = generate_training_data(&cfg).unwrap();
        assert!(data.x.iter().chain(data.x_next.iter()).all(|v| *v == 0.0));
        let err = crate::edmd::fit(&data, &cfg.dictionary().unwrap());
        assert!(matches!(err, Err(Error::RankDeficientRegressor { .. })));
        assert!(matches!(
            initial_estimator(&cfg),
            Err(Error::RankDeficientRegressor { .. })
        ));
    }

    #[test]
    fn training_data_is_seeded() {
        let cfg = short(1.0);
        assert_eq!(generate_training_data(&cfg).unwrap(), generate_training_data(&cfg).unwrap());
        let mut other = cfg.clone();
        other.run.seed += 1;
        assert_ne!(generate_training_data(&cfg).unwrap(), generate_training_data(&other).unwrap());
    }

    #[test]
    fn csv_shape() {
        let mut cfg = short(0.05);
        cfg.schedule = ChangeSchedule::default();
        let recs = run_closed_loop(&cfg).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x1,x2,xmeas1,xmeas2,xhat1,xhat2,u1,w1,w2,lambda,trace_gamma,updated,e_post,window_error,e_cum"
        );
        assert_eq!(lines.count(), 5);
    }
}
