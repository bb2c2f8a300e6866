//! Self-checks exposed through `koopman-adapt oracle <name>`. Each compares a
//! library routine against an independently computed reference.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{mpc_gain_limit, MpcConfig};
use crate::edmd::{self, KoopmanModel, SnapshotSet};
use crate::error::{Error, Result};
use crate::matops::{self, Matrix};
use crate::observables::{DictionaryFamily, ObservableDictionary};
use crate::observer::KalmanState;
use crate::redmd::{GammaInit, RecursiveEstimator, RedmdConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    /// Largest error seen, in the oracle's own metric.
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max error {:.3e} over {} cases (tolerance {:.0e}) {}",
            self.name,
            self.max_error,
            self.cases,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub const ORACLE_NAMES: [&str; 6] = [
    "recursive-batch",
    "penrose",
    "woodbury",
    "covariance",
    "kalman-riccati",
    "mpc-lqr",
];

pub fn run_oracle(name: &str) -> Result<OracleReport> {
    match name {
        "recursive-batch" => recursive_batch(20, 200),
        "penrose" => penrose(100),
        "woodbury" => woodbury(100),
        "covariance" => covariance(100),
        "kalman-riccati" => kalman_riccati(),
        "mpc-lqr" => mpc_lqr(),
        other => Err(Error::Config(format!(
            "unknown oracle `{other}`; available: {}",
            ORACLE_NAMES.join(", ")
        ))),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random stable `A` (spectral norm 0.9) and a dictionary with `N <= 10`.
pub fn random_system(rng: &mut ChaCha8Rng) -> Result<(Matrix, Matrix, ObservableDictionary)> {
    let n = rng.random_range(1..=4usize);
    let p = rng.random_range(1..=2usize);
    let mut a = random_matrix(rng, n, n);
    let norm = a.clone().svd(false, false).singular_values.max();
    a *= 0.9 / norm.max(1e-12);
    let b = random_matrix(rng, n, p);
    let family = match rng.random_range(0..3) {
        0 => DictionaryFamily::Identity,
        1 => DictionaryFamily::Trig {
            states: (0..n.min(3)).collect(),
        },
        _ if n <= 3 => DictionaryFamily::Monomial { degree: 2 },
        _ => DictionaryFamily::Identity,
    };
    let dict = ObservableDictionary::from_family(n, &family, 0)?;
    Ok((a, b, dict))
}

/// Trajectory of `x' = tanh(A x + B u)` driven by uniform inputs.
pub fn random_transitions(
    rng: &mut ChaCha8Rng,
    a: &Matrix,
    b: &Matrix,
    len: usize,
) -> Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = a.nrows();
    let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let u = DVector::from_fn(b.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let next = (a * &x + b * &u).map(f64::tanh);
        out.push((x.clone(), u, next.clone()));
        x = next;
    }
    out
}

fn snapshots_of(tr: &[(DVector<f64>, DVector<f64>, DVector<f64>)]) -> Result<SnapshotSet> {
    let n = tr[0].0.len();
    let p = tr[0].1.len();
    let mut x = Matrix::zeros(n, tr.len());
    let mut xn = Matrix::zeros(n, tr.len());
    let mut u = Matrix::zeros(p, tr.len());
    for (j, (a, b, c)) in tr.iter().enumerate() {
        x.set_column(j, a);
        u.set_column(j, b);
        xn.set_column(j, c);
    }
    SnapshotSet::new(x, xn, u, 1.0)
}

/// Plain RLS with `lambda = 1` after `extra` samples against the batch fit
/// on all samples.
pub fn recursive_batch(systems: usize, extra: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut worst: f64 = 0.0;
    for _ in 0..systems {
        let (a, b, dict) = random_system(&mut rng)?;
        let dim = dict.lifted_dim() + b.ncols();
        let tr = random_transitions(&mut rng, &a, &b, 3 * dim + extra);
        let (init, rest) = tr.split_at(3 * dim);
        let mut cfg = RedmdConfig::plain_rls(1.0);
        cfg.gamma_init = GammaInit::FromData;
        let mut est = RecursiveEstimator::init_from_batch(&snapshots_of(init)?, &dict, cfg)?;
        for (x, u, xn) in rest {
            est.step(x, u, xn)?;
        }
        let batch = edmd::fit(&snapshots_of(&tr)?, &dict)?;
        worst = worst.max(matops::relative_frobenius(&est.model().stacked(), &batch.stacked()));
    }
    Ok(OracleReport {
        name: "recursive-batch",
        max_error: worst,
        tolerance: 1e-8,
        cases: systems,
    })
}

/// All four Penrose conditions for `pinv_full_row_rank`, relative.
pub fn penrose(cases: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = rng.random_range(1..=5usize);
        let n = m + rng.random_range(0..=5usize);
        let a = random_matrix(&mut rng, m, n) + Matrix::identity(m, n) * 2.0;
        let x = matops::pinv_full_row_rank(&a)?;
        let axa = &a * &x * &a;
        let xax = &x * &a * &x;
        let ax = &a * &x;
        let xa = &x * &a;
        worst = worst
            .max(matops::relative_frobenius(&axa, &a))
            .max(matops::relative_frobenius(&xax, &x))
            .max(matops::relative_frobenius(&ax.transpose(), &ax))
            .max(matops::relative_frobenius(&xa.transpose(), &xa));
    }
    Ok(OracleReport {
        name: "penrose",
        max_error: worst,
        tolerance: 1e-8,
        cases,
    })
}

/// Woodbury identity against `(A^-1 + B C^-1 D)^-1`, max-abs.
pub fn woodbury(cases: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=6usize);
        let k = rng.random_range(1..=3usize);
        let g = random_matrix(&mut rng, n, n);
        let a = &g * g.transpose() + Matrix::identity(n, n);
        let b = random_matrix(&mut rng, n, k);
        let h = random_matrix(&mut rng, k, k);
        let c = &h * h.transpose() + Matrix::identity(k, k);
        let d = b.transpose();
        let fast = matops::woodbury(&a, &b, &c, &d)?;
        let a_inv = a.clone().try_inverse().ok_or(Error::SingularInner)?;
        let c_inv = c.clone().try_inverse().ok_or(Error::SingularInner)?;
        let direct = (a_inv + &b * c_inv * &d).try_inverse().ok_or(Error::SingularInner)?;
        worst = worst.max((fast - direct).amax());
    }
    Ok(OracleReport {
        name: "woodbury",
        max_error: worst,
        tolerance: 1e-10,
        cases,
    })
}

/// One covariance step at `lambda = 1` against `(Gamma^-1 + phi phi^T)^-1`.
pub fn covariance(cases: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0C0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=4usize);
        let dict = ObservableDictionary::identity(n, 0)?;
        let model = KoopmanModel::new(Matrix::zeros(n, n), Matrix::zeros(n, 1), dict, 1.0)?;
        let g = random_matrix(&mut rng, n + 1, n + 1);
        let gamma = &g * g.transpose() + Matrix::identity(n + 1, n + 1);
        let mut est = RecursiveEstimator::from_model(model, gamma.clone(), RedmdConfig::plain_rls(1.0))?;
        let phi = DVector::from_fn(n + 1, |_, _| rng.random_range(-1.0..1.0));
        let gain = est.correction_vector(&phi)?;
        est.update_covariance(&phi, &gain)?;
        let direct = (gamma.try_inverse().ok_or(Error::CovarianceNotPD)? + &phi * phi.transpose())
            .try_inverse()
            .ok_or(Error::CovarianceNotPD)?;
        worst = worst.max((est.gamma() - direct).amax());
    }
    Ok(OracleReport {
        name: "covariance",
        max_error: worst,
        tolerance: 1e-10,
        cases,
    })
}

/// Steady-state prior covariance of the lifted filter against a plain
/// Riccati iteration.
pub fn kalman_riccati() -> Result<OracleReport> {
    let dict = ObservableDictionary::identity(3, 0)?;
    let k = Matrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.1, 0.8, 0.1, 0.0, 0.05, 0.7]);
    let model = KoopmanModel::new(k.clone(), Matrix::zeros(3, 1), dict.clone(), 1.0)?;
    let q = Matrix::identity(3, 3) * 0.01;
    let r = 0.1;
    let mut kf = KalmanState::new(DVector::zeros(3), Matrix::identity(3, 3), q.clone(), r)?;
    let u = DVector::zeros(1);
    for _ in 0..2000 {
        kf.correct(&dict, 0.0)?;
        kf.predict(&model, &u)?;
    }
    let c = dict.output_row();
    let mut p = Matrix::identity(3, 3);
    for _ in 0..5000 {
        let s = (&c * &p * c.transpose())[(0, 0)] + r;
        let kpc = &k * &p * c.transpose();
        p = &k * &p * k.transpose() + &q - &kpc * kpc.transpose() / s;
    }
    Ok(OracleReport {
        name: "kalman-riccati",
        max_error: matops::relative_frobenius(&kf.p, &p),
        tolerance: 1e-6,
        cases: 1,
    })
}

/// Long-horizon MPC feedback on `x' = 0.9 x + u` against the scalar DARE gain.
pub fn mpc_lqr() -> Result<OracleReport> {
    let (a, b, q, r) = (0.9, 1.0, 1.0, 1.0);
    let dict = ObservableDictionary::identity(1, 0)?;
    let model = KoopmanModel::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, b), dict, 1.0)?;
    let cfg = MpcConfig::diagonal(200, &[q], &[r]);
    let g = mpc_gain_limit(&model, &cfg)?[(0, 0)];
    let mut p = q;
    for _ in 0..10_000 {
        p = q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
    }
    let lqr = a * b * p / (r + b * b * p);
    Ok(OracleReport {
        name: "mpc-lqr",
        max_error: ((g - lqr) / lqr).abs(),
        tolerance: 1e-3,
        cases: 1,
    })
}
