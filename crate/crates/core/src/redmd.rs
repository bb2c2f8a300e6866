//! Recursive EDMD with forgetting.
//!
//! The estimator keeps the lifted model `[K, B]` together with the regressor
//! covariance `Gamma = ([Psi(X);U][Psi(X);U]^T)^{-1}` and refreshes both with
//! a rank-one update per sample:
//!
//! ```text
//! gamma_k  = phi^T Gamma / (phi^T Gamma phi + lambda)
//! [K, B]  += (Psi(x_{k+1}) - [K, B] phi) gamma_k
//! Gamma    = (Gamma - (Gamma phi) gamma_k) / lambda
//! ```
//!
//! where `phi = [Psi(x_k); u_k]`. With `lambda = 1` and `Gamma` initialised
//! from the exact Gram inverse this reproduces the batch fit on all data seen
//! so far. On top of the core recursion the estimator implements:
//!
//! * update gating: the model is only touched while the windowed one-step
//!   prediction error stays at or above `eps_low`;
//! * a variable forgetting factor driven by the output prediction error;
//! * a constant-trace bound on `Gamma` against covariance windup.

use nalgebra::DVector;

use crate::edmd::{self, KoopmanModel, SnapshotSet};
use crate::error::{Error, Result};
use crate::matops::{self, Matrix};
use crate::observables::{LiftedVector, ObservableDictionary};

/// The stacked regressor `[Psi(x_k); u_k]`.
pub type Regressor = DVector<f64>;

/// How `Gamma_0` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaInit {
    /// Inverse of the training regressor Gram.
    FromData,
    /// `delta * I`, independent of the data.
    Diagonal(f64),
}

/// Tuning of the recursive estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RedmdConfig {
    /// Initial (and, with `variable_lambda = false`, fixed) forgetting factor.
    pub lambda0: f64,
    pub lambda_min: f64,
    pub variable_lambda: bool,
    /// Length of the gating window.
    pub m_op: usize,
    /// Updates happen only while the window error is `>= eps_low`.
    pub eps_low: f64,
    /// Window errors `>= eps_high` multiply `Sigma_0` by `mu_sigma` for one step.
    pub eps_high: f64,
    pub n0: f64,
    pub mu_sigma: f64,
    /// `tr(Gamma_max) = trace_max_factor * tr(Gamma_0)`; `None` disables the bound.
    pub trace_max_factor: Option<f64>,
    pub gamma_init: GammaInit,
    /// Per-state normalisation of the window error. Empty means all ones.
    pub state_scales: Vec<f64>,
    /// Lower bound on the error variance estimate.
    pub sigma_floor: f64,
    /// Ridge term added to the training Gram for the offline fit (and so
    /// to `Gamma_0^-1` with [`GammaInit::FromData`]).
    pub ridge: f64,
}

impl Default for RedmdConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda_min: 0.9,
            variable_lambda: true,
            m_op: 50,
            eps_low: 1e-2,
            eps_high: 1e-1,
            n0: 100.0,
            mu_sigma: 10.0,
            trace_max_factor: Some(10.0),
            gamma_init: GammaInit::FromData,
            state_scales: Vec::new(),
            sigma_floor: 1e-8,
            ridge: 0.0,
        }
    }
}

impl RedmdConfig {
    /// Plain recursive least squares: fixed `lambda`, no gating, no trace
    /// bound. With `lambda = 1` this is the exact batch recursion.
    pub fn plain_rls(lambda: f64) -> Self {
        Self {
            lambda0: lambda,
            lambda_min: lambda.min(1.0),
            variable_lambda: false,
            m_op: 1,
            eps_low: 0.0,
            eps_high: f64::INFINITY,
            trace_max_factor: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda_min > 0.0 && self.lambda_min <= 1.0) {
            return bad(format!("lambda_min must be in (0, 1], got {}", self.lambda_min));
        }
        if !(self.lambda0 >= self.lambda_min && self.lambda0 <= 1.0) {
            return bad(format!("lambda0 must be in [lambda_min, 1], got {}", self.lambda0));
        }
        if self.m_op == 0 {
            return bad("m_op must be >= 1".into());
        }
        if !(self.eps_low >= 0.0) || !(self.eps_high >= self.eps_low) {
            return bad(format!(
                "need 0 <= eps_low <= eps_high, got {} / {}",
                self.eps_low, self.eps_high
            ));
        }
        if !(self.n0 > 0.0) || !(self.mu_sigma > 1.0) {
            return bad("n0 must be > 0 and mu_sigma > 1".into());
        }
        if let Some(f) = self.trace_max_factor {
            if !(f > 0.0) {
                return bad(format!("trace_max_factor must be > 0, got {f}"));
            }
        }
        if let GammaInit::Diagonal(d) = self.gamma_init {
            if !(d > 0.0) {
                return bad(format!("diagonal gamma_init must be > 0, got {d}"));
            }
        }
        if self.state_scales.iter().any(|s| !(*s > 0.0)) {
            return bad("state_scales must be positive".into());
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be > 0".into());
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        Ok(())
    }
}

/// Which branch of the per-sample algorithm ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPhase {
    /// Fewer than `m_op` samples collected: unconditional update with `lambda0`.
    WarmUp,
    /// Window error above `eps_low`: gated update.
    Updated,
    /// Window error below `eps_low`: nothing changed.
    Skipped,
}

/// Outcome of one [`RecursiveEstimator::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub updated: bool,
    pub phase: StepPhase,
    /// Forgetting factor after this step.
    pub lambda: f64,
    pub trace_gamma: f64,
    /// Output prediction error of the model in force before this step.
    pub e_post: f64,
    /// `+inf` during warm-up.
    pub window_error: f64,
    pub trace_bound_applied: bool,
}

// Fixed-capacity ring of (x_k, u_k, x_{k+1}) transitions.
#[derive(Debug, Clone)]
struct TransitionRing {
    n: usize,
    p: usize,
    capacity: usize,
    data: Vec<f64>,
    head: usize,
    len: usize,
}

impl TransitionRing {
    fn new(n: usize, p: usize, capacity: usize) -> Self {
        Self {
            n,
            p,
            capacity,
            data: vec![0.0; capacity * (2 * n + p)],
            head: 0,
            len: 0,
        }
    }

    fn stride(&self) -> usize {
        2 * self.n + self.p
    }

    fn push(&mut self, x: &[f64], u: &[f64], x_next: &[f64]) {
        let s = self.stride();
        let slot = &mut self.data[self.head * s..(self.head + 1) * s];
        slot[..self.n].copy_from_slice(x);
        slot[self.n..self.n + self.p].copy_from_slice(u);
        slot[self.n + self.p..].copy_from_slice(x_next);
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64], &[f64])> {
        let s = self.stride();
        let start = (self.head + self.capacity - self.len) % self.capacity;
        (0..self.len).map(move |i| {
            let idx = (start + i) % self.capacity;
            let slot = &self.data[idx * s..(idx + 1) * s];
            (
                &slot[..self.n],
                &slot[self.n..self.n + self.p],
                &slot[self.n + self.p..],
            )
        })
    }
}

// Fixed-capacity ring of scalars with an unbiased variance.
#[derive(Debug, Clone)]
struct ScalarRing {
    data: Vec<f64>,
    head: usize,
    len: usize,
}

impl ScalarRing {
    fn new(capacity: usize) -> Self {
        Self {
            data: vec![0.0; capacity],
            head: 0,
            len: 0,
        }
    }

    fn push(&mut self, v: f64) {
        let cap = self.data.len();
        self.data[self.head] = v;
        self.head = (self.head + 1) % cap;
        self.len = (self.len + 1).min(cap);
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let cap = self.data.len();
        let start = (self.head + cap - self.len) % cap;
        (0..self.len).map(move |i| self.data[(start + i) % cap])
    }

    fn variance(&self) -> f64 {
        if self.len < 2 {
            return 0.0;
        }
        let n = self.len as f64;
        let mean = self.values().sum::<f64>() / n;
        self.values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    }
}

/// Raw variable forgetting factor
/// `1 - (1 - phi^T gamma^T) e_post^2 / Sigma_0`, before clamping.
pub fn variable_forgetting(sigma0: f64, phi_gamma: f64, e_post: f64) -> f64 {
    1.0 - (1.0 - phi_gamma) * e_post * e_post / sigma0
}

/// Online-adaptive Koopman model. Single writer: [`step`](Self::step) mutates
/// the estimator; consumers take model snapshots by value.
#[derive(Debug, Clone)]
pub struct RecursiveEstimator {
    model: KoopmanModel,
    gamma: Matrix,
    lambda: f64,
    sigma0: f64,
    sigma_e: f64,
    trace_max: Option<f64>,
    cfg: RedmdConfig,
    scales: Vec<f64>,
    buffer: TransitionRing,
    errors: ScalarRing,
    updated_last_step: bool,
    // scratch
    phi: DVector<f64>,
    psi_next: DVector<f64>,
    lift_buf: DVector<f64>,
    gamma_phi: DVector<f64>,
    gain: DVector<f64>,
    innovation: DVector<f64>,
}

impl RecursiveEstimator {
    /// Fit `[K_0, B_0]` offline and choose `Gamma_0` per `cfg.gamma_init`.
    pub fn init_from_batch(
        snapshots: &SnapshotSet,
        dict: &ObservableDictionary,
        cfg: RedmdConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let dim = dict.lifted_dim() + snapshots.input_dim();
        let (model, gamma0) = match cfg.gamma_init {
            GammaInit::FromData => {
                let model = edmd::fit_regularized(snapshots, dict, cfg.ridge)?;
                let phi = edmd::regressor_matrix(snapshots, dict)?;
                let gram = &phi * phi.transpose() + Matrix::identity(dim, dim) * cfg.ridge;
                let gamma0 = matops::spd_inverse(&gram, matops::GRAM_CONDITION_LIMIT).map_err(|e| {
                    match e {
                        Error::SingularGram { cond } => Error::RankDeficientRegressor { cond },
                        other => other,
                    }
                })?;
                (model, gamma0)
            }
            GammaInit::Diagonal(delta) => {
                let model = match edmd::fit_regularized(snapshots, dict, cfg.ridge) {
                    Ok(m) => m,
                    Err(Error::RankDeficientRegressor { .. }) => edmd::fit_svd(snapshots, dict)?,
                    Err(e) => return Err(e),
                };
                (model, Matrix::identity(dim, dim) * delta)
            }
        };
        Self::from_model(model, gamma0, cfg)
    }

    /// Start from a given model and covariance.
    pub fn from_model(model: KoopmanModel, gamma0: Matrix, cfg: RedmdConfig) -> Result<Self> {
        cfg.validate()?;
        let big_n = model.lifted_dim();
        let p = model.input_dim();
        let n = model.dict.state_dim();
        if gamma0.shape() != (big_n + p, big_n + p) {
            return Err(Error::DimensionMismatch {
                context: "Gamma_0 shape",
                expected: big_n + p,
                actual: gamma0.nrows(),
            });
        }
        let scales = if cfg.state_scales.is_empty() {
            vec![1.0; n]
        } else if cfg.state_scales.len() == n {
            cfg.state_scales.clone()
        } else {
            return Err(Error::DimensionMismatch {
                context: "state_scales length",
                expected: n,
                actual: cfg.state_scales.len(),
            });
        };
        let gamma = matops::symmetrize_unchecked(&gamma0);
        check_pd(&gamma)?;
        let trace_max = cfg.trace_max_factor.map(|f| f * gamma.trace());
        Ok(Self {
            gamma,
            lambda: cfg.lambda0,
            sigma0: cfg.sigma_floor * cfg.n0,
            sigma_e: 0.0,
            trace_max,
            scales,
            buffer: TransitionRing::new(n, p, cfg.m_op),
            errors: ScalarRing::new(cfg.m_op),
            updated_last_step: false,
            phi: DVector::zeros(big_n + p),
            psi_next: DVector::zeros(big_n),
            lift_buf: DVector::zeros(big_n),
            gamma_phi: DVector::zeros(big_n + p),
            gain: DVector::zeros(big_n + p),
            innovation: DVector::zeros(big_n),
            cfg,
            model,
        })
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `Sigma_0` used by the most recent forgetting-factor update.
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Error variance estimate behind the most recent `Sigma_0`.
    pub fn sigma_e(&self) -> f64 {
        self.sigma_e
    }

    pub fn trace_max(&self) -> Option<f64> {
        self.trace_max
    }

    pub fn config(&self) -> &RedmdConfig {
        &self.cfg
    }

    pub fn updated_last_step(&self) -> bool {
        self.updated_last_step
    }

    /// Number of transitions currently held in the gating window.
    pub fn buffered(&self) -> usize {
        self.buffer.len
    }

    /// Override the forgetting factor (clamped to `[lambda_min, 1]`).
    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda.clamp(self.cfg.lambda_min, 1.0);
    }

    /// Replace `Gamma` (symmetrised).
    pub fn set_gamma(&mut self, gamma: Matrix) -> Result<()> {
        if gamma.shape() != self.gamma.shape() {
            return Err(Error::DimensionMismatch {
                context: "Gamma shape",
                expected: self.gamma.nrows(),
                actual: gamma.nrows(),
            });
        }
        self.gamma = matops::symmetrize_unchecked(&gamma);
        Ok(())
    }

    pub fn regressor(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Regressor> {
        let big_n = self.model.lifted_dim();
        self.model.check_input(u)?;
        let psi = self.model.dict.lift(x)?;
        let mut phi = DVector::zeros(big_n + u.len());
        phi.rows_mut(0, big_n).copy_from(&psi);
        phi.rows_mut(big_n, u.len()).copy_from(u);
        Ok(phi)
    }

    fn check_phi(&self, phi: &Regressor) -> Result<()> {
        if phi.len() != self.gamma.nrows() {
            return Err(Error::DimensionMismatch {
                context: "regressor length",
                expected: self.gamma.nrows(),
                actual: phi.len(),
            });
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regressor"));
        }
        Ok(())
    }

    /// Correction vector `gamma_k = phi^T Gamma / (phi^T Gamma phi + lambda)`,
    /// returned as a column holding the entries of the row vector.
    pub fn correction_vector(&self, phi: &Regressor) -> Result<DVector<f64>> {
        self.check_phi(phi)?;
        let gp = &self.gamma * phi;
        let denom = phi.dot(&gp) + self.lambda;
        Ok(gp / denom)
    }

    /// `[K, B] += innovation * gamma_k` with
    /// `innovation = psi_next - [K, B] phi`. Returns the innovation.
    pub fn apply_update(
        &mut self,
        phi: &Regressor,
        psi_next: &LiftedVector,
        gain: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_phi(phi)?;
        let big_n = self.model.lifted_dim();
        if psi_next.len() != big_n || gain.len() != phi.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_update operands",
                expected: big_n,
                actual: psi_next.len(),
            });
        }
        let innovation = psi_next - self.predict_phi(phi);
        self.add_correction(&innovation, gain);
        Ok(innovation)
    }

    /// `Gamma = (Gamma - (Gamma phi) gamma_k) / lambda`, symmetrised.
    pub fn update_covariance(&mut self, phi: &Regressor, gain: &DVector<f64>) -> Result<()> {
        self.check_phi(phi)?;
        let gp = &self.gamma * phi;
        self.gamma.ger(-1.0, &gp, gain, 1.0);
        self.gamma /= self.lambda;
        matops::symmetrize_in_place(&mut self.gamma);
        check_pd(&self.gamma)
    }

    /// Windowed one-step prediction error: the largest normalised deviation
    /// between measured successors and one-step predictions from the
    /// measured predecessors. `+inf` until the window is full.
    pub fn prediction_error_window(&self) -> f64 {
        if self.buffer.len < self.cfg.m_op {
            return f64::INFINITY;
        }
        let n = self.model.dict.state_dim();
        let big_n = self.model.lifted_dim();
        let mut lifted = DVector::zeros(big_n);
        let mut worst: f64 = 0.0;
        for (x, u, x_next) in self.buffer.iter() {
            // lift cannot fail: samples were validated on push
            self.model.dict.lift_into(x, &mut lifted).expect("buffered sample");
            for (i, (xn, scale)) in x_next.iter().zip(&self.scales).enumerate().take(n) {
                let mut pred = 0.0;
                for j in 0..big_n {
                    pred += self.model.k[(i, j)] * lifted[j];
                }
                for (j, uj) in u.iter().enumerate() {
                    pred += self.model.b[(i, j)] * uj;
                }
                let err = ((xn - pred) / scale).abs();
                worst = worst.max(err);
            }
        }
        worst
    }

    /// Next forgetting factor from the output error `e_post`, the current
    /// `Sigma_0` and the correction vector of this step, clamped to
    /// `[lambda_min, 1]`.
    pub fn update_lambda(&self, phi: &Regressor, gain: &DVector<f64>, e_post: f64) -> f64 {
        let raw = variable_forgetting(self.sigma0, phi.dot(gain), e_post);
        if raw.is_nan() {
            return self.cfg.lambda_min;
        }
        raw.clamp(self.cfg.lambda_min, 1.0)
    }

    /// Scale `Gamma` down to `tr(Gamma_max)` when its trace exceeds it.
    /// Returns whether scaling happened.
    pub fn enforce_trace_bound(&mut self) -> bool {
        let Some(max) = self.trace_max else {
            return false;
        };
        let tr = self.gamma.trace();
        if tr > max {
            self.gamma *= max / tr;
            true
        } else {
            false
        }
    }

    /// One sample of the adaptive identification loop.
    pub fn step(
        &mut self,
        x_k: &DVector<f64>,
        u_k: &DVector<f64>,
        x_next: &DVector<f64>,
    ) -> Result<StepReport> {
        let big_n = self.model.lifted_dim();
        let p = self.model.input_dim();
        self.model.check_input(u_k)?;
        if u_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input sample"));
        }
        self.model.dict.lift_into(x_k.as_slice(), &mut self.lift_buf)?;
        self.model.dict.lift_into(x_next.as_slice(), &mut self.psi_next)?;
        self.phi.rows_mut(0, big_n).copy_from(&self.lift_buf);
        self.phi.rows_mut(big_n, p).copy_from(u_k);

        // innovation under the model in force before this sample
        self.innovation.copy_from(&self.psi_next);
        self.innovation.gemv(-1.0, &self.model.k, &self.lift_buf, 1.0);
        self.innovation.gemv(-1.0, &self.model.b, u_k, 1.0);
        let e_post = self.innovation[self.model.dict.output_index()];

        self.buffer.push(x_k.as_slice(), u_k.as_slice(), x_next.as_slice());
        self.errors.push(e_post);

        let window_error = self.prediction_error_window();
        let mut bound_applied = false;
        let phase = if self.buffer.len < self.cfg.m_op {
            self.rank_one_update()?;
            bound_applied |= self.enforce_trace_bound();
            StepPhase::WarmUp
        } else if window_error >= self.cfg.eps_low {
            bound_applied |= self.enforce_trace_bound();
            self.sigma_e = self.errors.variance().max(self.cfg.sigma_floor);
            self.sigma0 = self.sigma_e * self.cfg.n0;
            if window_error >= self.cfg.eps_high {
                self.sigma0 *= self.cfg.mu_sigma;
                log::debug!(
                    "window error {window_error:.3e} >= eps_high: Sigma_0 boosted to {:.3e}",
                    self.sigma0
                );
            }
            self.rank_one_update()?;
            bound_applied |= self.enforce_trace_bound();
            if self.cfg.variable_lambda {
                self.lambda = self.update_lambda(&self.phi, &self.gain, e_post);
            }
            StepPhase::Updated
        } else {
            StepPhase::Skipped
        };
        self.updated_last_step = phase != StepPhase::Skipped;
        Ok(StepReport {
            updated: self.updated_last_step,
            phase,
            lambda: self.lambda,
            trace_gamma: self.gamma.trace(),
            e_post,
            window_error,
            trace_bound_applied: bound_applied,
        })
    }

    // correction vector, model update and covariance downdate on the scratch
    // regressor; `self.innovation` already holds psi_next - [K, B] phi.
    fn rank_one_update(&mut self) -> Result<()> {
        self.gamma_phi.gemv(1.0, &self.gamma, &self.phi, 0.0);
        let denom = self.phi.dot(&self.gamma_phi) + self.lambda;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::CovarianceNotPD);
        }
        self.gain.copy_from(&self.gamma_phi);
        self.gain /= denom;

        let big_n = self.model.lifted_dim();
        let p = self.model.input_dim();
        self.model
            .k
            .ger(1.0, &self.innovation, &self.gain.rows(0, big_n), 1.0);
        self.model
            .b
            .ger(1.0, &self.innovation, &self.gain.rows(big_n, p), 1.0);

        self.gamma.ger(-1.0, &self.gamma_phi, &self.gain, 1.0);
        self.gamma /= self.lambda;
        matops::symmetrize_in_place(&mut self.gamma);
        check_pd(&self.gamma)?;
        if self.model.k.iter().chain(self.model.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model after update"));
        }
        Ok(())
    }

    fn predict_phi(&self, phi: &Regressor) -> DVector<f64> {
        let big_n = self.model.lifted_dim();
        &self.model.k * phi.rows(0, big_n) + &self.model.b * phi.rows(big_n, self.model.input_dim())
    }

    fn add_correction(&mut self, innovation: &DVector<f64>, gain: &DVector<f64>) {
        let big_n = self.model.lifted_dim();
        let p = self.model.input_dim();
        self.model.k.ger(1.0, innovation, &gain.rows(0, big_n), 1.0);
        self.model.b.ger(1.0, innovation, &gain.rows(big_n, p), 1.0);
    }
}

fn check_pd(gamma: &Matrix) -> Result<()> {
    for i in 0..gamma.nrows() {
        let d = gamma[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::CovarianceNotPD);
        }
    }
    if cfg!(debug_assertions) && gamma.clone().cholesky().is_none() {
        return Err(Error::CovarianceNotPD);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edmd::collect_snapshots;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_estimator(k: f64, b: f64, gamma: f64, cfg: RedmdConfig) -> RecursiveEstimator {
        let dict = ObservableDictionary::identity(1, 0).unwrap();
        let model = KoopmanModel::new(
            Matrix::from_element(1, 1, k),
            Matrix::from_element(1, 1, b),
            dict,
            1.0,
        )
        .unwrap();
        RecursiveEstimator::from_model(model, Matrix::identity(2, 2) * gamma, cfg).unwrap()
    }

    fn scalar_no_input(k: f64, gamma: f64, lambda: f64) -> RecursiveEstimator {
        let dict = ObservableDictionary::identity(1, 0).unwrap();
        let model =
            KoopmanModel::new(Matrix::from_element(1, 1, k), Matrix::zeros(1, 0), dict, 1.0).unwrap();
        RecursiveEstimator::from_model(
            model,
            Matrix::from_element(1, 1, gamma),
            RedmdConfig::plain_rls(lambda),
        )
        .unwrap()
    }

    #[test]
    fn correction_vector_scalar() {
        let est = scalar_no_input(0.5, 2.0, 1.0);
        let g = est.correction_vector(&v(&[1.0])).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15);
        let zero = est.correction_vector(&v(&[0.0])).unwrap();
        assert_eq!(zero[0], 0.0);
        assert!(est.correction_vector(&v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn covariance_scalar_woodbury_consistency() {
        let mut est = scalar_no_input(0.5, 2.0, 1.0);
        let phi = v(&[1.0]);
        let g = est.correction_vector(&phi).unwrap();
        est.update_covariance(&phi, &g).unwrap();
        assert!((est.gamma()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((est.gamma()[(0, 0)] - 1.0 / (0.5 + 1.0)).abs() < 1e-15);

        let mut est = scalar_no_input(0.5, 2.0, 1.0);
        let zero = v(&[0.0]);
        let g = est.correction_vector(&zero).unwrap();
        est.update_covariance(&zero, &g).unwrap();
        assert_eq!(est.gamma()[(0, 0)], 2.0);
    }

    #[test]
    fn apply_update_fixed_points() {
        let mut est = scalar_estimator(0.8, 0.3, 1.0, RedmdConfig::plain_rls(1.0));
        let phi = v(&[1.5, -0.5]);
        let exact = v(&[0.8 * 1.5 + 0.3 * -0.5]);
        let g = est.correction_vector(&phi).unwrap();
        let innov = est.apply_update(&phi, &exact, &g).unwrap();
        assert!(innov[0].abs() < 1e-15);
        assert_eq!(est.model().k[(0, 0)], 0.8);
        assert_eq!(est.model().b[(0, 0)], 0.3);

        let zero_gain = v(&[0.0, 0.0]);
        est.apply_update(&phi, &v(&[100.0]), &zero_gain).unwrap();
        assert_eq!(est.model().k[(0, 0)], 0.8);
    }

    #[test]
    fn enforce_trace_bound_cases() {
        let cfg = RedmdConfig {
            trace_max_factor: Some(1.0),
            ..RedmdConfig::plain_rls(1.0)
        };
        let mut est = scalar_estimator(0.5, 0.1, 1.0, cfg);
        // tr(Gamma_max) = 2
        est.set_gamma(Matrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0])).unwrap();
        let before = est.gamma().clone();
        assert!(est.enforce_trace_bound());
        assert!((est.gamma().trace() - 2.0).abs() < 1e-15);
        assert!((est.gamma() - &before * 0.5).amax() < 1e-15);

        est.set_gamma(Matrix::identity(2, 2) * 0.5).unwrap();
        assert!(!est.enforce_trace_bound());
        assert_eq!(est.gamma(), &(Matrix::identity(2, 2) * 0.5));
    }

    #[test]
    fn lambda_rule() {
        assert_eq!(variable_forgetting(3.0, 0.2, 0.0), 1.0);
        assert_eq!(variable_forgetting(1.0, 0.5, 1.0), 0.5);
        let cfg = RedmdConfig {
            lambda_min: 0.1,
            ..RedmdConfig::default()
        };
        let est = scalar_estimator(0.5, 0.1, 1.0, cfg);
        // Sigma_0 = floor * n0 initially; e_post = 0 keeps lambda at 1
        let phi = v(&[1.0, 1.0]);
        let g = est.correction_vector(&phi).unwrap();
        assert_eq!(est.update_lambda(&phi, &g, 0.0), 1.0);
        assert_eq!(est.update_lambda(&phi, &g, 1e6), 0.1);
    }

    #[test]
    fn window_warm_up_and_exact_model() {
        let cfg = RedmdConfig {
            m_op: 5,
            eps_low: 1e-9,
            ..RedmdConfig::default()
        };
        let mut est = scalar_estimator(0.9, 0.5, 1.0, cfg);
        assert_eq!(est.prediction_error_window(), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = 1.0;
        for k in 0..30 {
            let u: f64 = rng.random_range(-1.0..1.0);
            let next = 0.9 * x + 0.5 * u;
            let r = est.step(&v(&[x]), &v(&[u]), &v(&[next])).unwrap();
            if k < 4 {
                assert_eq!(r.phase, StepPhase::WarmUp);
                assert!(r.updated);
                assert_eq!(r.window_error, f64::INFINITY);
            } else {
                assert_eq!(r.phase, StepPhase::Skipped);
                assert!(!r.updated);
                assert!(r.window_error < 1e-12);
            }
            x = next;
        }
        assert_eq!(est.model().k[(0, 0)], 0.9);
        assert_eq!(est.model().b[(0, 0)], 0.5);
    }

    #[test]
    fn window_error_two_step_oracle() {
        // model K = 0.9, data from 0.8, x0 = 1, no input, window of two
        let dict = ObservableDictionary::identity(1, 0).unwrap();
        let model =
            KoopmanModel::new(Matrix::from_element(1, 1, 0.9), Matrix::zeros(1, 0), dict, 1.0).unwrap();
        let cfg = RedmdConfig {
            m_op: 2,
            eps_low: 1e9, // never update, so the model stays at 0.9
            eps_high: 1e9,
            ..RedmdConfig::default()
        };
        let mut est = RecursiveEstimator::from_model(model, Matrix::from_element(1, 1, 1.0), cfg).unwrap();
        let xs = [1.0, 0.8, 0.64, 0.512, 0.4096];
        // warm-up update on the first sample changes the model; reset it after
        est.step(&v(&[xs[0]]), &v(&[]), &v(&[xs[1]])).unwrap();
        let k_after = est.model().k[(0, 0)];
        let r = est.step(&v(&[xs[1]]), &v(&[]), &v(&[xs[2]])).unwrap();
        let oracle = [(xs[0], xs[1]), (xs[1], xs[2])]
            .iter()
            .map(|(a, b): &(f64, f64)| (b - k_after * a).abs())
            .fold(0.0, f64::max);
        assert!((r.window_error - oracle).abs() < 1e-15);
        assert!(!r.updated);
        let r = est.step(&v(&[xs[2]]), &v(&[]), &v(&[xs[3]])).unwrap();
        let oracle = [(xs[1], xs[2]), (xs[2], xs[3])]
            .iter()
            .map(|(a, b): &(f64, f64)| (b - k_after * a).abs())
            .fold(0.0, f64::max);
        assert!((r.window_error - oracle).abs() < 1e-15);
    }

    #[test]
    fn init_from_batch_scalar_closed_form() {
        let mut x = 1.0;
        let traj: Vec<_> = (0..20)
            .map(|_| {
                let s = (v(&[x]), v(&[]));
                x *= 0.9;
                s
            })
            .collect();
        let snaps = collect_snapshots(&traj, 1.0).unwrap();
        let dict = ObservableDictionary::identity(1, 0).unwrap();
        let est = RecursiveEstimator::init_from_batch(&snaps, &dict, RedmdConfig::default()).unwrap();
        assert!((est.model().k[(0, 0)] - 0.9).abs() < 1e-14);
        let sum_sq: f64 = snaps.x.iter().map(|v| v * v).sum();
        assert!((est.gamma()[(0, 0)] - 1.0 / sum_sq).abs() < 1e-14);

        let diag = RedmdConfig {
            gamma_init: GammaInit::Diagonal(1e3),
            ..RedmdConfig::default()
        };
        let est = RecursiveEstimator::init_from_batch(&snaps, &dict, diag).unwrap();
        assert_eq!(est.gamma(), &(Matrix::identity(1, 1) * 1e3));
    }

    #[test]
    fn config_validation() {
        assert!(RedmdConfig::default().validate().is_ok());
        for bad in [
            RedmdConfig { lambda_min: 0.0, ..Default::default() },
            RedmdConfig { lambda0: 0.5, ..Default::default() },
            RedmdConfig { m_op: 0, ..Default::default() },
            RedmdConfig { eps_high: 0.0, ..Default::default() },
            RedmdConfig { mu_sigma: 1.0, ..Default::default() },
            RedmdConfig { trace_max_factor: Some(0.0), ..Default::default() },
            RedmdConfig { gamma_init: GammaInit::Diagonal(-1.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn ring_buffer_wraps() {
        let mut r = TransitionRing::new(1, 1, 3);
        for i in 0..5 {
            let f = i as f64;
            r.push(&[f], &[10.0 * f], &[f + 1.0]);
        }
        let xs: Vec<f64> = r.iter().map(|(x, _, _)| x[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        let mut s = ScalarRing::new(3);
        for v in [1.0, 2.0, 3.0, 4.0] {
            s.push(v);
        }
        assert!((s.variance() - 1.0).abs() < 1e-15);
    }
}
