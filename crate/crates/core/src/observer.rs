//! Kalman filter on the lifted state.
//!
//! The filter propagates `psi_hat` with whatever Koopman model it is handed
//! and corrects with the scalar output `y = P_y psi`. Handing it a fresh
//! model each sample is what makes the observer adaptive.

use nalgebra::DVector;

use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::matops::{self, Matrix};
use crate::observables::{LiftedVector, ObservableDictionary};

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverConfig {
    /// Process noise: one entry means `Q = q I`, `N` entries give a
    /// diagonal `Q` over the lifted coordinates.
    pub q: Vec<f64>,
    /// Output noise variance.
    pub r: f64,
    pub joseph: bool,
    /// Re-embed `psi_hat = Psi(P_x psi_hat)` after each correction.
    pub relift_after_correct: bool,
    /// Initial covariance `P_0 = p0 I`.
    pub p0: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            q: vec![1e-6],
            r: 1e-6,
            joseph: true,
            relift_after_correct: false,
            p0: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub psi_hat: LiftedVector,
    pub p: Matrix,
    pub q: Matrix,
    pub r: f64,
    pub joseph: bool,
    pub relift_after_correct: bool,
}

impl KalmanState {
    pub fn new(psi0: LiftedVector, p0: Matrix, q: Matrix, r: f64) -> Result<Self> {
        let big_n = psi0.len();
        for (m, what) in [(&p0, "P_0"), (&q, "Q")] {
            if m.shape() != (big_n, big_n) {
                return Err(Error::DimensionMismatch {
                    context: what,
                    expected: big_n,
                    actual: m.nrows(),
                });
            }
        }
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("R must be > 0, got {r}")));
        }
        Ok(Self {
            psi_hat: psi0,
            p: p0,
            q,
            r,
            joseph: true,
            relift_after_correct: false,
        })
    }

    pub fn from_config(psi0: LiftedVector, cfg: &ObserverConfig) -> Result<Self> {
        let big_n = psi0.len();
        if cfg.q.iter().any(|q| !(*q >= 0.0)) || !(cfg.p0 >= 0.0) {
            return Err(Error::InvalidParameter("observer q and p0 must be >= 0".into()));
        }
        let q = match cfg.q.len() {
            1 => Matrix::identity(big_n, big_n) * cfg.q[0],
            len if len == big_n => Matrix::from_diagonal(&DVector::from_column_slice(&cfg.q)),
            len => {
                return Err(Error::DimensionMismatch {
                    context: "observer q entries",
                    expected: big_n,
                    actual: len,
                })
            }
        };
        let mut kf = Self::new(psi0, Matrix::identity(big_n, big_n) * cfg.p0, q, cfg.r)?;
        kf.joseph = cfg.joseph;
        kf.relift_after_correct = cfg.relift_after_correct;
        Ok(kf)
    }

    /// `psi <- K psi + B u`, `P <- K P K^T + Q`.
    pub fn predict(&mut self, model: &KoopmanModel, u: &DVector<f64>) -> Result<()> {
        self.psi_hat = model.predict_lifted(&self.psi_hat, u)?;
        self.p = matops::symmetrize_unchecked(&(&model.k * &self.p * model.k.transpose() + &self.q));
        Ok(())
    }

    /// Scalar measurement update with `C = P_y`. Returns the innovation.
    pub fn correct(&mut self, dict: &ObservableDictionary, y_meas: f64) -> Result<f64> {
        if self.psi_hat.len() != dict.lifted_dim() {
            return Err(Error::DimensionMismatch {
                context: "observer lifted dimension",
                expected: dict.lifted_dim(),
                actual: self.psi_hat.len(),
            });
        }
        let j = dict.output_index();
        let big_n = self.psi_hat.len();
        let innovation = y_meas - self.psi_hat[j];
        // P C^T is column j of P; C P C^T is P[j][j]
        let pct = self.p.column(j).into_owned();
        let s = pct[j] + self.r;
        let gain = pct / s;
        self.psi_hat += &gain * innovation;

        let mut i_lc = Matrix::identity(big_n, big_n);
        for i in 0..big_n {
            i_lc[(i, j)] -= gain[i];
        }
        let p = if self.joseph {
            &i_lc * &self.p * i_lc.transpose() + &gain * gain.transpose() * self.r
        } else {
            &i_lc * &self.p
        };
        self.p = matops::symmetrize_unchecked(&p);

        if self.relift_after_correct {
            let x = dict.project_state(&self.psi_hat)?;
            self.psi_hat = dict.lift(&x)?;
        }
        if self.psi_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observer estimate"));
        }
        Ok(innovation)
    }

    /// `P_x psi_hat`.
    pub fn estimate_state(&self, dict: &ObservableDictionary) -> Result<DVector<f64>> {
        dict.project_state(&self.psi_hat)
    }
}
