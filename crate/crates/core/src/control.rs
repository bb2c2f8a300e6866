//! Condensed linear MPC on the lifted Koopman predictor.
//!
//! Over a horizon `H` the lifted predictions stack as
//!
//! ```text
//! [Psi_1; ..; Psi_H] = S_psi Psi_0 + S_u [u_0; ..; u_{H-1}]
//! ```
//!
//! with `S_psi` holding `K^i` and `S_u` the block lower-triangular Toeplitz
//! matrix of `K^{i-1-j} B`. Tracking is penalised on the projected states
//! `P_x Psi_i` only, so the decision problem is a dense QP in the inputs:
//! solved exactly without bounds, and by projected gradient with box bounds.

use nalgebra::{DVector, SymmetricEigen};

use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::matops::Matrix;
use crate::observables::LiftedVector;

/// Largest accepted condition number of the condensed Hessian.
pub const HESSIAN_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Tracking weight on projected states (n x n).
    pub q_y: Matrix,
    /// Input weight (p x p), positive definite.
    pub r_u: Matrix,
    /// Multiplies `q_y` on the last stage.
    pub terminal_weight: f64,
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub max_pg_iters: usize,
    pub pg_tol: f64,
}

impl MpcConfig {
    /// Unconstrained controller with diagonal weights.
    pub fn diagonal(horizon: usize, qy: &[f64], ru: &[f64]) -> Self {
        Self {
            horizon,
            q_y: Matrix::from_diagonal(&DVector::from_column_slice(qy)),
            r_u: Matrix::from_diagonal(&DVector::from_column_slice(ru)),
            terminal_weight: 1.0,
            u_min: None,
            u_max: None,
            max_pg_iters: 500,
            pg_tol: 1e-10,
        }
    }

    pub fn is_constrained(&self) -> bool {
        self.u_min.is_some() || self.u_max.is_some()
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("MPC horizon must be >= 1".into()));
        }
        if self.q_y.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "MPC q_y",
                expected: n,
                actual: self.q_y.nrows(),
            });
        }
        if self.r_u.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                context: "MPC r_u",
                expected: p,
                actual: self.r_u.nrows(),
            });
        }
        if p > 0 && self.r_u.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("MPC r_u must be positive definite".into()));
        }
        if !(self.terminal_weight >= 0.0) {
            return Err(Error::InvalidParameter("terminal_weight must be >= 0".into()));
        }
        for bound in [&self.u_min, &self.u_max].into_iter().flatten() {
            if bound.len() != p {
                return Err(Error::DimensionMismatch {
                    context: "MPC input bound",
                    expected: p,
                    actual: bound.len(),
                });
            }
        }
        if let (Some(lo), Some(hi)) = (&self.u_min, &self.u_max) {
            if lo.iter().zip(hi).any(|(l, h)| l > h) {
                return Err(Error::InvalidParameter("u_min must be <= u_max".into()));
            }
        }
        Ok(())
    }

    fn clip(&self, plan: &mut DVector<f64>, p: usize) {
        if p == 0 {
            return;
        }
        for (idx, v) in plan.iter_mut().enumerate() {
            let ch = idx % p;
            if let Some(lo) = &self.u_min {
                *v = v.max(lo[ch]);
            }
            if let Some(hi) = &self.u_max {
                *v = v.min(hi[ch]);
            }
        }
    }
}

/// Stacked free and forced response maps of the lifted predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    /// `(N H) x N`, block `i` is `K^{i+1}`.
    pub s_psi: Matrix,
    /// `(N H) x (p H)`, block `(i, j)` is `K^{i-j} B` for `j <= i`.
    pub s_u: Matrix,
}

pub fn build_prediction_matrices(model: &KoopmanModel, horizon: usize) -> Result<PredictionMatrices> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let big_n = model.lifted_dim();
    let p = model.input_dim();
    let mut s_psi = Matrix::zeros(big_n * horizon, big_n);
    let mut s_u = Matrix::zeros(big_n * horizon, p * horizon);
    // kb[m] = K^m B
    let mut kb = Vec::with_capacity(horizon);
    kb.push(model.b.clone());
    for m in 1..horizon {
        let next = &model.k * &kb[m - 1];
        kb.push(next);
    }
    let mut power = model.k.clone();
    for i in 0..horizon {
        s_psi.view_mut((i * big_n, 0), (big_n, big_n)).copy_from(&power);
        power = &model.k * power;
        for j in 0..=i {
            s_u.view_mut((i * big_n, j * p), (big_n, p)).copy_from(&kb[i - j]);
        }
    }
    Ok(PredictionMatrices { s_psi, s_u })
}

/// The condensed QP `J(U) = (G U + f)^T Qb (G U + f) + U^T Rb U` written as
/// `1/2 U^T H U + g^T U + c` (up to the factor two).
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub hessian: Matrix,
    pub linear: DVector<f64>,
    /// Projected forced response (n H x p H).
    pub g: Matrix,
    /// Projected free response minus reference (n H).
    pub f: DVector<f64>,
    /// Stage weights stacked on the diagonal blocks (n H x n H).
    pub q_blocks: Matrix,
    pub r_blocks: Matrix,
}

impl CondensedQp {
    pub fn build(
        model: &KoopmanModel,
        cfg: &MpcConfig,
        psi0: &LiftedVector,
        w_window: &Matrix,
    ) -> Result<Self> {
        let n = model.dict.state_dim();
        let big_n = model.lifted_dim();
        let p = model.input_dim();
        let h = cfg.horizon;
        cfg.validate(n, p)?;
        if psi0.len() != big_n {
            return Err(Error::DimensionMismatch {
                context: "MPC psi0",
                expected: big_n,
                actual: psi0.len(),
            });
        }
        if psi0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MPC psi0"));
        }
        if w_window.nrows() != n || w_window.ncols() < h {
            return Err(Error::DimensionMismatch {
                context: "MPC reference window columns",
                expected: h,
                actual: w_window.ncols(),
            });
        }

        // projected powers: px_k[m] = P_x K^m, px_kb[m] = P_x K^m B
        let mut px_k = Vec::with_capacity(h + 1);
        px_k.push(Matrix::identity(big_n, big_n).rows(0, n).into_owned());
        for m in 1..=h {
            let next = &px_k[m - 1] * &model.k;
            px_k.push(next);
        }
        let px_kb: Vec<Matrix> = px_k[..h].iter().map(|pk| pk * &model.b).collect();

        let mut g = Matrix::zeros(n * h, p * h);
        let mut f = DVector::zeros(n * h);
        for i in 0..h {
            let free = &px_k[i + 1] * psi0;
            for r in 0..n {
                f[i * n + r] = free[r] - w_window[(r, i)];
            }
            for j in 0..=i {
                g.view_mut((i * n, j * p), (n, p)).copy_from(&px_kb[i - j]);
            }
        }
        let mut q_blocks = Matrix::zeros(n * h, n * h);
        for i in 0..h {
            let scale = if i + 1 == h { cfg.terminal_weight } else { 1.0 };
            q_blocks.view_mut((i * n, i * n), (n, n)).copy_from(&(&cfg.q_y * scale));
        }
        let mut r_blocks = Matrix::zeros(p * h, p * h);
        for i in 0..h {
            r_blocks.view_mut((i * p, i * p), (p, p)).copy_from(&cfg.r_u);
        }
        let gt_q = g.transpose() * &q_blocks;
        let mut hessian = &gt_q * &g + &r_blocks;
        crate::matops::symmetrize_in_place(&mut hessian);
        let linear = &gt_q * &f;
        Ok(Self {
            hessian,
            linear,
            g,
            f,
            q_blocks,
            r_blocks,
        })
    }

    /// The tracking objective at `plan` (stacked `u_0..u_{H-1}`).
    pub fn objective(&self, plan: &DVector<f64>) -> f64 {
        let e = &self.g * plan + &self.f;
        e.dot(&(&self.q_blocks * &e)) + plan.dot(&(&self.r_blocks * plan))
    }

    pub fn condition(&self) -> f64 {
        crate::matops::symmetric_condition(&self.hessian)
    }

    /// Upper estimate of the Hessian spectral norm by power iteration.
    pub fn lipschitz(&self) -> f64 {
        let dim = self.hessian.nrows();
        let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..100 {
            let hv = &self.hessian * &v;
            let norm = hv.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let prev = est;
            est = norm;
            v = hv / norm;
            if (est - prev).abs() <= 1e-9 * est {
                break;
            }
        }
        // power iteration approaches the top eigenvalue from below
        est * 1.05
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// First input of the plan, applied in receding horizon.
    pub u0: DVector<f64>,
    /// Full plan, `p x H`.
    pub plan: Matrix,
    pub objective: f64,
    /// Projected-gradient iterations used (0 when no bound was active).
    pub iterations: usize,
}

/// Receding-horizon tracking MPC. `w_window` holds the references for
/// steps `1..=H` as columns.
pub fn solve_mpc(
    model: &KoopmanModel,
    cfg: &MpcConfig,
    psi0: &LiftedVector,
    w_window: &Matrix,
) -> Result<MpcSolution> {
    let qp = CondensedQp::build(model, cfg, psi0, w_window)?;
    let p = model.input_dim();
    let h = cfg.horizon;
    if p == 0 {
        return Ok(MpcSolution {
            u0: DVector::zeros(0),
            plan: Matrix::zeros(0, h),
            objective: qp.objective(&DVector::zeros(0)),
            iterations: 0,
        });
    }
    let cond = qp.condition();
    if !(cond <= HESSIAN_CONDITION_LIMIT) {
        return Err(Error::IllConditionedHessian { cond });
    }
    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or(Error::IllConditionedHessian { cond })?;
    let mut plan = -chol.solve(&qp.linear);
    let mut iterations = 0;

    if cfg.is_constrained() {
        let mut clipped = plan.clone();
        cfg.clip(&mut clipped, p);
        if clipped != plan {
            plan = clipped;
            let step = 1.0 / qp.lipschitz();
            for _ in 0..cfg.max_pg_iters {
                iterations += 1;
                let grad = &qp.hessian * &plan + &qp.linear;
                let mut next = &plan - grad * step;
                cfg.clip(&mut next, p);
                let moved = (&next - &plan).amax();
                plan = next;
                if moved <= cfg.pg_tol {
                    break;
                }
            }
        }
    }
    let objective = qp.objective(&plan);
    let plan_mat = Matrix::from_column_slice(p, h, plan.as_slice());
    Ok(MpcSolution {
        u0: plan_mat.column(0).into_owned(),
        plan: plan_mat,
        objective,
        iterations,
    })
}

/// Objective values of the projected-gradient iterates, starting from the
/// clipped unconstrained solution. Used to check monotone descent.
pub fn projected_gradient_trace(
    model: &KoopmanModel,
    cfg: &MpcConfig,
    psi0: &LiftedVector,
    w_window: &Matrix,
    start: &DVector<f64>,
) -> Result<Vec<f64>> {
    let qp = CondensedQp::build(model, cfg, psi0, w_window)?;
    let p = model.input_dim();
    let step = 1.0 / qp.lipschitz();
    let mut plan = start.clone();
    cfg.clip(&mut plan, p);
    let mut out = vec![qp.objective(&plan)];
    for _ in 0..cfg.max_pg_iters {
        let grad = &qp.hessian * &plan + &qp.linear;
        plan -= grad * step;
        cfg.clip(&mut plan, p);
        out.push(qp.objective(&plan));
    }
    Ok(out)
}

/// The linear feedback `u_0 = -G Psi` realised by the unconstrained MPC with
/// zero reference, extracted column by column from unit lifted states.
pub fn mpc_gain_limit(model: &KoopmanModel, cfg: &MpcConfig) -> Result<Matrix> {
    let big_n = model.lifted_dim();
    let p = model.input_dim();
    let n = model.dict.state_dim();
    let unconstrained = MpcConfig {
        u_min: None,
        u_max: None,
        ..cfg.clone()
    };
    let zero_ref = Matrix::zeros(n, cfg.horizon);
    let mut gain = Matrix::zeros(p, big_n);
    for i in 0..big_n {
        let mut e = DVector::zeros(big_n);
        e[i] = 1.0;
        let sol = solve_mpc(model, &unconstrained, &e, &zero_ref)?;
        gain.set_column(i, &(-sol.u0));
    }
    Ok(gain)
}

/// Eigenvalue bounds of a symmetric matrix, handy when checking weights.
pub fn eigen_range(a: &Matrix) -> (f64, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::ObservableDictionary;

    fn scalar(k: f64, b: f64) -> KoopmanModel {
        KoopmanModel::new(
            Matrix::from_element(1, 1, k),
            Matrix::from_element(1, 1, b),
            ObservableDictionary::identity(1, 0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn prediction_matrices_examples() {
        let m = scalar(0.5, 1.0);
        let one = build_prediction_matrices(&m, 1).unwrap();
        assert_eq!(one.s_psi, m.k);
        assert_eq!(one.s_u, m.b);

        let three = build_prediction_matrices(&m, 3).unwrap();
        let expected = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.25, 0.5, 1.0]);
        assert_eq!(three.s_u, expected);
        assert_eq!(three.s_psi.as_slice(), &[0.5, 0.25, 0.125]);

        let dict = ObservableDictionary::identity(2, 0).unwrap();
        let b = Matrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let z = KoopmanModel::new(Matrix::zeros(2, 2), b.clone(), dict, 1.0).unwrap();
        let pm = build_prediction_matrices(&z, 3).unwrap();
        assert_eq!(pm.s_psi, Matrix::zeros(6, 2));
        for i in 0..3 {
            for j in 0..3 {
                let block = pm.s_u.view((2 * i, j), (2, 1)).into_owned();
                if i == j {
                    assert_eq!(block, b);
                } else {
                    assert_eq!(block, Matrix::zeros(2, 1));
                }
            }
        }
        assert!(build_prediction_matrices(&z, 0).is_err());
    }

    #[test]
    fn zero_problem_gives_zero_plan() {
        let m = scalar(0.9, 1.0);
        let cfg = MpcConfig::diagonal(10, &[1.0], &[0.1]);
        let sol = solve_mpc(&m, &cfg, &DVector::zeros(1), &Matrix::zeros(1, 10)).unwrap();
        assert_eq!(sol.plan, Matrix::zeros(1, 10));
    }

    #[test]
    fn active_bound_scalar() {
        // one step, x1 = u: target 5 with tiny input weight wants u ~ 5
        let m = scalar(0.0, 1.0);
        let mut cfg = MpcConfig::diagonal(1, &[1.0], &[1e-6]);
        cfg.u_max = Some(vec![1.0]);
        cfg.u_min = Some(vec![-1.0]);
        let w = Matrix::from_element(1, 1, 5.0);
        let sol = solve_mpc(&m, &cfg, &DVector::zeros(1), &w).unwrap();
        assert_eq!(sol.u0[0], 1.0);
    }

    #[test]
    fn gain_limit_small_horizon_expensive_input() {
        let m = scalar(0.9, 1.0);
        let cfg = MpcConfig::diagonal(1, &[1.0], &[1e9]);
        let g = mpc_gain_limit(&m, &cfg).unwrap();
        assert!(g[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let m = scalar(0.9, 1.0);
        let mut cfg = MpcConfig::diagonal(5, &[1.0], &[0.0]);
        assert!(solve_mpc(&m, &cfg, &DVector::zeros(1), &Matrix::zeros(1, 5)).is_err());
        cfg.r_u[(0, 0)] = 1.0;
        cfg.u_min = Some(vec![1.0]);
        cfg.u_max = Some(vec![-1.0]);
        assert!(solve_mpc(&m, &cfg, &DVector::zeros(1), &Matrix::zeros(1, 5)).is_err());
        let cfg = MpcConfig::diagonal(5, &[1.0], &[1.0]);
        assert!(solve_mpc(&m, &cfg, &DVector::zeros(1), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn ill_conditioned_hessian_detected() {
        // two identical input channels: the Hessian is 1e14 * (rank-deficient) + 1e-3 I
        let m = KoopmanModel::new(
            Matrix::from_element(1, 1, 0.9),
            Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            ObservableDictionary::identity(1, 0).unwrap(),
            1.0,
        )
        .unwrap();
        let cfg = MpcConfig::diagonal(3, &[1e14], &[1e-3, 1e-3]);
        let err = solve_mpc(&m, &cfg, &DVector::zeros(1), &Matrix::zeros(1, 3));
        assert!(matches!(err, Err(Error::IllConditionedHessian { .. })));
    }
}
