//! Offline EDMD with control.
//!
//! Fits the lifted linear predictor `Psi(x_{k+1}) ~ K Psi(x_k) + B u_k` by
//! least squares over snapshot matrices:
//!
//! ```text
//! [K, B] = Psi(X') [Psi(X); U]^+
//! ```
//!
//! with the pseudo-inverse taken in its full-row-rank form
//! `A^T (A A^T)^{-1}`. The input enters linearly and is not lifted.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, Matrix};
use crate::observables::{LiftedVector, ObservableDictionary};

/// Snapshot matrices `X`, `X'` and `U` sharing the same column count.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub x: Matrix,
    pub x_next: Matrix,
    pub u: Matrix,
    pub dt: f64,
}

impl SnapshotSet {
    pub fn new(x: Matrix, x_next: Matrix, u: Matrix, dt: f64) -> Result<Self> {
        let m = x.ncols();
        if m == 0 {
            return Err(Error::TooFewSamples(m + 1));
        }
        if x_next.ncols() != m || u.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "snapshot column count",
                expected: m,
                actual: if x_next.ncols() != m { x_next.ncols() } else { u.ncols() },
            });
        }
        if x_next.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "snapshot state rows",
                expected: x.nrows(),
                actual: x_next.nrows(),
            });
        }
        Ok(Self { x, x_next, u, dt })
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    /// Horizontal concatenation. No pair spans the boundary between parts.
    pub fn concat(parts: &[SnapshotSet]) -> Result<SnapshotSet> {
        let first = parts.first().ok_or(Error::TooFewSamples(0))?;
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let (n, p) = (first.state_dim(), first.input_dim());
        let mut x = Matrix::zeros(n, total);
        let mut xn = Matrix::zeros(n, total);
        let mut u = Matrix::zeros(p, total);
        let mut col = 0;
        for part in parts {
            if part.state_dim() != n || part.input_dim() != p {
                return Err(Error::DimensionMismatch {
                    context: "concatenated snapshot dimensions",
                    expected: n,
                    actual: part.state_dim(),
                });
            }
            let m = part.len();
            x.columns_mut(col, m).copy_from(&part.x);
            xn.columns_mut(col, m).copy_from(&part.x_next);
            u.columns_mut(col, m).copy_from(&part.u);
            col += m;
        }
        SnapshotSet::new(x, xn, u, first.dt)
    }
}

/// Build shifted snapshots from one trajectory of `(x_k, u_k)` samples:
/// `X = [x_1..x_{M-1}]`, `X' = [x_2..x_M]`, `U = [u_1..u_{M-1}]`.
pub fn collect_snapshots(trajectory: &[(DVector<f64>, DVector<f64>)], dt: f64) -> Result<SnapshotSet> {
    let m = trajectory.len();
    if m < 2 {
        return Err(Error::TooFewSamples(m));
    }
    let n = trajectory[0].0.len();
    let p = trajectory[0].1.len();
    for (x, u) in trajectory {
        if x.len() != n || u.len() != p {
            return Err(Error::DimensionMismatch {
                context: "trajectory sample",
                expected: n,
                actual: x.len(),
            });
        }
    }
    let x = Matrix::from_fn(n, m - 1, |i, j| trajectory[j].0[i]);
    let xn = Matrix::from_fn(n, m - 1, |i, j| trajectory[j + 1].0[i]);
    let u = Matrix::from_fn(p, m - 1, |i, j| trajectory[j].1[i]);
    SnapshotSet::new(x, xn, u, dt)
}

/// Stacked regressor `[Psi(X); U]` of shape `(N+p) x (M-1)`.
pub fn regressor_matrix(snapshots: &SnapshotSet, dict: &ObservableDictionary) -> Result<Matrix> {
    if snapshots.state_dim() != dict.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "snapshot state dimension vs dictionary",
            expected: dict.state_dim(),
            actual: snapshots.state_dim(),
        });
    }
    let lifted = dict.lift_batch(&snapshots.x)?;
    let big_n = dict.lifted_dim();
    let p = snapshots.input_dim();
    let mut phi = Matrix::zeros(big_n + p, snapshots.len());
    phi.rows_mut(0, big_n).copy_from(&lifted);
    phi.rows_mut(big_n, p).copy_from(&snapshots.u);
    Ok(phi)
}

/// Condition estimate of the regressor Gram `[Psi;U][Psi;U]^T`.
pub fn regressor_condition(snapshots: &SnapshotSet, dict: &ObservableDictionary) -> Result<f64> {
    let phi = regressor_matrix(snapshots, dict)?;
    Ok(matops::symmetric_condition(&(&phi * phi.transpose())))
}

/// Lifted transition matrix `K` and lifted input matrix `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub k: Matrix,
    pub b: Matrix,
    pub dict: ObservableDictionary,
    pub dt: f64,
}

/// How [`KoopmanModel::rollout`] propagates between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RolloutMode {
    /// Iterate in lifted space and project each step.
    #[default]
    Lifted,
    /// Project to state, re-lift, repeat.
    Relift,
}

impl KoopmanModel {
    pub fn new(k: Matrix, b: Matrix, dict: ObservableDictionary, dt: f64) -> Result<Self> {
        let big_n = dict.lifted_dim();
        if k.shape() != (big_n, big_n) {
            return Err(Error::DimensionMismatch {
                context: "K shape",
                expected: big_n,
                actual: k.nrows(),
            });
        }
        if b.nrows() != big_n {
            return Err(Error::DimensionMismatch {
                context: "B rows",
                expected: big_n,
                actual: b.nrows(),
            });
        }
        matops::ensure_finite(&k, "K")?;
        matops::ensure_finite(&b, "B")?;
        Ok(Self { k, b, dict, dt })
    }

    pub fn lifted_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `[K, B]` as one `N x (N+p)` matrix.
    pub fn stacked(&self) -> Matrix {
        let big_n = self.lifted_dim();
        let mut out = Matrix::zeros(big_n, big_n + self.input_dim());
        out.columns_mut(0, big_n).copy_from(&self.k);
        out.columns_mut(big_n, self.input_dim()).copy_from(&self.b);
        out
    }

    pub(crate) fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input dimension",
                expected: self.input_dim(),
                actual: u.len(),
            });
        }
        Ok(())
    }

    /// `K psi + B u`.
    pub fn predict_lifted(&self, psi: &LiftedVector, u: &DVector<f64>) -> Result<LiftedVector> {
        if psi.len() != self.lifted_dim() {
            return Err(Error::DimensionMismatch {
                context: "lifted state",
                expected: self.lifted_dim(),
                actual: psi.len(),
            });
        }
        self.check_input(u)?;
        Ok(&self.k * psi + &self.b * u)
    }

    /// One-step lifted prediction `K Psi(x) + B u`.
    pub fn predict_one(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<LiftedVector> {
        let psi = self.dict.lift(x)?;
        self.predict_lifted(&psi, u)
    }

    /// Multi-step open-loop prediction from `x0` under the `p x H` input
    /// sequence; returns the `n x H` projected state trajectory.
    pub fn rollout(&self, x0: &DVector<f64>, inputs: &Matrix, mode: RolloutMode) -> Result<Matrix> {
        let horizon = inputs.ncols();
        if horizon == 0 {
            return Err(Error::InvalidParameter("rollout horizon must be >= 1".into()));
        }
        if inputs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "rollout input rows",
                expected: self.input_dim(),
                actual: inputs.nrows(),
            });
        }
        let n = self.dict.state_dim();
        let mut out = Matrix::zeros(n, horizon);
        let mut psi = self.dict.lift(x0)?;
        for h in 0..horizon {
            let u = inputs.column(h).into_owned();
            psi = self.predict_lifted(&psi, &u)?;
            let x = self.dict.project_state(&psi)?;
            out.set_column(h, &x);
            if mode == RolloutMode::Relift && h + 1 < horizon {
                psi = self.dict.lift(&x)?;
            }
        }
        Ok(out)
    }

    /// Frobenius residual `||Psi(X') - K Psi(X) - B U||_F` on a snapshot set.
    pub fn residual(&self, snapshots: &SnapshotSet) -> Result<f64> {
        let phi = regressor_matrix(snapshots, &self.dict)?;
        let target = self.dict.lift_batch(&snapshots.x_next)?;
        Ok((target - self.stacked() * phi).norm())
    }
}

/// Least-squares fit of `[K, B]` with the full-row-rank pseudo-inverse.
pub fn fit(snapshots: &SnapshotSet, dict: &ObservableDictionary) -> Result<KoopmanModel> {
    fit_regularized(snapshots, dict, 0.0)
}

/// Fit with an optional ridge term `ridge * I` added to the regressor Gram.
/// `ridge = 0` is the plain pseudo-inverse fit.
pub fn fit_regularized(
    snapshots: &SnapshotSet,
    dict: &ObservableDictionary,
    ridge: f64,
) -> Result<KoopmanModel> {
    let phi = regressor_matrix(snapshots, dict)?;
    let target = dict.lift_batch(&snapshots.x_next)?;
    let stacked = if ridge == 0.0 {
        let pinv = matops::pinv_full_row_rank(&phi).map_err(|e| match e {
            Error::SingularGram { cond } => Error::RankDeficientRegressor { cond },
            other => other,
        })?;
        target * pinv
    } else {
        if !(ridge > 0.0) {
            return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {ridge}")));
        }
        let dim = phi.nrows();
        let gram = &phi * phi.transpose() + Matrix::identity(dim, dim) * ridge;
        let inv = matops::spd_inverse(&gram, matops::GRAM_CONDITION_LIMIT).map_err(|e| match e {
            Error::SingularGram { cond } => Error::RankDeficientRegressor { cond },
            other => other,
        })?;
        target * phi.transpose() * inv
    };
    split_stacked(stacked, dict.clone(), snapshots.input_dim(), snapshots.dt)
}

/// Minimum-norm fit through the SVD pseudo-inverse; total on any data.
pub fn fit_svd(snapshots: &SnapshotSet, dict: &ObservableDictionary) -> Result<KoopmanModel> {
    let phi = regressor_matrix(snapshots, dict)?;
    let target = dict.lift_batch(&snapshots.x_next)?;
    let pinv = matops::pinv_svd(&phi, matops::default_svd_tol(&phi));
    split_stacked(target * pinv, dict.clone(), snapshots.input_dim(), snapshots.dt)
}

pub(crate) fn split_stacked(
    stacked: Matrix,
    dict: ObservableDictionary,
    p: usize,
    dt: f64,
) -> Result<KoopmanModel> {
    let big_n = dict.lifted_dim();
    let k = stacked.columns(0, big_n).into_owned();
    let b = stacked.columns(big_n, p).into_owned();
    KoopmanModel::new(k, b, dict, dt)
}

/// A single recorded trajectory with time stamps, as stored in snapshot CSV
/// files (`t, x1..xn, u1..up`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn snapshots(&self, dt: f64) -> Result<SnapshotSet> {
        let pairs: Vec<_> = self.x.iter().cloned().zip(self.u.iter().cloned()).collect();
        collect_snapshots(&pairs, dt)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.x.first().map_or(0, |x| x.len());
        let p = self.u.first().map_or(0, |u| u.len());
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![format_f64(self.t[k])];
            row.extend(self.x[k].iter().map(|v| format_f64(*v)));
            row.extend(self.u[k].iter().map(|v| format_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Config("snapshot CSV must start with column `t`".into()));
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let p = header.iter().filter(|h| h.starts_with('u')).count();
        if n == 0 || header.len() != 1 + n + p {
            return Err(Error::Config(format!("unexpected snapshot CSV header {:?}", header)));
        }
        let mut traj = Trajectory { t: vec![], x: vec![], u: vec![] };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::Config(format!("row {}: {e}", line + 2)))?;
            if vals.len() != 1 + n + p {
                return Err(Error::Config(format!("row {} has {} fields", line + 2, vals.len())));
            }
            traj.t.push(vals[0]);
            traj.x.push(DVector::from_column_slice(&vals[1..1 + n]));
            traj.u.push(DVector::from_column_slice(&vals[1 + n..]));
        }
        Ok(traj)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Number formatting shared by every CSV this crate writes: 17 significant
/// digits in scientific notation, which round-trips `f64` exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON model file written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dict: ObservableDictionary,
    pub dt: f64,
    pub k: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl From<&KoopmanModel> for ModelFile {
    fn from(m: &KoopmanModel) -> Self {
        ModelFile {
            dict: m.dict.clone(),
            dt: m.dt,
            k: rows_of(&m.k),
            b: rows_of(&m.b),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<KoopmanModel> {
        let big_n = self.dict.lifted_dim();
        let p = self.b.first().map_or(0, |r| r.len());
        if self.k.len() != big_n || self.b.len() != big_n {
            return Err(Error::Config("model file matrix sizes do not match dictionary".into()));
        }
        let k = Matrix::from_fn(big_n, big_n, |i, j| self.k[i].get(j).copied().unwrap_or(f64::NAN));
        let b = Matrix::from_fn(big_n, p, |i, j| self.b[i].get(j).copied().unwrap_or(f64::NAN));
        KoopmanModel::new(k, b, self.dict, self.dt)
    }
}
