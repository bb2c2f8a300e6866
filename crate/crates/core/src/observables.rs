//! Observable dictionaries: the lifting map `x -> Psi(x)` and the projections
//! back to state and output coordinates.
//!
//! Every dictionary starts with the `n` coordinate maps `psi_i(x) = x_i`, so
//! the state projection is the exact selector `[I_n | 0]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lifted state `Psi(x)` of length `N`.
pub type LiftedVector = DVector<f64>;

/// One scalar observable function over the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    /// `x_i`
    State(usize),
    /// `sin(x_i)`
    Sin(usize),
    /// `cos(x_i)`
    Cos(usize),
    /// `prod_j x_j^{e_j}` with one exponent per state coordinate.
    Monomial(Vec<u32>),
}

impl Observable {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::State(i) => x[*i],
            Observable::Sin(i) => x[*i].sin(),
            Observable::Cos(i) => x[*i].cos(),
            Observable::Monomial(exps) => exps
                .iter()
                .zip(x)
                .filter(|(e, _)| **e > 0)
                .map(|(e, xi)| xi.powi(*e as i32))
                .product(),
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            Observable::State(i) | Observable::Sin(i) | Observable::Cos(i) => Some(*i),
            Observable::Monomial(exps) => exps.len().checked_sub(1),
        }
    }
}

/// Built-in dictionary families selectable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DictionaryFamily {
    /// `Psi(x) = x`.
    Identity,
    /// Identity followed by `sin x_i, cos x_i` for each listed state index
    /// (all states when `states` is empty).
    Trig { states: Vec<usize> },
    /// Identity followed by all monomials of total degree `2..=degree`,
    /// graded, then lexicographic in the exponent vector (descending).
    Monomial { degree: u32 },
}

/// Ordered observable basis plus the designated scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableDictionary {
    state_dim: usize,
    basis: Vec<Observable>,
    output_index: usize,
}

impl ObservableDictionary {
    /// Build from an explicit basis. The first `state_dim` entries must be
    /// `State(0), .., State(n-1)` in order.
    pub fn new(state_dim: usize, basis: Vec<Observable>, output_index: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be >= 1".into()));
        }
        if basis.len() < state_dim {
            return Err(Error::DimensionMismatch {
                context: "dictionary basis length",
                expected: state_dim,
                actual: basis.len(),
            });
        }
        for (i, obs) in basis.iter().take(state_dim).enumerate() {
            if *obs != Observable::State(i) {
                return Err(Error::InvalidParameter(format!(
                    "observable {i} must be the coordinate map x_{i}"
                )));
            }
        }
        for obs in &basis {
            if let Some(m) = obs.max_index() {
                if m >= state_dim {
                    return Err(Error::InvalidParameter(format!(
                        "observable {obs:?} references state {m} but n = {state_dim}"
                    )));
                }
            }
            if let Observable::Monomial(e) = obs {
                if e.len() != state_dim {
                    return Err(Error::DimensionMismatch {
                        context: "monomial exponent vector",
                        expected: state_dim,
                        actual: e.len(),
                    });
                }
            }
        }
        if output_index >= basis.len() {
            return Err(Error::DimensionMismatch {
                context: "dictionary output_index",
                expected: basis.len(),
                actual: output_index,
            });
        }
        Ok(Self {
            state_dim,
            basis,
            output_index,
        })
    }

    pub fn identity(state_dim: usize, output_index: usize) -> Result<Self> {
        Self::from_family(state_dim, &DictionaryFamily::Identity, output_index)
    }

    pub fn from_family(
        state_dim: usize,
        family: &DictionaryFamily,
        output_index: usize,
    ) -> Result<Self> {
        let mut basis: Vec<Observable> = (0..state_dim).map(Observable::State).collect();
        match family {
            DictionaryFamily::Identity => {}
            DictionaryFamily::Trig { states } => {
                let idx: Vec<usize> = if states.is_empty() {
                    (0..state_dim).collect()
                } else {
                    states.clone()
                };
                for i in idx {
                    basis.push(Observable::Sin(i));
                    basis.push(Observable::Cos(i));
                }
            }
            DictionaryFamily::Monomial { degree } => {
                for d in 2..=*degree {
                    let mut exps = Vec::new();
                    compositions(state_dim, d, &mut Vec::new(), &mut exps);
                    basis.extend(exps.into_iter().map(Observable::Monomial));
                }
            }
        }
        Self::new(state_dim, basis, output_index)
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Lifted dimension `N`.
    pub fn lifted_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn output_index(&self) -> usize {
        self.output_index
    }

    pub fn basis(&self) -> &[Observable] {
        &self.basis
    }

    pub fn lift(&self, x: &DVector<f64>) -> Result<LiftedVector> {
        let mut out = DVector::zeros(self.lifted_dim());
        self.lift_into(x.as_slice(), &mut out)?;
        Ok(out)
    }

    /// Allocation-free lift into a preallocated buffer of length `N`.
    pub fn lift_into(&self, x: &[f64], out: &mut DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "lift state",
                expected: self.state_dim,
                actual: x.len(),
            });
        }
        if out.len() != self.lifted_dim() {
            return Err(Error::DimensionMismatch {
                context: "lift output buffer",
                expected: self.lifted_dim(),
                actual: out.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lift state"));
        }
        for (o, obs) in out.iter_mut().zip(&self.basis) {
            *o = obs.eval(x);
        }
        Ok(())
    }

    /// Column-wise lift of an `n x M` snapshot matrix.
    pub fn lift_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "lift_batch rows",
                expected: self.state_dim,
                actual: x.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.lifted_dim(), x.ncols());
        let mut col = DVector::zeros(self.lifted_dim());
        for j in 0..x.ncols() {
            let xj: Vec<f64> = x.column(j).iter().copied().collect();
            self.lift_into(&xj, &mut col)?;
            out.set_column(j, &col);
        }
        Ok(out)
    }

    /// `P_x psi`: the first `n` lifted coordinates.
    pub fn project_state(&self, psi: &LiftedVector) -> Result<DVector<f64>> {
        self.check_lifted(psi, "project_state")?;
        Ok(psi.rows(0, self.state_dim).into_owned())
    }

    /// `P_y psi`: the designated scalar output.
    pub fn project_output(&self, psi: &LiftedVector) -> Result<f64> {
        self.check_lifted(psi, "project_output")?;
        Ok(psi[self.output_index])
    }

    /// The output selector as a row vector `C = P_y` (1 x N).
    pub fn output_row(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(1, self.lifted_dim());
        c[(0, self.output_index)] = 1.0;
        c
    }

    fn check_lifted(&self, psi: &LiftedVector, context: &'static str) -> Result<()> {
        if psi.len() != self.lifted_dim() {
            Err(Error::DimensionMismatch {
                context,
                expected: self.lifted_dim(),
                actual: psi.len(),
            })
        } else {
            Ok(())
        }
    }
}

// All exponent vectors of length `n` summing to `degree`, largest leading
// exponent first.
fn compositions(n: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == n {
        let mut v = prefix.clone();
        v.push(degree);
        out.push(v);
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e);
        compositions(n, degree - e, prefix, out);
        prefix.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn sample_dict() -> ObservableDictionary {
        ObservableDictionary::new(
            2,
            vec![
                Observable::State(0),
                Observable::State(1),
                Observable::Sin(0),
                Observable::Monomial(vec![1, 1]),
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn lift_examples() {
        let d = sample_dict();
        let z = d.lift(&DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0, 0.0, 0.0]);
        let v = d.lift(&DVector::from_vec(vec![FRAC_PI_2, 1.0])).unwrap();
        assert_eq!(v[0], FRAC_PI_2);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 1.0).abs() < 1e-15);
        assert_eq!(v[3], FRAC_PI_2);
    }

    #[test]
    fn identity_dictionary_is_identity() {
        let d = ObservableDictionary::identity(3, 0).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.2, 4.0]);
        assert_eq!(d.lift(&x).unwrap(), x);
        assert_eq!(d.project_state(&x).unwrap(), x);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(d.lift_batch(&m).unwrap(), m);
    }

    #[test]
    fn lift_dimension_errors() {
        let d = sample_dict();
        assert!(matches!(
            d.lift(&DVector::from_vec(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(d.lift_batch(&DMatrix::zeros(3, 2)).is_err());
        assert!(d.project_state(&DVector::zeros(3)).is_err());
        assert!(d.project_output(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn constructor_validates_prefix_and_output() {
        assert!(ObservableDictionary::new(2, vec![Observable::State(1), Observable::State(0)], 0)
            .is_err());
        assert!(ObservableDictionary::new(1, vec![Observable::State(0)], 1).is_err());
        assert!(ObservableDictionary::new(1, vec![Observable::State(0), Observable::Sin(3)], 0)
            .is_err());
    }

    #[test]
    fn projections() {
        let d = sample_dict();
        let psi = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.project_state(&psi).unwrap().as_slice(), &[1.0, 2.0]);

        let psi = d.lift(&DVector::from_vec(vec![3.0, -1.0])).unwrap();
        assert_eq!(d.project_output(&psi).unwrap(), 3.0);

        let d3 = ObservableDictionary::new(
            1,
            vec![Observable::State(0), Observable::Sin(0), Observable::Cos(0)],
            1,
        )
        .unwrap();
        let psi = DVector::from_vec(vec![5.0, 7.0, 9.0]);
        assert_eq!(d3.project_output(&psi).unwrap(), 7.0);
    }

    #[test]
    fn families() {
        let trig = ObservableDictionary::from_family(2, &DictionaryFamily::Trig { states: vec![] }, 0)
            .unwrap();
        assert_eq!(trig.lifted_dim(), 6);
        let trig0 =
            ObservableDictionary::from_family(2, &DictionaryFamily::Trig { states: vec![0] }, 0)
                .unwrap();
        assert_eq!(
            trig0.basis(),
            &[
                Observable::State(0),
                Observable::State(1),
                Observable::Sin(0),
                Observable::Cos(0)
            ]
        );
        let mono =
            ObservableDictionary::from_family(2, &DictionaryFamily::Monomial { degree: 3 }, 0)
                .unwrap();
        // 2 linear + 3 quadratic + 4 cubic
        assert_eq!(mono.lifted_dim(), 9);
        assert_eq!(mono.basis()[2], Observable::Monomial(vec![2, 0]));
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let psi = mono.lift(&x).unwrap();
        assert_eq!(psi[3], 6.0);
        assert_eq!(psi[8], 27.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn project_state_inverts_lift(x0 in -10.0f64..10.0, x1 in -10.0f64..10.0) {
                let d = ObservableDictionary::from_family(2, &DictionaryFamily::Monomial { degree: 3 }, 1).unwrap();
                let x = DVector::from_vec(vec![x0, x1]);
                let psi = d.lift(&x).unwrap();
                prop_assert_eq!(d.project_state(&psi).unwrap(), x.clone());
                prop_assert_eq!(d.project_output(&psi).unwrap(), x1);
                // deterministic
                prop_assert_eq!(psi, d.lift(&x).unwrap());
            }

            #[test]
            fn lift_batch_is_columnwise(cols in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..6)) {
                let d = ObservableDictionary::from_family(2, &DictionaryFamily::Trig { states: vec![] }, 0).unwrap();
                let m = cols.len();
                let x = DMatrix::from_fn(2, m, |i, j| if i == 0 { cols[j].0 } else { cols[j].1 });
                let lifted = d.lift_batch(&x).unwrap();
                for j in 0..m {
                    let col = d.lift(&x.column(j).into_owned()).unwrap();
                    prop_assert_eq!(lifted.column(j).into_owned(), col);
                }
                // reversed column order permutes the output identically
                let rev = DMatrix::from_fn(2, m, |i, j| x[(i, m - 1 - j)]);
                let lifted_rev = d.lift_batch(&rev).unwrap();
                for j in 0..m {
                    prop_assert_eq!(lifted_rev.column(j), lifted.column(m - 1 - j));
                }
            }
        }
    }
}
