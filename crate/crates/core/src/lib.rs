//! Adaptive Koopman models for observation and control.
//!
//! A nonlinear plant is lifted through an [`ObservableDictionary`] into a
//! space where it is approximately linear, `psi' = K psi + B u`. The model is
//! fitted in batch with [`edmd::fit`] and then tracked online with a
//! [`RecursiveEstimator`]. The tracked model feeds a lifted-state Kalman
//! filter ([`KalmanState`]) and a condensed MPC ([`solve_mpc`]).
//!
//! ```
//! use koopman_adapt::{edmd, ObservableDictionary, SnapshotSet};
//! use nalgebra::DMatrix;
//!
//! // x' = 0.9 x + u, sampled without noise
//! let x = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, -0.2]);
//! let u = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.3]);
//! let x_next = &x * 0.9 + &u;
//! let data = SnapshotSet::new(x, x_next, u, 0.1).unwrap();
//! let dict = ObservableDictionary::identity(1, 0).unwrap();
//! let model = edmd::fit(&data, &dict).unwrap();
//! assert!((model.k[(0, 0)] - 0.9).abs() < 1e-12);
//! assert!((model.b[(0, 0)] - 1.0).abs() < 1e-12);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod edmd;
pub mod error;
pub mod harness;
pub mod matops;
pub mod observables;
pub mod observer;
pub mod plants;
pub mod redmd;

pub use control::{solve_mpc, CondensedQp, MpcConfig, MpcSolution};
pub use edmd::{KoopmanModel, ModelFile, RolloutMode, SnapshotSet, Trajectory};
pub use error::{Error, Result};
pub use matops::Matrix;
pub use observables::{DictionaryFamily, LiftedVector, Observable, ObservableDictionary};
pub use observer::{KalmanState, ObserverConfig};
pub use plants::{ChangeEvent, ChangeSchedule, PlantKind, PlantModel, PlantState};
pub use redmd::{GammaInit, RecursiveEstimator, RedmdConfig, StepPhase, StepReport};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    pub struct Intro;
    #[doc = include_str!("../../../book/src/lifting.md")]
    pub struct Lifting;
    #[doc = include_str!("../../../book/src/batch.md")]
    pub struct Batch;
    #[doc = include_str!("../../../book/src/recursive.md")]
    pub struct Recursive;
    #[doc = include_str!("../../../book/src/observer.md")]
    pub struct Observer;
    #[doc = include_str!("../../../book/src/control.md")]
    pub struct Control;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
