//! Regularized M-estimators of multivariate scatter.

pub mod error;
pub mod harness;
pub mod hbd;
pub mod io;
pub mod location;
pub mod matrix;
mod nelder_mead;
pub mod parallel;
pub mod population;
pub mod penalized;
pub mod sscm;
pub mod stats;
pub mod tuning;
pub mod weight;

pub use error::{Error, Result};
pub use location::{spatial_median, CenterSpec, RobustScale};
pub use matrix::{DataMatrix, SpectralDecomposition, SymmetricPd};
pub use penalized::{
    adjusted_v, check_condition_a, solve_penalized, ConditionA, Penalty, PenaltySpec, ScatterEstimate, Target,
};
pub use sscm::{generalized_sscm, sscm};
pub use tuning::{cv_curves, cv_value, cvr_value, kfold_split, select_beta, tilde_beta, CvCurve, Criterion, EstimatorKind};
pub use weight::{WeightFunction, WeightKind};
