//! Dynamic regressor extension and mixing with a finite-time element-wise
//! adaptation law.

mod adjugate;
mod estimator;
mod regression;

pub use adjugate::{adjugate, MAX_ADJUGATE_DIM};
pub use estimator::{
    bound_rate, drem_step, ie_check, min_learning_rate, signed_pow, worst_case_bound,
    EstimatorState, IeStatus,
};
pub use regression::{build_lre, ExtendedRegression, RegressorExtender};
