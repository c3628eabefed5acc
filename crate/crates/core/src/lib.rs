//! Safe online identification for control-affine plants.
//!
//! Unknown parameters of `ẋ = f(x) + g(x)u + θΔ(x) + d` are identified in
//! finite time by dynamic regressor extension and mixing ([`drem`]), while
//! every input passes through a barrier-constrained projection ([`safety`],
//! [`qp`]) so the closed loop ([`sim`]) stays inside the safe set during
//! adaptation. [`acc`] instantiates the adaptive cruise control study.

pub mod acc;
pub mod drem;
pub mod error;
pub mod filters;
pub mod qp;
pub mod safety;
pub mod sim;

pub use error::{Error, Result};
pub use filters::{FilterBank, FilterChannel};
pub use safety::{AffineInequality, BarrierSpec, ClassK, ConstraintMode};
pub use sim::{run_closed_loop, ClosedLoop, PlantModel, SimSchedule, TrajectoryLog};
