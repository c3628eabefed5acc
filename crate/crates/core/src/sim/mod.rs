//! Ground-truth plant integration and the dual-rate safe-adaptation loop.

mod closed_loop;
mod log;
mod plant;

pub use closed_loop::{run_closed_loop, ClosedLoop, EstimatorSetup, ReferenceFn, SimSchedule};
pub use log::{LogRow, RowStatus, TrajectoryLog, TRAJECTORY_SCHEMA};
pub use plant::{rk4_step, sample_disturbance, ControlAffine, PlantModel};
