//! Fusion of absolute and relative camera pose estimates with an extended
//! Kalman filter on SE(3).
//!
//! Poses live in [`lie::GroupPose`]; perturbations are right-multiplied
//! tangent vectors ordered `(translation, rotation)`.

pub mod check;
pub mod ekf;
pub mod error;
pub mod eval;
pub mod lie;
pub mod pipeline;
pub mod sim;
pub mod traj_io;
pub mod uncertainty;

pub use ekf::{EkfState, KalmanStepReport};
pub use error::{Error, Result};
pub use eval::ErrorReport;
pub use lie::{GroupPose, TangentPose};
pub use pipeline::{FuseMode, ScenarioConfig};
pub use traj_io::{Trajectory, TrajectoryRecord};
pub use uncertainty::{BlockDiagonalCovariance, PoseGaussian, Role};
