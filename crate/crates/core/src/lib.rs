//! Occupancy-grid navigation toolkit.
//!
//! The crate covers the full expert-trajectory pipeline for point-goal
//! navigation on height-sliced occupancy maps, plus the estimation and
//! metric utilities that surround it:
//!
//! - [`grid`]: 3D voxel occupancy, 2D traversability fusion, exact Euclidean
//!   distance fields, supercover line-of-sight, and egocentric crops.
//! - [`guide`]: free-space roadmaps, clearance-penalized A*, three-state
//!   known maps, and line-of-sight local goal selection.
//! - [`vo`]: truncated velocity-obstacle control selection with footprint corner
//!   kinematics, lookahead rollouts, and soft clearance costs.
//! - [`planner`]: the A*+VO fusion loop, episode execution, and egocentric
//!   dataset emission.
//! - [`sim`]: procedural scenes, dynamic obstacle motion, and navigation
//!   metrics (SR, SPL, NE, Cost, nDTW).
//! - [`deadreckon`]: wheel/magnetometer trajectory reconstruction with ZUPT,
//!   hard-iron calibration, a [yaw, yaw_rate] Kalman filter, and RTS
//!   smoothing.
//! - [`occmetrics`]: reference occupancy losses (BCE, Lovász hinge with
//!   analytic gradient, IoU) and nearest-neighbor codebook quantization.

pub mod deadreckon;
pub mod error;
pub mod geom;
pub mod grid;
pub mod guide;
pub mod occmetrics;
pub mod planner;
pub mod sim;
pub mod vo;

pub use error::{Error, Result};
pub use geom::Pose;
pub use grid::{DistanceField, GridMeta, TraversabilityMap, VoxelGrid};
pub use guide::{CellState, GuideCost, KnownMap, Path, Roadmap};
pub use planner::{DatasetSample, EpisodeOutcome, PlannerConfig, Trajectory, WorldModel};
pub use sim::{MetricsReport, Scene, SceneParams};
pub use vo::{ClearanceReport, Control, Footprint, ObstacleState, VoParams};
