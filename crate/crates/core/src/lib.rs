//! Desk-scale workbench for localization-free, information-driven seafloor
//! survey navigation.
//!
//! The pipeline runs per control tick:
//!
//! 1. [`sensor`] renders a segmentation mask and a proximity depth image from
//!    the robot pose by ray casting the [`world`] heightfield.
//! 2. [`ir`] fuses them into a SegDepth image.
//! 3. A controller from [`policy`] (the rule-based expert or the learned
//!    classifier) picks a discrete yaw/pitch change.
//! 4. [`simulate`] applies it and records the step.
//!
//! [`baselines`] provides the random-walk and complete-coverage planners the
//! policies are compared against, [`eval`] computes survey metrics and runs
//! the comparison harness, and [`actuation`] turns commands into thruster PWM.

pub mod actuation;
pub mod baselines;
pub mod config;
pub mod eval;
pub mod ir;
pub mod policy;
pub mod sensor;
pub mod simulate;
pub mod world;

/// Version string embedded in every artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub use ir::{compose_segdepth, downsample, ColormapLut, SegDepthImage};
pub use sensor::{CameraModel, Frame, RobotPose, SegMask};
pub use world::{generate_scenario, load_world, save_world, CellIndex, ScenarioId, ScenarioParams, ScenarioSpec, WorldMap};
