//! Learned bidirectional motion planning with classical sampling-based
//! baselines, continual-learning training loops and a benchmark harness.

pub mod bench;
pub mod cspace;
pub mod data;
pub mod error;
pub mod learn;
pub mod models;
pub mod neuralnet;
pub mod planner;
pub mod smp;

pub use cspace::{Aabb, Config, Path, RobotKind, RobotModel, Workspace};
pub use error::{Error, Result};
