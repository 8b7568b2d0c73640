//! Solvers for the two-point boundary value problem of minimum threat-exposure
//! path planning: a physics-informed neural-network trainer and a multi-start
//! shooting baseline, on a shared scalar autodiff engine.

pub mod autodiff;
pub mod networks;
pub mod pmp;
pub mod shooting;
pub mod threat_field;
pub mod trainer;

pub use autodiff::{Scalar, Tape, Var};
pub use networks::{Activation, LayerSpec, NetSpec, PinnModel};
pub use pmp::{Scenario, Workspace};
pub use shooting::{ShootConfig, ShotResult};
pub use threat_field::{RadialBasis, TemporalMode, ThreatField};
pub use trainer::{LossReport, LossWeights, TrainConfig};
