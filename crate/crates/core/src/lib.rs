//! Velocity-tracking stochastic optimal feedback control of saccadic eye
//! movements.
//!
//! The numerical core (plant, controller, estimator, rollouts) is generic over
//! the scalar type; the data pipeline works in `f64`.

pub mod analysis;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod fitting;
pub mod oracle;
pub mod scalar;
pub mod signals;
pub mod simulation;
pub mod verify;

pub use controller::{backward_pass, control_at, CostSpec, GainSchedule};
pub use dynamics::{DiscreteSystem, Discretization, Geometry, NoiseModel, PlantConfig};
pub use error::{Error, Result};
pub use scalar::Real;
pub use simulation::{simulate_mean, simulate_monte_carlo, Trajectory};

pub type DiscreteSystemF64 = DiscreteSystem<f64>;
pub type DiscreteSystemF32 = DiscreteSystem<f32>;
pub type CostSpecF64 = CostSpec<f64>;
pub type CostSpecF32 = CostSpec<f32>;
pub type GainScheduleF64 = GainSchedule<f64>;
pub type GainScheduleF32 = GainSchedule<f32>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type TrajectoryF32 = Trajectory<f32>;
