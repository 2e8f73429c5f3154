//! Simulation and stochastic calculus for the B(A,c)-superprocess on the
//! circle, with `A = ½ d²/dx²`.
//!
//! The crate simulates the superprocess as a critical branching Brownian
//! particle system and assembles, term by term, the Itô formula for
//! functions of the measure, the functional Itô formula for path
//! functionals, and the martingale representation of exponential
//! martingales built from the log-Laplace equation. Every numeric type is
//! generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases below are the
//! ones the command line front end uses.

pub mod calculus;
pub mod error;
pub mod feller;
pub mod functionals;
pub mod geometry;
pub mod pathspace;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{weak_distance, CirclePoint, FiniteMeasure, FourierField, FourierMoments};
pub use scalar::Scalar;
pub use simulator::{simulate_path, simulate_replicate, BranchingScheme, MeasurePath, SimParams};
pub use trajectory::{MeasureState, Trajectory};

pub type CirclePoint64 = CirclePoint<f64>;
pub type FiniteMeasure64 = FiniteMeasure<f64>;
pub type FourierField64 = FourierField<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type SimParams64 = SimParams<f64>;
pub type MeasurePath64 = MeasurePath<f64>;

pub type CirclePoint32 = CirclePoint<f32>;
pub type FiniteMeasure32 = FiniteMeasure<f32>;
pub type FourierField32 = FourierField<f32>;
pub type Trajectory32 = Trajectory<f32>;
pub type SimParams32 = SimParams<f32>;
pub type MeasurePath32 = MeasurePath<f32>;
