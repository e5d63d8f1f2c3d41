//! Jump Ornstein–Uhlenbeck bridges obtained as the infinite-penalty limit of an
//! energy-optimal LQ regulator, together with their self-exciting extension.
//!
//! The crate is organised bottom-up:
//!
//! - [`levy`]: jump drivers, their moments and per-step increment samplers.
//! - [`model`], [`coefficients`]: the problem statement and every closed-form
//!   coefficient of the quadratic value function.
//! - [`sde`]: Euler–Maruyama paths for the free, controlled and bridge dynamics.
//! - [`moments`]: deterministic mean / second-moment curves.
//! - [`ensemble`]: Monte-Carlo orchestration and terminal-error statistics.
//! - [`calibration`]: autocorrelation and stationary-moment fitting.

pub mod calibration;
pub mod coefficients;
pub mod ensemble;
mod error;
pub mod io;
pub mod levy;
pub mod model;
pub mod moments;
pub mod quad;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
pub use levy::{JumpMoments, LevyMeasure};
pub use model::{BridgeModel, ModelSpec};
