pub mod calibration;
pub mod crosstalk;
pub mod detector;
pub mod error;
pub mod estimators;
pub mod histogram;
pub mod io;
mod math;
pub mod montecarlo;
pub mod rng;
pub mod sources;

pub use error::{Error, Result};
