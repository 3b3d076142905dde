//! Data-driven certification of exponential attraction and switching
//! controller synthesis with quadratic Lyapunov functions trained by a
//! projected perceptron.

pub mod cli;
pub mod control;
pub mod dataset;
pub mod error;
pub mod features;
pub mod matnum;
pub mod perceptron;
pub mod sysid;
pub mod verify;

pub use error::{Error, Result};
