pub mod constraints;
pub mod diagnostics;
pub mod error;
pub mod game;
pub mod learner;
pub mod metrics;
pub mod ogd;
pub mod projection;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
