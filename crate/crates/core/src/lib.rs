//! Metric monocular depth from a ground-plane prior.

pub mod camgeo;
pub mod cli;
pub mod depthmetrics;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod groundprior;
pub mod losses;
pub mod rotaug;
pub mod scalelab;
pub mod viewsynth;

pub use error::{Error, Result};
