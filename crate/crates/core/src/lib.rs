pub mod error;
pub mod metrics;
pub mod optim;
pub mod phasefield;
pub mod reduce;
pub mod sequence;
pub mod spectral;

pub use error::{Error, Result};
