pub mod bench;
pub mod error;
pub mod lie;
pub mod methods;
pub mod metrics;
pub mod sampler;
pub mod scene;
pub mod schedule;
pub mod surrogate;

pub use error::{Error, Result};
