pub mod cost;
pub mod energy;
pub mod engine;
pub mod error;
pub mod families;
pub mod hardware;
pub mod ir;
pub mod metrics;
pub mod scheduler;
pub mod synth;

pub use error::{Error, Result};
