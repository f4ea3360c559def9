pub mod error;
pub mod geometry;

pub use error::{Error, Result};
pub mod synthdata;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod training;
pub mod harness;
