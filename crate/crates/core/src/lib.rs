pub mod discovery;
pub mod graph;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod error;
pub mod regression;
pub mod sem;
pub mod simulate;
pub mod synthgen;
pub mod tabular;

pub use error::{Error, Result};
