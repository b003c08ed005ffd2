pub mod dataset;
pub mod error;
pub mod eval;
pub mod generate;
pub mod gin;
pub mod graph;
pub mod heuristics;
pub mod io;
pub mod optim;
pub mod problems;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::Graph;
