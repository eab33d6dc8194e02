pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, ErrorKind, Result};
