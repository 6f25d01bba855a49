pub mod allocation;
pub mod cli;
pub mod clustering;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod scenario;
pub mod simharness;
pub mod trajectory;
pub mod tsp;

pub use error::{Error, Result};
