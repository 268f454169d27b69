//! Benchmarks, dataset generators and correctness checks for remixdb.

pub mod baseline;
pub mod cost;
pub mod datagen;
pub mod error;
pub mod micro;
pub mod output;
pub mod verify;
pub mod workload;

pub use error::{BenchError, Result};
