//! File formats, run orchestration and the command line for doubly
//! stochastic embedding alignment. The numerics live in `dsalign-core`.

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod run;
pub mod synthetic;
