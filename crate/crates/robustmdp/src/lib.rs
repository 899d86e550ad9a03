//! Std companion to `robustmdp-core`: JSON instance files, instance
//! generation, threaded median-of-means sampling, config-driven solver runs
//! and the acceptance suite behind the `robustmdp` command.

pub mod acceptance;
pub mod error;
pub mod formats;
pub mod generate;
pub mod grad;
pub mod parallel;
pub mod run;

pub use error::{Error, Result};
pub use formats::Instance;
pub use generate::GenerateSpec;
pub use run::{solve, RunConfig, SolveReport};
