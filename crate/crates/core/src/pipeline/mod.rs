//! End-to-end driver: configuration, the tracking/mapping loop in either
//! execution mode, evaluation and run outputs.

mod config;
mod eval;
mod query;
mod run;

pub use config::*;
pub use eval::*;
pub use query::*;
pub use run::*;
