//! The `fishcount` command line and scoring service.

pub mod app;
pub mod output;
pub mod score;
pub mod serve;

pub use app::{run, Cli, Command, Outcome};
