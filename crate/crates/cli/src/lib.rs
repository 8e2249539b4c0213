//! `scd` command-line tools and the review HTTP service.

pub mod api;
pub mod cli;
pub mod commands;
pub mod config;
pub mod fixtures;

pub use cli::Cli;
pub use commands::run;
