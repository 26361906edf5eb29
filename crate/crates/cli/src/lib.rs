//! Command-line experiment runner for `sparsenet`.
//!
//! Every subcommand is also a library function in [`commands`], so
//! experiments can be scripted and tested without spawning processes.

pub mod cli;
pub mod commands;
pub mod config;
pub mod methods;
pub mod output;

pub use cli::{run, Cli};
