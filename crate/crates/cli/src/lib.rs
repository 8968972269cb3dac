//! Command-line pipeline: configuration, PNG/OBJ/CSV I/O, synthetic data and
//! the `recon`, `fit-dataset`, `render-sweep`, `swap`, `gradcheck` and
//! `make-synthetic` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod io;
pub mod synthetic;

pub use config::RunConfig;
pub use error::CliError;
