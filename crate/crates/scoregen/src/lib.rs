//! Parallel drivers, file formats, experiments and the command-line front end
//! for [`scoregen_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod parallel;
pub mod suites;

pub use config::Config;
pub use error::{Error, Result};
