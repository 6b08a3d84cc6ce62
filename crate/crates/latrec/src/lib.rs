//! File formats, parallel training, experiment runners and the command-line
//! interface on top of `latrec-core`.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod experiments;
pub mod files;
pub mod model;
pub mod panelgen;
pub mod parallel;
pub mod report;
pub mod svg;

pub use error::{Error, Result};
