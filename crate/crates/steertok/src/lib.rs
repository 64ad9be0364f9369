//! File formats, pipeline drivers and the `steertok` command line on top of
//! [`steertok_core`].

pub use steertok_core as core;

pub mod artifacts;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod records;
pub mod report;

pub use error::{Error, Result};
