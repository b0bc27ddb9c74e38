//! Command-line front end and file formats for the `repalign-core` library.

pub mod cli;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod report;

pub use error::{LabError, Result};

// lets the shared test fixtures name this crate the way integration tests do
#[cfg(test)]
extern crate self as repalign;

#[cfg(test)]
mod tests;
