//! File formats, reports, wall-clock benchmarking and the `sesgcn`
//! command-line pipeline on top of [`sesgcn_core`].

#![forbid(unsafe_code)]

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod cobot;
pub mod config;
pub mod corpus;
mod error;
pub mod masks;
pub mod report;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use error::{AppError, AppResult};

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::json(path, e))
}
