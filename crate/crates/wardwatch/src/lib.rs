//! File formats, model persistence and the command-line pipeline for
//! `wardwatch-core`.

pub mod cli;
mod error;
pub mod formats;
pub mod model;
pub mod timeline;

pub use error::{Error, Result};
pub use model::{Model, ModelKind};
