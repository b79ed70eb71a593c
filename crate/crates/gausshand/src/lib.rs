//! File formats, configuration and the command-line driver around
//! [`gausshand_core`].

pub mod assets;
pub mod cli;
pub mod config;
pub mod depth_io;
pub mod error;
pub mod files;

pub use error::{Error, Result};
