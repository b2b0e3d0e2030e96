//! Multi-domain image-to-image translation with style codes.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod rng;
pub mod synthesis;
pub mod training;

pub use error::{Error, Result};
