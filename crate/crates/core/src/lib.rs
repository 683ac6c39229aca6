pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod generator;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod tracker;

pub use error::{Error, Result};
