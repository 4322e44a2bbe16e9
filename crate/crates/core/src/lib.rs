pub mod backbone;
pub mod datamodel;
pub mod diffcore;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod harness;
pub mod moe;
pub mod nn;
pub mod profile;

pub use error::{Error, Result};
