pub mod adapters;
pub mod cli;
pub mod error;
pub mod graphcore;
pub mod harness;
pub mod params;
pub mod probelab;
pub mod seq2seq;
pub mod subtok;

pub use error::{LabError, Result};
