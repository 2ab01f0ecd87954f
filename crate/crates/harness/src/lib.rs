//! Experiment harness for the multi-gate FeFET dendritic neuron: layered
//! configuration, the experiment runners and their file outputs.

pub mod cache;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use error::{Error, Result};
