//! Command line and HTTP front ends for `kernelsim_core`.

pub mod commands;
pub mod service;

pub use commands::*;
