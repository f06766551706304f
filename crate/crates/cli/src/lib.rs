//! Command implementations behind the `pdgmm` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
