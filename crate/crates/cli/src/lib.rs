//! Configuration, file formats and experiment orchestration for `pdp-core`.

pub mod checks;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod io;
