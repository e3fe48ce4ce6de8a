//! Experiment runner for the QTM laboratory: JSON configs in, JSON and CSV
//! artifacts out. The `qtm` binary is a thin shell over [`commands`].

pub mod commands;
pub mod config;
pub mod output;
