//! Experiment runner for the minimum energy filter: configuration, data
//! files, and the simulate, filter, sweep and compare-ekf commands.

pub mod commands;
pub mod config;
pub mod io;
