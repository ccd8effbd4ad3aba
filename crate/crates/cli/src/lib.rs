//! Command-line driver: configuration, commands and the differential test driver.

pub mod commands;
pub mod config;
pub mod difftest;
pub mod error;
