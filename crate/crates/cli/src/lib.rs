//! The `dype` command-line tool: configuration, commands and run manifests.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
