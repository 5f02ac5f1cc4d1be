//! Command-line front end: configuration, dataset files and one function
//! per `laeo` subcommand.

pub mod annotations;
pub mod archive;
pub mod cli;
pub mod commands;
pub mod config;
pub mod frames;
pub mod jsonl;
pub mod manifest;
pub mod records;
