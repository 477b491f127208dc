//! Command-line front end and HTTP service for `netmap-core`.

pub mod cli;
pub mod graph;
pub mod runs;
pub mod service;
