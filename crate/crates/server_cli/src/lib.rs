//! HTTP API and command-line front end for the `l2r_core` pipeline.

pub mod api;
pub mod cli;
pub mod workspace;
