//! Command-line front end and review HTTP service.

pub mod cli;
pub mod service;
