//! Batch runner, benchmark tables and command-line front end for wfdes.

pub mod app;
pub mod batch;
pub mod bench;
