//! Experiment harness for `fastcs-core`: config parsing, image and CSV I/O,
//! run manifests and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod image;
pub mod manifest;
pub mod table;
pub mod workers;
