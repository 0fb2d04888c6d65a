//! Data sources, configuration, and the experiment driver.

pub mod config;
pub mod csv;
pub mod dataset;
pub mod experiment;
pub mod kink;
