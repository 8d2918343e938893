//! Experiment runner for `geolearn`: resolved configs, JSON/CSV reports and
//! the one-command reproduction suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod report;
