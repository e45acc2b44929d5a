//! Scenario runner for contlab: loads scenario files, calibrates constants,
//! runs simulations and verification suites, and writes artifacts.

pub mod calibrate;
pub mod commands;
pub mod error;
pub mod lab;
pub mod output;
pub mod scenario;
pub mod suites;
