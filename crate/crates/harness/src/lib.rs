//! Experiment runner, audit persistence and verification, oracle
//! comparison and the acceptance suite behind the `concord` binary.

pub mod acceptance;
pub mod audit_log;
pub mod error;
pub mod manifest;
pub mod oracle_report;
pub mod report;
pub mod runner;
pub mod validate;

pub use error::{HarnessError, Result};
