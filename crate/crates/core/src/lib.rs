//! Risk-bounded multi-agent coordination: constraint projection, shaped
//! best responses and a dual-multiplier negotiation loop.

pub mod audit;
pub mod baselines;
pub mod domain;
pub mod error;
pub mod expr;
pub mod metrics;
pub mod negotiation;
pub mod oracle;
pub mod policy;
pub mod projection;
pub mod risk;
pub mod rng;
pub mod scenarios;
pub mod shaping;
pub mod synthetic;
pub mod verifier;

pub use error::{Error, Result};
