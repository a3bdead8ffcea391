//! Cache timing-channel benchmark toolkit: a set-associative cache model, a
//! multi-core machine simulator with secure-cache variants, a catalog of
//! three-step vulnerability patterns, a Welch t-test harness and a
//! geometry-misconfiguration sensitivity sweep.

pub mod cache;
pub mod catalog;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod machine;
pub mod report;
pub mod rng;
pub mod secure;
pub mod sensitivity;
pub mod stats;

pub use error::{Error, Result};
