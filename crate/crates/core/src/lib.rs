//! Neighbor-based fairness auditing for binary tabular classifiers.
//!
//! The crate encodes tabular data, trains or wraps a binary classifier,
//! computes group fairness metrics, explains negative predictions by
//! comparison with the nearest positively labeled training rows and a
//! protected-attribute flip, and records expert-approved relabels.

pub mod audit;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod fairness;
pub mod mitigation;
pub mod model;
pub mod neighbors;
pub mod render;
pub mod service;

pub use error::{Error, Result};
