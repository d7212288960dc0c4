//! Marginal-productivity (Whittle) indices for real-state restless bandits.
//!
//! * [`model`] — project primitives, threshold policies, initial laws.
//! * [`engine`] — exact k-horizon metrics, MP index, reachable sets.
//! * [`pcl`] — grid certification of the three PCL-indexability conditions.
//! * [`models`] — web crawling and noisy channel closed forms, plus a reset model.
//! * [`rmabp`] — Lagrangian dual bound and index-policy simulation.
//! * [`frontier`] — resource–reward frontier and shadow-price checks.
//! * [`config`] — serializable model specifications, including user models
//!   written as [`expr`] expressions.

pub mod config;
pub mod engine;
pub mod error;
pub mod expr;
pub mod frontier;
pub mod model;
pub mod models;
pub mod pcl;
pub mod rmabp;

pub use error::{Error, Result};
