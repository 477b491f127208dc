//! Iterative, policy-driven mapping of unknown networks.
//!
//! A [`model::ScanningPolicy`] chains scanner and analyzer modules and runs
//! them for a number of iterations; each iteration's discoveries seed the
//! next. Analyzers infer every node's default gateway, which turns the flat
//! list of scanned nodes into a topology tree. Every iteration is committed
//! to a reverse-delta [`store::VersionStore`], and [`topology`] turns any
//! version (or the difference of two) into an aggregated, laid-out graph.

pub mod adapters;
pub mod analyzers;
pub mod model;
pub mod net;
pub mod orchestrator;
pub mod simnet;
pub mod store;
pub mod topology;

pub use net::{Cidr, TargetSpec};
