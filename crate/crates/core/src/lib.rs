//! Opinion-dynamics consensus over directed trust graphs.
//!
//! The crate covers the whole pipeline: trust-graph ingestion and generation
//! ([`graph`]), the local update rules ([`opinion`]), the mean-field analysis
//! of those rules under Byzantine adversaries ([`mean_field`]), the per-node
//! asynchronous protocol ([`protocol`]), synchronous and discrete-event
//! simulation engines ([`sim`]), and batch metrics ([`metrics`]).

pub mod graph;
pub mod mean_field;
pub mod metrics;
pub mod opinion;
pub mod protocol;
pub mod rng;
pub mod sim;
