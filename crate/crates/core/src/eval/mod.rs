pub mod latency;
pub mod metrics;
pub mod strategy;

pub use latency::*;
pub use metrics::*;
pub use strategy::*;
