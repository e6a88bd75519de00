//! Wholesale electricity-market simulator with learning DER aggregators.
//!
//! Each market interval, per-bus aggregators train storage
//! charge/discharge policies against a frozen belief about locational
//! marginal prices, then play the market: prosumer bids are aggregated,
//! an economic-dispatch LP clears the market, and the resulting prices
//! feed back into the beliefs. The crate provides the market model, the
//! dispatch solver with dual-based price extraction, the learners, the
//! simulation loop, and post-hoc metrics.

pub mod aggregator;
pub mod dispatch;
pub mod model;
