//! Deterministic token-economy simulator for integrated energy systems.
//!
//! The crate models a multi-carrier energy network, attributes consumption to
//! generators by proportional sharing, turns emission and congestion behaviour
//! into contribution factors, converts factors into token issuances and levies,
//! and settles bilateral energy contracts on a hash-chained ledger ordered by
//! fee priority.
//!
//! The main entry points are [`scenario::load_scenario`] and [`sim::run`].

pub mod cli;
pub mod contribution;
pub mod dispatch;
pub mod grid;
mod ids;
pub mod ledger;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod tokens;
pub mod trace;

pub use ids::{ActorId, BusId, ContractId, DeviceId, LineId};
