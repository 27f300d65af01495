//! Channel-aware uplink scheduling for vehicles: trace handling,
//! connectivity maps, mobility and data-rate prediction, the probabilistic
//! transmission scheme, a device power model and a replay simulator.

pub mod datarate;
pub mod geo;
pub mod map;
pub mod mobility;
pub mod power;
pub mod sim;
pub mod stats;
pub mod txscheme;
