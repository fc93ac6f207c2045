//! Token-bond mask compliance: a DAG ledger with authenticated channels, a
//! feedback pricing controller, bond escrow, an agent-based epidemic, UWB
//! ranging and gas-sensor mask detection, joined by a message bus.
//!
//! [`scenario`] runs the closed loop.

pub mod bus;
pub mod controller;
pub mod epidemic;
pub mod escrow;
pub mod ledger;
pub mod positioning;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod wire;
