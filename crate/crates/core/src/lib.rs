//! Discrete-event simulator for energy-harvesting LoRa networks.
//!
//! Nodes whose battery budget for the current recharge cycle will run short
//! (depleting nodes) hand their packets to nearby nodes with energy to
//! spare (affluent nodes), which listen with duty-cycled channel activity
//! detection and forward to the gateway. The baseline is plain Class-A
//! ALOHA uplink with confirmed packets.
//!
//! Modules, bottom up:
//! - [`phy_energy`]: airtime and energy formulas.
//! - [`medium`]: propagation, collisions and CAD detection.
//! - [`node_mac`]: per-node state and ledger.
//! - [`netserver`]: classification, pairing, cells, ADR.
//! - [`sim`]: scenarios, the event engine, metrics and sweeps.

pub mod medium;
pub mod netserver;
pub mod node_mac;
pub mod phy_energy;
pub mod sim;

pub use phy_energy::{CadTimers, CodingRate, Frame, RadioPowerProfile, TransmissionParams};

pub use sim::{run_simulation, EventLog, Metrics, Protocol, ScenarioConfig};
