//! Per-node MAC state: traffic, retransmission, modes and the energy ledger.
//!
//! The event engine in [`crate::sim`] drives these state machines; everything
//! here is deterministic given the random number generator handed in.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::medium::{NodeId, Position};
use crate::phy_energy::{CadTimers, TransmissionParams};

pub const MAX_ATTEMPTS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Conventional,
    Offloading,
    Lading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Data,
    Heartbeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub origin: NodeId,
    pub carrier: NodeId,
    pub payload_bytes: u32,
    pub created_s: f64,
    /// Attempts made so far by the current carrier.
    pub attempts: u8,
    /// Attempts the origin needed to hand the packet over (offloaded only).
    pub origin_attempts: u8,
    pub kind: PacketKind,
    /// Battery consumption the origin reported with this packet.
    pub origin_consumed_j: f64,
}

/// Instruction from the network server, piggybacked on a downlink ACK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeCommand {
    EnterLading { listen_from_s: f64, until_s: f64 },
    EnterOffloading { partner: NodeId, from_s: f64, until_s: f64, params: TransmissionParams },
    RevertConventional,
}

/// Inter-arrival times drawn uniformly from a packets-per-hour band, or a
/// fixed period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub min_inter_s: f64,
    pub max_inter_s: f64,
}

impl TrafficModel {
    pub fn from_rate_band(lo_pph: f64, hi_pph: f64) -> Self {
        TrafficModel { min_inter_s: 3600.0 / hi_pph, max_inter_s: 3600.0 / lo_pph }
    }

    pub fn periodic(period_s: f64) -> Self {
        TrafficModel { min_inter_s: period_s, max_inter_s: period_s }
    }

    /// Minimum inter-arrival time.
    pub fn tau_s(&self) -> f64 {
        self.min_inter_s
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max_inter_s > self.min_inter_s {
            rng.gen_range(self.min_inter_s..=self.max_inter_s)
        } else {
            self.min_inter_s
        }
    }
}

/// Random back-off before retry number `attempt + 1`, uniform in
/// `[base, base + 2^(attempt - 1)]` seconds.
pub fn backoff_delay<R: Rng + ?Sized>(attempt: u8, base_s: f64, rng: &mut R) -> f64 {
    let span = 2f64.powi(attempt.max(1) as i32 - 1);
    base_s + rng.gen_range(0.0..=span)
}

/// CAD energy bookkeeping for a lading node. Cycles run on a fixed grid
/// from `epoch_s`; a cycle is charged only if the radio was not busy for
/// any part of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CadAccount {
    pub epoch_s: f64,
    pub period_s: f64,
    pub idle_from_s: f64,
}

impl CadAccount {
    pub fn new(epoch_s: f64, timers: &CadTimers) -> Self {
        CadAccount { epoch_s, period_s: timers.period(), idle_from_s: epoch_s }
    }

    /// Whole cycles in `[from, to]` on the grid.
    pub fn cycles_between(&self, from: f64, to: f64) -> u64 {
        if to <= from {
            return 0;
        }
        let snap = |x: f64| if (x - x.round()).abs() < 1e-9 { x.round() } else { x };
        let first = snap((from - self.epoch_s) / self.period_s).ceil();
        let end = snap((to - self.epoch_s) / self.period_s).floor();
        (end - first).max(0.0) as u64
    }

    /// The radio is busy on `[start, end]`. Returns the idle cycles to charge
    /// up to `start`.
    pub fn busy(&mut self, start: f64, end: f64) -> u64 {
        let n = self.cycles_between(self.idle_from_s, start);
        if end > self.idle_from_s {
            self.idle_from_s = end;
        }
        n
    }

    /// Closes the account at `t`. Returns the remaining idle cycles.
    pub fn close(&mut self, t: f64) -> u64 {
        let n = self.cycles_between(self.idle_from_s, t);
        self.idle_from_s = self.idle_from_s.max(t);
        n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub position: Position,
    pub budget_j: f64,
    pub reserve_j: f64,
    pub consumed_j: f64,
    pub tau_s: f64,
    pub heartbeat_period_s: f64,
    pub traffic: TrafficModel,
    pub mode: Mode,
    pub conv_params: TransmissionParams,
    pub offload_params: Option<TransmissionParams>,
    pub cad_timers: CadTimers,
    pub lading_from_s: f64,
    pub lading_deadline_s: f64,
    /// Offloading partner.
    pub partner: Option<NodeId>,
    /// Depleting nodes served while lading.
    pub served: BTreeSet<NodeId>,
    pub retrans_window: VecDeque<u8>,
    pub retrans_capacity: usize,
    pub depleted: bool,
    pub last_gateway_tx_s: f64,
    pub cad: Option<CadAccount>,
}

impl NodeState {
    pub fn new(
        id: NodeId,
        position: Position,
        budget_j: f64,
        reserve_j: f64,
        traffic: TrafficModel,
        heartbeat_period_s: f64,
        conv_params: TransmissionParams,
        cad_timers: CadTimers,
    ) -> Self {
        NodeState {
            id,
            position,
            budget_j,
            reserve_j,
            consumed_j: 0.0,
            tau_s: traffic.tau_s(),
            heartbeat_period_s,
            traffic,
            mode: Mode::Conventional,
            conv_params,
            offload_params: None,
            cad_timers,
            lading_from_s: 0.0,
            lading_deadline_s: 0.0,
            partner: None,
            served: BTreeSet::new(),
            retrans_window: VecDeque::new(),
            retrans_capacity: 16,
            depleted: false,
            last_gateway_tx_s: 0.0,
            cad: None,
        }
    }

    /// Charges `joules` to the ledger. Returns true if this debit depleted
    /// the node.
    pub fn debit(&mut self, joules: f64) -> bool {
        debug_assert!(joules >= 0.0 && joules.is_finite(), "bad debit {joules}");
        if joules == 0.0 {
            return false;
        }
        self.consumed_j += joules;
        if !self.depleted && self.consumed_j >= self.budget_j {
            self.depleted = true;
            return true;
        }
        false
    }

    pub fn remaining_j(&self) -> f64 {
        self.budget_j - self.consumed_j
    }

    /// Whether the lading node has dipped into its reserve.
    pub fn reserve_breached(&self) -> bool {
        self.consumed_j >= self.budget_j - self.reserve_j
    }

    pub fn record_attempts(&mut self, attempts: u8) {
        if self.retrans_window.len() == self.retrans_capacity {
            self.retrans_window.pop_front();
        }
        self.retrans_window.push_back(attempts);
    }

    pub fn heartbeat_due(&self, now_s: f64) -> bool {
        !self.depleted && now_s - self.last_gateway_tx_s >= self.heartbeat_period_s
    }

    /// Offloading is in force for a packet arising at `now_s`.
    pub fn offloading_at(&self, now_s: f64) -> bool {
        self.mode == Mode::Offloading
            && now_s >= self.lading_from_s
            && now_s < self.lading_deadline_s
            && self.offload_params.is_some()
    }

    pub fn lading_at(&self, now_s: f64) -> bool {
        self.mode == Mode::Lading && now_s >= self.lading_from_s && now_s < self.lading_deadline_s
    }

    /// Applies a server command received at `now_s`. Returns false if the
    /// command was ignored.
    pub fn apply_mode_command(&mut self, cmd: &ModeCommand, now_s: f64) -> bool {
        if self.depleted {
            return false;
        }
        match *cmd {
            ModeCommand::EnterLading { listen_from_s, until_s } => {
                if until_s <= now_s {
                    return false;
                }
                let from = listen_from_s.max(now_s);
                self.mode = Mode::Lading;
                self.lading_from_s = from;
                self.lading_deadline_s = until_s;
                self.partner = None;
                self.cad = Some(CadAccount::new(from, &self.cad_timers));
            }
            ModeCommand::EnterOffloading { partner, from_s, until_s, params } => {
                if until_s <= now_s {
                    return false;
                }
                self.mode = Mode::Offloading;
                self.partner = Some(partner);
                self.lading_from_s = from_s.max(now_s);
                self.lading_deadline_s = until_s;
                self.offload_params = Some(params);
            }
            ModeCommand::RevertConventional => self.revert(),
        }
        true
    }

    pub fn revert(&mut self) {
        self.mode = Mode::Conventional;
        self.partner = None;
        self.served.clear();
        self.cad = None;
    }

    /// Resets the ledger at a recharge-cycle boundary.
    pub fn reset_cycle(&mut self, budget_j: f64, reserve_j: f64) {
        self.budget_j = budget_j;
        self.reserve_j = reserve_j;
        self.consumed_j = 0.0;
        self.depleted = false;
        self.revert();
    }
}
