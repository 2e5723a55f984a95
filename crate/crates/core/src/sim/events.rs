//! Event log: one JSON object per line, tagged by `ev`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::medium::{NodeId, Target};
use crate::node_mac::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebitCause {
    /// Own uplink (data or heartbeat) at conventional parameters.
    Tx,
    /// Gateway ACK windows after an own uplink.
    RxWindow,
    OffloadTx,
    /// ACK windows after an offload transmission.
    OffloadRxWindow,
    /// Idle CAD cycles while lading.
    Cad,
    /// Receiving an offloaded packet.
    RelayRx,
    RelayAckTx,
    ForwardTx,
    /// Gateway ACK windows after a forward.
    ForwardRxWindow,
    /// Receiving a frame addressed to another node after a CAD hit.
    ForeignRx,
}

impl DebitCause {
    /// Causes that only exist because the node is lading.
    pub fn is_lading(self) -> bool {
        matches!(
            self,
            DebitCause::Cad
                | DebitCause::RelayRx
                | DebitCause::RelayAckTx
                | DebitCause::ForwardTx
                | DebitCause::ForwardRxWindow
                | DebitCause::ForeignRx
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Data,
    Heartbeat,
    Ack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInfo {
    pub depleting: NodeId,
    pub affluent: NodeId,
    pub offload_power_dbm: i32,
    pub e_om_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    Debit { t: f64, node: NodeId, cause: DebitCause, joules: f64, #[serde(default, skip_serializing_if = "is_zero")] cycles: u64 },
    TxStart {
        t: f64,
        node: NodeId,
        tx: u64,
        packet: Option<u64>,
        origin: NodeId,
        frame: FrameKind,
        target: Target,
        sf: u8,
        channel: u8,
        power_dbm: i32,
        iq_inverted: bool,
        end: f64,
    },
    /// A frame lost at a receiver because of an overlapping frame
    /// (`receiver` absent means the gateway).
    Collision { t: f64, tx: u64, node: NodeId, receiver: Option<NodeId> },
    /// First reception of a packet at the gateway.
    Delivered { t: f64, packet: u64, origin: NodeId, carrier: NodeId, bytes: u32, attempts: u8 },
    Duplicate { t: f64, packet: u64, carrier: NodeId },
    Dropped { t: f64, node: NodeId, packet: u64 },
    CadWake { t: f64, node: NodeId, tx: u64, foreign: bool },
    /// An affluent node received a packet offloaded to it.
    Offloaded { t: f64, packet: u64, origin: NodeId, carrier: NodeId },
    ModeChange { t: f64, node: NodeId, from: Mode, to: Mode, until: Option<f64> },
    Depleted { t: f64, node: NodeId, mode: Mode },
    /// A lading node hit its reserve and stopped early.
    LadingAbort { t: f64, node: NodeId },
    Plan {
        t: f64,
        gamma: f64,
        affluent: Vec<NodeId>,
        depleting: Vec<NodeId>,
        pairs: Vec<PairInfo>,
        t_lm_s: Vec<(NodeId, f64)>,
        start_s: f64,
        dropped: Vec<NodeId>,
    },
    CycleReset { t: f64, cycle: u32, cells: usize },
}

fn is_zero(x: &u64) -> bool {
    *x == 0
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Debit { t, .. }
            | Event::TxStart { t, .. }
            | Event::Collision { t, .. }
            | Event::Delivered { t, .. }
            | Event::Duplicate { t, .. }
            | Event::Dropped { t, .. }
            | Event::CadWake { t, .. }
            | Event::Offloaded { t, .. }
            | Event::ModeChange { t, .. }
            | Event::Depleted { t, .. }
            | Event::LadingAbort { t, .. }
            | Event::Plan { t, .. }
            | Event::CycleReset { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        debug_assert!(self.events.last().is_none_or(|l| l.time() <= e.time()), "log out of order: {e:?}");
        self.events.push(e);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, serde_json::Error> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(EventLog { events })
    }
}
