//! Lifetime, throughput and per-node counters, computed from the event log.

use serde::{Deserialize, Serialize};

use super::config::Protocol;
use super::events::{Event, EventLog};
use crate::medium::NodeId;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub id: NodeId,
    pub consumed_j: f64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub transmissions: u64,
    pub collisions: u64,
    pub cad_wakeups: u64,
    pub false_wakeups: u64,
    pub offloads: u64,
    pub forwarded_deliveries: u64,
    pub plans: u64,
    pub depletions: u64,
    pub lading_depletions: u64,
    pub lading_aborts: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub protocol: Protocol,
    pub seed: u64,
    pub duration_s: f64,
    /// First depletion time, or the run duration if nothing depleted.
    pub lifetime_s: f64,
    /// True when no node depleted: the lifetime is at least `lifetime_s`.
    pub lifetime_censored: bool,
    /// Bytes received at the gateway up to the lifetime.
    pub bytes_delivered: u64,
    pub bytes_delivered_total: u64,
    pub throughput_bytes_per_s: f64,
    pub nodes: Vec<NodeMetrics>,
    pub counters: Counters,
}

/// Derives metrics from a complete log. Throughput is measured over
/// `min(lifetime, duration)`; every packet is credited once, to its origin.
pub fn compute_metrics(log: &EventLog, protocol: Protocol, seed: u64, node_count: usize, duration_s: f64) -> Metrics {
    let mut nodes: Vec<NodeMetrics> =
        (0..node_count as NodeId).map(|id| NodeMetrics { id, ..Default::default() }).collect();
    let mut c = Counters::default();
    let mut first_depletion: Option<f64> = None;
    let mut deliveries: Vec<(f64, u32)> = Vec::new();

    for e in log.iter() {
        match *e {
            Event::Debit { node, joules, .. } => nodes[node as usize].consumed_j += joules,
            Event::TxStart { .. } => c.transmissions += 1,
            Event::Collision { .. } => c.collisions += 1,
            Event::Delivered { t, origin, carrier, bytes, .. } => {
                nodes[origin as usize].delivered += 1;
                if carrier != origin {
                    c.forwarded_deliveries += 1;
                }
                deliveries.push((t, bytes));
            }
            Event::Dropped { node, .. } => {
                nodes[node as usize].dropped += 1;
                c.dropped += 1;
            }
            Event::CadWake { foreign, .. } => {
                c.cad_wakeups += 1;
                if foreign {
                    c.false_wakeups += 1;
                }
            }
            Event::Offloaded { .. } => c.offloads += 1,
            Event::Depleted { t, mode, .. } => {
                c.depletions += 1;
                if mode == crate::node_mac::Mode::Lading {
                    c.lading_depletions += 1;
                }
                first_depletion.get_or_insert(t);
            }
            Event::LadingAbort { .. } => c.lading_aborts += 1,
            Event::Plan { .. } => c.plans += 1,
            _ => {}
        }
    }

    let lifetime_s = first_depletion.map_or(duration_s, |t| t.min(duration_s));
    let window = lifetime_s.min(duration_s);
    let bytes_delivered: u64 = deliveries.iter().filter(|(t, _)| *t <= window).map(|(_, b)| *b as u64).sum();
    let bytes_delivered_total = deliveries.iter().map(|(_, b)| *b as u64).sum();
    let throughput_bytes_per_s = if window > 0.0 { bytes_delivered as f64 / window } else { 0.0 };

    Metrics {
        protocol,
        seed,
        duration_s,
        lifetime_s,
        lifetime_censored: first_depletion.is_none_or(|t| t >= duration_s),
        bytes_delivered,
        bytes_delivered_total,
        throughput_bytes_per_s,
        nodes,
        counters: c,
    }
}
