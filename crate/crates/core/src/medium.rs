//! Shared radio medium.
//!
//! Transmissions interact only when they overlap in time on the same channel
//! and spreading factor and, unless I-Q orthogonality is switched off, with
//! the same I-Q orientation. Reception additionally needs the log-distance
//! link budget to clear the receiver sensitivity for that spreading factor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::phy_energy::{path_loss_db, CadTimers, TransmissionParams};

pub type NodeId = u32;

/// Time comparisons in the medium are done with this slack, seconds.
pub const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Gateway,
    Node(NodeId),
    Broadcast,
}

/// What a receiver is tuned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tuning {
    pub channel: u8,
    pub sf: u8,
    pub bw_hz: u32,
    pub iq_inverted: bool,
}

impl Tuning {
    pub fn of(params: &TransmissionParams) -> Self {
        Tuning { channel: params.channel, sf: params.sf, bw_hz: params.bw_hz, iq_inverted: params.iq_inverted }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnAirTransmission {
    pub id: u64,
    pub sender: NodeId,
    pub sender_pos: Position,
    pub params: TransmissionParams,
    pub start_s: f64,
    pub preamble_end_s: f64,
    pub end_s: f64,
    pub packet_id: u64,
    pub payload_bytes: u32,
    pub target: Target,
}

impl OnAirTransmission {
    pub fn overlaps(&self, other: &OnAirTransmission) -> bool {
        self.start_s < other.end_s - TIME_EPS && other.start_s < self.end_s - TIME_EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    /// Receiver sensitivity per spreading factor, dBm.
    #[serde(default = "default_sensitivity")]
    pub sensitivity_dbm_by_sf: BTreeMap<u8, f64>,
    #[serde(default)]
    pub capture_enabled: bool,
    /// Power advantage a frame needs to survive an overlap when capture is on.
    #[serde(default = "default_capture_threshold")]
    pub capture_threshold_db: f64,
    /// Regular and inverted I-Q frames do not interfere when true.
    #[serde(default = "default_true")]
    pub iq_orthogonal: bool,
    /// Probability that a data frame to the gateway is lost for reasons
    /// other than collisions (fading, foreign interference). Downlinks and
    /// ACKs are not subject to it.
    #[serde(default)]
    pub uplink_loss_probability: f64,
    /// Same, for node-to-node offload frames.
    #[serde(default)]
    pub offload_loss_probability: f64,
}

fn default_sensitivity() -> BTreeMap<u8, f64> {
    [(7, -123.0), (8, -126.0), (9, -129.0), (10, -132.0)].into()
}

fn default_capture_threshold() -> f64 {
    6.0
}

fn default_true() -> bool {
    true
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            sensitivity_dbm_by_sf: default_sensitivity(),
            capture_enabled: false,
            capture_threshold_db: default_capture_threshold(),
            iq_orthogonal: true,
            uplink_loss_probability: 0.0,
            offload_loss_probability: 0.0,
        }
    }
}

impl LinkModel {
    pub fn sensitivity(&self, sf: u8) -> Option<f64> {
        self.sensitivity_dbm_by_sf.get(&sf).copied()
    }

    /// Sensitivity must get strictly lower as the spreading factor grows.
    pub fn validate(&self) -> Result<(), String> {
        if self.sensitivity_dbm_by_sf.is_empty() {
            return Err("sensitivity table is empty".into());
        }
        let values: Vec<f64> = self.sensitivity_dbm_by_sf.values().copied().collect();
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err("sensitivity must decrease strictly with spreading factor".into());
        }
        if !(0.0..1.0).contains(&self.uplink_loss_probability) {
            return Err("uplink_loss_probability must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.offload_loss_probability) {
            return Err("offload_loss_probability must be in [0, 1)".into());
        }
        Ok(())
    }

    /// Received power minus sensitivity; `None` if the SF is not in the table.
    pub fn margin_db(&self, tx_power_dbm: f64, sf: u8, distance_m: f64) -> Option<f64> {
        Some(tx_power_dbm - path_loss_db(distance_m) - self.sensitivity(sf)?)
    }

    /// Whether two transmissions share a collision domain (ignoring time).
    pub fn same_domain(&self, a: &TransmissionParams, b: &TransmissionParams) -> bool {
        a.channel == b.channel
            && a.sf == b.sf
            && a.bw_hz == b.bw_hz
            && (!self.iq_orthogonal || a.iq_inverted == b.iq_inverted)
    }

    pub fn interferes(&self, a: &OnAirTransmission, b: &OnAirTransmission) -> bool {
        a.id != b.id && a.overlaps(b) && self.same_domain(&a.params, &b.params)
    }
}

pub fn received_power_dbm(tx: &OnAirTransmission, receiver: &Position) -> f64 {
    tx.params.power_dbm as f64 - path_loss_db(tx.sender_pos.distance(receiver))
}

/// Tuning matches and the link budget clears the sensitivity.
pub fn receivable(tx: &OnAirTransmission, receiver: &Position, listener: &Tuning, link: &LinkModel) -> bool {
    if Tuning::of(&tx.params) != *listener {
        return false;
    }
    match link.sensitivity(tx.params.sf) {
        Some(s) => received_power_dbm(tx, receiver) >= s,
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    Lost,
}

/// Receiver-independent ALOHA resolution: any interfering overlap destroys
/// every frame involved.
pub fn resolve_collisions(overlapping: &[OnAirTransmission], link: &LinkModel) -> Vec<Outcome> {
    overlapping
        .iter()
        .map(|a| {
            if overlapping.iter().any(|b| link.interferes(a, b)) {
                Outcome::Lost
            } else {
                Outcome::Delivered
            }
        })
        .collect()
}

/// Whether `tx` survives its interferers at a particular receiver. With
/// capture off this is the plain ALOHA rule; with capture on the frame must
/// beat every interferer by the capture threshold.
pub fn survives_at<'a>(
    tx: &OnAirTransmission,
    others: impl IntoIterator<Item = &'a OnAirTransmission>,
    receiver: &Position,
    link: &LinkModel,
) -> bool {
    let own = received_power_dbm(tx, receiver);
    for other in others {
        if !link.interferes(tx, other) {
            continue;
        }
        if !link.capture_enabled {
            return false;
        }
        if own - received_power_dbm(other, receiver) < link.capture_threshold_db {
            return false;
        }
    }
    true
}

/// A CAD probe `[probe_start, probe_start + probe_len]` fires when some
/// receivable frame with the listener's I-Q orientation has a preamble that
/// covers the whole probe.
pub fn cad_detects<'a>(
    listener: &Tuning,
    probe_start: f64,
    probe_len: f64,
    active: impl IntoIterator<Item = &'a OnAirTransmission>,
    listener_pos: &Position,
    link: &LinkModel,
) -> bool {
    active.into_iter().any(|tx| preamble_covers(tx, probe_start, probe_len) && receivable(tx, listener_pos, listener, link))
}

fn preamble_covers(tx: &OnAirTransmission, probe_start: f64, probe_len: f64) -> bool {
    tx.start_s <= probe_start + TIME_EPS && probe_start + probe_len <= tx.preamble_end_s + TIME_EPS
}

/// Probe grid of a lading listener: from `epoch_s`, every `T1 + T2` the node
/// sleeps T1 and then probes for two symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CadSchedule {
    pub epoch_s: f64,
    pub timers: CadTimers,
    pub probe_s: f64,
}

impl CadSchedule {
    pub fn probe_start(&self, k: u64) -> f64 {
        self.epoch_s + k as f64 * self.timers.period() + self.timers.t1_s
    }

    /// Index of the first probe starting at or after `t`.
    pub fn first_probe_at_or_after(&self, t: f64) -> u64 {
        let x = (t - self.epoch_s - self.timers.t1_s) / self.timers.period();
        if x <= 0.0 {
            return 0;
        }
        let k = x.ceil() as u64;
        // Floating point can land one cycle late right at a boundary.
        if k > 0 && self.probe_start(k - 1) >= t - TIME_EPS {
            k - 1
        } else {
            k
        }
    }

    /// Start of the first probe that falls entirely inside the preamble of
    /// `tx`, if any.
    pub fn first_detection(&self, tx: &OnAirTransmission) -> Option<f64> {
        let k = self.first_probe_at_or_after(tx.start_s.max(self.epoch_s));
        let p = self.probe_start(k);
        preamble_covers(tx, p, self.probe_s).then_some(p)
    }

    /// Number of complete cycles between the epoch and `t`.
    pub fn complete_cycles(&self, t: f64) -> u64 {
        if t <= self.epoch_s {
            return 0;
        }
        let x = (t - self.epoch_s) / self.timers.period();
        let k = x.floor();
        // Snap when t sits on a cycle boundary up to rounding.
        if (x - x.round()).abs() < 1e-9 {
            x.round() as u64
        } else {
            k as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy_energy::{min_preamble_symbols, symbol_duration};

    fn params(sf: u8, channel: u8, iq: bool, power: i32) -> TransmissionParams {
        let mut p = TransmissionParams::new(sf, 125_000, power, 8).unwrap();
        p.channel = channel;
        p.iq_inverted = iq;
        p
    }

    fn tx(id: u64, p: TransmissionParams, start: f64, dur: f64, at: Position) -> OnAirTransmission {
        let sym = symbol_duration(p.sf, p.bw_hz).unwrap();
        OnAirTransmission {
            id,
            sender: id as NodeId,
            sender_pos: at,
            params: p,
            start_s: start,
            preamble_end_s: start + p.preamble_symbols as f64 * sym,
            end_s: start + dur,
            packet_id: id,
            payload_bytes: 2,
            target: Target::Gateway,
        }
    }

    #[test]
    fn receivable_examples() {
        let link = LinkModel::default();
        let p = params(7, 0, false, 14);
        let t = tx(1, p, 0.0, 0.1, Position::new(1.0, 0.0));
        let origin = Position::default();
        assert!(receivable(&t, &origin, &Tuning::of(&p), &link));
        let other_sf = Tuning { sf: 8, ..Tuning::of(&p) };
        assert!(!receivable(&t, &origin, &other_sf, &link));

        let p10 = params(10, 0, false, 14);
        let far = tx(2, p10, 0.0, 0.1, Position::new(3500.0, 0.0));
        let expected = 14.0 - path_loss_db(3500.0) >= -132.0;
        assert_eq!(receivable(&far, &origin, &Tuning::of(&p10), &link), expected);
        assert!(expected);
    }

    #[test]
    fn collision_examples() {
        let link = LinkModel::default();
        let at = Position::new(10.0, 0.0);
        let a = tx(1, params(9, 0, false, 14), 0.0, 0.2, at);
        let b = tx(2, params(9, 0, false, 14), 0.1, 0.2, at);
        assert_eq!(resolve_collisions(&[a.clone(), b], &link), vec![Outcome::Lost, Outcome::Lost]);

        let c = tx(3, params(7, 0, false, 14), 0.1, 0.2, at);
        let d = tx(4, params(9, 0, false, 14), 0.0, 0.2, at);
        assert_eq!(resolve_collisions(&[c, d], &link), vec![Outcome::Delivered, Outcome::Delivered]);

        let e = tx(5, params(7, 0, true, 2), 0.0, 0.2, at);
        let f = tx(6, params(7, 0, false, 14), 0.05, 0.2, at);
        assert_eq!(resolve_collisions(&[e.clone(), f.clone()], &link), vec![Outcome::Delivered; 2]);
        let strict = LinkModel { iq_orthogonal: false, ..link.clone() };
        assert_eq!(resolve_collisions(&[e, f], &strict), vec![Outcome::Lost; 2]);

        // back to back frames do not overlap
        let g = tx(7, params(9, 0, false, 14), 0.2, 0.2, at);
        assert_eq!(resolve_collisions(&[a, g], &link), vec![Outcome::Delivered; 2]);
    }

    #[test]
    fn capture_keeps_the_strong_frame() {
        let link = LinkModel { capture_enabled: true, ..Default::default() };
        let rx = Position::default();
        let strong = tx(1, params(9, 0, false, 14), 0.0, 0.2, Position::new(10.0, 0.0));
        let weak = tx(2, params(9, 0, false, 14), 0.1, 0.2, Position::new(3000.0, 0.0));
        assert!(survives_at(&strong, [&weak], &rx, &link));
        assert!(!survives_at(&weak, [&strong], &rx, &link));
        let plain = LinkModel::default();
        assert!(!survives_at(&strong, [&weak], &rx, &plain));
    }

    #[test]
    fn cad_examples() {
        let link = LinkModel::default();
        let mut p = params(7, 0, true, 2);
        p.preamble_symbols = 13;
        let listener = Tuning::of(&p);
        let pos = Position::default();
        let t = tx(1, p, 0.0, 0.03, Position::new(20.0, 0.0));
        let probe = 0.002048;
        assert!(cad_detects(&listener, 0.001, probe, [&t], &pos, &link));
        assert!(!cad_detects(&listener, 0.02, probe, [&t], &pos, &link));

        let mut up = params(7, 0, false, 14);
        up.preamble_symbols = 13;
        let uplink = tx(2, up, 0.0, 0.03, Position::new(20.0, 0.0));
        assert!(!cad_detects(&listener, 0.001, probe, [&uplink], &pos, &link));
    }

    #[test]
    fn schedule_catches_every_phase() {
        let timers = CadTimers::default();
        let mut p = params(7, 0, true, 2);
        p.preamble_symbols = min_preamble_symbols(&timers, 7, 125_000).unwrap();
        let probe = 2.0 * symbol_duration(7, 125_000).unwrap();
        let sched = CadSchedule { epoch_s: 0.0, timers, probe_s: probe };
        for i in 0..1000 {
            let start = 3.0 + timers.period() * i as f64 / 1000.0;
            let t = tx(1, p, start, 0.03, Position::default());
            assert!(sched.first_detection(&t).is_some(), "missed at {start}");
        }
        assert_eq!(sched.complete_cycles(timers.period() * 10.0), 10);
        assert_eq!(sched.complete_cycles(timers.period() * 10.5), 10);
    }
}
