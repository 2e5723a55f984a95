//! The event loop.
//!
//! One gateway at the origin, `node_count` nodes on the disc. Events are
//! processed in `(time, node, kind, insertion)` order, so a run is a pure
//! function of the scenario and seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{Budgets, GammaMode, Protocol, ScenarioConfig};
use super::events::{DebitCause, Event, EventLog, FrameKind, PairInfo};
use super::metrics::{compute_metrics, Metrics};
use crate::medium::{self, LinkModel, NodeId, OnAirTransmission, Position, Target, Tuning};
use crate::netserver::{
    self, AdrState, AffluentCandidate, CellMap, ContactInfo, DepletingCandidate, LedgerEntry, PlannerContext,
    RetransWindow,
};
use crate::node_mac::{backoff_delay, Mode, ModeCommand, NodeState, Packet, PacketKind, TrafficModel};
use crate::phy_energy::{self, Frame, PhyError, RadioPowerProfile, TransmissionParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite energy {value} for node {node} ({cause:?}) at t = {t}")]
    NonFiniteEnergy { node: NodeId, cause: DebitCause, value: f64, t: f64 },
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error("planner produced an infeasible plan at t = {t}: {message}")]
    InfeasiblePlan { t: f64, message: String },
}

/// Where nodes are, what they can spend and how often they talk.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub positions: Vec<Position>,
    pub budgets: Vec<f64>,
    pub traffic: Vec<TrafficModel>,
    pub high_rate: Vec<bool>,
    pub first_packet_s: Vec<Option<f64>>,
}

const STREAM_PLACEMENT: u64 = 1;
const STREAM_BUDGETS: u64 = 2;
const STREAM_ROLES: u64 = 3;
const STREAM_TRAFFIC: u64 = 4;
const STREAM_BACKOFF: u64 = 5;
const STREAM_LOSS: u64 = 6;

/// Independent generator for one purpose (and optionally one node).
pub fn substream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng
}

pub fn build_deployment(cfg: &ScenarioConfig) -> Deployment {
    let n = cfg.node_count;
    if let Some(nodes) = &cfg.nodes {
        let traffic = nodes
            .iter()
            .map(|s| match (s.period_s, s.pph) {
                (Some(p), _) => TrafficModel::periodic(p),
                (None, Some((lo, hi))) => TrafficModel::from_rate_band(lo, hi),
                (None, None) => TrafficModel::from_rate_band(cfg.traffic.low_rate_pph.0, cfg.traffic.low_rate_pph.1),
            })
            .collect();
        return Deployment {
            positions: nodes.iter().map(|s| Position::new(s.x, s.y)).collect(),
            budgets: nodes.iter().map(|s| s.budget_j).collect(),
            traffic,
            high_rate: vec![false; n],
            first_packet_s: nodes.iter().map(|s| s.first_packet_s).collect(),
        };
    }

    let mut rng = substream(cfg.seed, STREAM_PLACEMENT, 0);
    let positions = (0..n)
        .map(|_| {
            let r = (cfg.disc_radius_m * rng.gen::<f64>().sqrt()).max(1.0);
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            Position::new(r * th.cos(), r * th.sin())
        })
        .collect();

    let budgets = match &cfg.budgets {
        Budgets::Uniform { lo, hi } => {
            let mut rng = substream(cfg.seed, STREAM_BUDGETS, 0);
            (0..n).map(|_| if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo }).collect()
        }
        Budgets::Explicit(v) => v.clone(),
        Budgets::Recharge(traces) => traces.iter().map(|t| super::config::integrate_recharge(t)).collect(),
    };

    let k = (cfg.traffic.high_rate_fraction * n as f64).round() as usize;
    let mut rng = substream(cfg.seed, STREAM_ROLES, 0);
    let mut high_rate = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k.min(n)) {
        high_rate[i] = true;
    }
    let traffic = high_rate
        .iter()
        .map(|&h| {
            let (lo, hi) = if h { cfg.traffic.high_rate_pph } else { cfg.traffic.low_rate_pph };
            TrafficModel::from_rate_band(lo, hi)
        })
        .collect();
    Deployment { positions, budgets, traffic, high_rate, first_packet_s: vec![None; n] }
}

#[derive(Debug, Clone)]
enum Ev {
    CycleReset { cycle: u32 },
    TxEnd { tx: u64 },
    ModeEnd { token: u64 },
    WindowClose { which: u8, token: u64 },
    AckSend { which: u8, token: u64 },
    ForwardStart { token: u64 },
    CadDetect { tx: u64, token: u64 },
    Retry { packet: Packet, epoch: u64 },
    Heartbeat,
    Arrival,
}

impl Ev {
    fn ordinal(&self) -> u8 {
        match self {
            Ev::CycleReset { .. } => 0,
            Ev::TxEnd { .. } => 1,
            Ev::ModeEnd { .. } => 2,
            Ev::WindowClose { .. } => 3,
            Ev::AckSend { .. } => 4,
            Ev::ForwardStart { .. } => 5,
            Ev::CadDetect { .. } => 6,
            Ev::Retry { .. } => 7,
            Ev::Heartbeat => 8,
            Ev::Arrival => 9,
        }
    }
}

struct Scheduled {
    t: f64,
    node: NodeId,
    ord: u8,
    seq: u64,
    ev: Ev,
}

impl Scheduled {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.node.cmp(&other.node))
            .then(self.ord.cmp(&other.ord))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // BinaryHeap is a max-heap; reverse for earliest-first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Own,
    Forward,
    Offload,
}

#[derive(Debug, Clone, Default)]
struct AckPayload {
    commands: Vec<ModeCommand>,
    new_conv: Option<TransmissionParams>,
}

#[derive(Debug, Clone)]
struct Uplink {
    packet: Packet,
    role: Role,
    params: TransmissionParams,
    tx_end: f64,
    gateway_ack: Option<AckPayload>,
    awaiting_ack: Option<u64>,
    window: u8,
}

#[derive(Debug, Clone)]
struct Relay {
    from: NodeId,
    tx: u64,
    packet: Option<Packet>,
    forward: bool,
    ack_params: TransmissionParams,
}

#[derive(Debug, Clone)]
enum Busy {
    Uplink(Box<Uplink>),
    Relay(Box<Relay>),
}

struct NodeRt {
    st: NodeState,
    queue: VecDeque<Packet>,
    busy: Option<Busy>,
    token: u64,
    mode_token: u64,
    epoch: u64,
    retry_pending: bool,
    incoming_ack: Option<(u64, f64)>,
    deferred: Option<ModeCommand>,
    relayed: BTreeSet<u64>,
    channel: u8,
    traffic_rng: ChaCha8Rng,
    backoff_rng: ChaCha8Rng,
}

struct Server {
    ledger: Vec<LedgerEntry>,
    window: RetransWindow,
    delivered: BTreeSet<u64>,
    adr: Vec<AdrState>,
    pending: BTreeMap<NodeId, Vec<ModeCommand>>,
    /// Offloading commands waiting for the partner's lading command to land,
    /// tagged with the plan sequence number they belong to.
    held: BTreeMap<NodeId, Vec<(NodeId, u64, ModeCommand)>>,
    plan_seq: Vec<u64>,
    awaiting_partner: Vec<bool>,
    committed_until: Vec<f64>,
    /// Start of the latest plan a node is part of, and whether it offloads in it.
    plan_start: Vec<f64>,
    offloads_in_plan: Vec<bool>,
    last_report_s: Vec<f64>,
    cells: CellMap,
}

struct AirFrame {
    tx: OnAirTransmission,
    /// Sender's consumption when the frame left, as reported in its header.
    sender_consumed_j: f64,
    kind: FrameKind,
    packet: Option<Packet>,
}

pub struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    protocol: Protocol,
    now: f64,
    duration: f64,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    nodes: Vec<NodeRt>,
    air: Vec<AirFrame>,
    listeners: BTreeMap<u64, Vec<NodeId>>,
    lading: BTreeSet<NodeId>,
    server: Server,
    log: EventLog,
    next_tx: u64,
    next_packet: u64,
    e_cad: f64,
    listen: TransmissionParams,
    cycle_start: f64,
    /// Uplink-loss draws, per receiver; the gateway is the last entry.
    loss_rng: Vec<ChaCha8Rng>,
    error: Option<SimError>,
}

fn gateway() -> Position {
    Position::default()
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ScenarioConfig, protocol: Protocol) -> Result<Self, SimError> {
        cfg.validate()?;
        let dep = build_deployment(cfg);
        let profile = &cfg.power_profile;
        let mut cells = CellMap::initial(cfg.channel_plan.count, cfg.disc_radius_m);
        cells.recolor();

        let mut listen = TransmissionParams::new(cfg.offload_sf, cfg.bandwidth_hz, profile.min_level(), cfg.offload_preamble())?;
        listen.iq_inverted = true;
        let e_cad = phy_energy::cad_cycle_energy(profile, &cfg.cad_timers, &listen)?;

        let mut nodes = Vec::with_capacity(cfg.node_count);
        let mut ledger = Vec::with_capacity(cfg.node_count);
        for i in 0..cfg.node_count {
            let id = i as NodeId;
            let pos = dep.positions[i];
            let d = pos.distance(&gateway());
            let sf = netserver::select_conventional_sf(
                &cfg.link,
                cfg.conventional_sf,
                profile.max_level(),
                d,
                cfg.planner.installation_margin_db,
            );
            let cell = cells.cell_of(&pos);
            let channel = cells.cells[cell].channel;
            let mut conv = TransmissionParams::new(sf, cfg.bandwidth_hz, profile.max_level(), cfg.conventional_preamble_symbols)?;
            conv.channel = channel;
            let budget = dep.budgets[i];
            let reserve = cfg.reserve_fraction * budget;
            let st = NodeState::new(id, pos, budget, reserve, dep.traffic[i], cfg.heartbeat_period_s, conv, cfg.cad_timers);
            ledger.push(LedgerEntry {
                id,
                budget_j: budget,
                reserve_j: reserve,
                consumed_j: 0.0,
                tau_s: st.tau_s,
                position: pos,
                cell,
                conv,
                payload_bytes: cfg.payload_bytes,
                last_contact_s: 0.0,
                heartbeat_period_s: cfg.heartbeat_period_s,
                live: true,
            });
            nodes.push(NodeRt {
                st,
                queue: VecDeque::new(),
                busy: None,
                token: 0,
                mode_token: 0,
                epoch: 0,
                retry_pending: false,
                incoming_ack: None,
                deferred: None,
                relayed: BTreeSet::new(),
                channel,
                traffic_rng: substream(cfg.seed, STREAM_TRAFFIC, i as u64),
                backoff_rng: substream(cfg.seed, STREAM_BACKOFF, i as u64),
            });
        }
        let window = match cfg.gamma {
            GammaMode::Window(w) => RetransWindow::new(w),
            GammaMode::Fixed(_) => RetransWindow::new(1),
        };
        let n = cfg.node_count;
        let mut sim = Simulation {
            cfg,
            protocol,
            now: 0.0,
            duration: cfg.duration(),
            heap: BinaryHeap::new(),
            seq: 0,
            nodes,
            air: Vec::new(),
            listeners: BTreeMap::new(),
            lading: BTreeSet::new(),
            server: Server {
                ledger,
                window,
                delivered: BTreeSet::new(),
                adr: vec![AdrState::default(); n],
                pending: BTreeMap::new(),
                held: BTreeMap::new(),
                plan_seq: vec![0; n],
                awaiting_partner: vec![false; n],
                committed_until: vec![f64::NEG_INFINITY; n],
                plan_start: vec![f64::NEG_INFINITY; n],
                offloads_in_plan: vec![false; n],
                last_report_s: vec![0.0; n],
                cells,
            },
            log: EventLog::default(),
            next_tx: 0,
            next_packet: 0,
            e_cad,
            listen,
            cycle_start: 0.0,
            loss_rng: (0..=n as u64).map(|i| substream(cfg.seed, STREAM_LOSS, i)).collect(),
            error: None,
        };

        for i in 0..n {
            let id = i as NodeId;
            let rt = &mut sim.nodes[i];
            let first = match dep.first_packet_s[i] {
                Some(t) => t,
                None => {
                    let gap = rt.st.traffic.sample(&mut rt.traffic_rng);
                    rt.traffic_rng.gen_range(0.0..gap)
                }
            };
            sim.schedule(first, id, Ev::Arrival);
            sim.schedule(cfg.heartbeat_period_s, id, Ev::Heartbeat);
        }
        let mut k = 1u32;
        while (k as f64) * cfg.recharge_cycle_s < sim.duration {
            sim.schedule(k as f64 * cfg.recharge_cycle_s, 0, Ev::CycleReset { cycle: k });
            k += 1;
        }
        Ok(sim)
    }

    fn schedule(&mut self, t: f64, node: NodeId, ev: Ev) {
        self.seq += 1;
        self.heap.push(Scheduled { t, node, ord: ev.ordinal(), seq: self.seq, ev });
    }

    fn profile(&self) -> &RadioPowerProfile {
        &self.cfg.power_profile
    }

    fn link(&self) -> &LinkModel {
        &self.cfg.link
    }

    pub fn run(mut self) -> Result<(Metrics, EventLog), SimError> {
        while let Some(s) = self.heap.pop() {
            if s.t > self.duration {
                break;
            }
            self.now = s.t;
            self.dispatch(s.node, s.ev)?;
            if let Some(e) = self.error.take() {
                return Err(e);
            }
        }
        self.now = self.duration;
        for v in self.lading.clone() {
            self.close_cad(v, self.duration.min(self.nodes[v as usize].st.lading_deadline_s))?;
        }
        let metrics = compute_metrics(&self.log, self.protocol, self.cfg.seed, self.cfg.node_count, self.duration);
        Ok((metrics, self.log))
    }

    fn dispatch(&mut self, n: NodeId, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::CycleReset { cycle } => self.on_cycle_reset(cycle),
            Ev::Arrival => self.on_arrival(n),
            Ev::Heartbeat => self.on_heartbeat(n),
            Ev::Retry { packet, epoch } => {
                let rt = &mut self.nodes[n as usize];
                if rt.epoch == epoch && !rt.st.depleted {
                    rt.retry_pending = false;
                    rt.queue.push_front(packet);
                    self.try_start(n)?;
                }
                Ok(())
            }
            Ev::TxEnd { tx } => self.on_tx_end(tx),
            Ev::WindowClose { which, token } => self.on_window_close(n, which, token),
            Ev::AckSend { which, token } => self.on_ack_send(n, which, token),
            Ev::ForwardStart { token } => self.on_forward_start(n, token),
            Ev::CadDetect { tx, token } => self.on_cad_detect(n, tx, token),
            Ev::ModeEnd { token } => self.on_mode_end(n, token),
        }
    }

    // ---- ledger -------------------------------------------------------

    fn debit(&mut self, n: NodeId, cause: DebitCause, joules: f64, cycles: u64) -> Result<(), SimError> {
        if !joules.is_finite() || joules < 0.0 {
            return Err(SimError::NonFiniteEnergy { node: n, cause, value: joules, t: self.now });
        }
        if joules == 0.0 {
            return Ok(());
        }
        self.log.push(Event::Debit { t: self.now, node: n, cause, joules, cycles });
        let rt = &mut self.nodes[n as usize];
        if rt.st.debit(joules) {
            self.on_depleted(n);
        } else if rt.st.mode == Mode::Lading && rt.st.cad.is_some() && rt.st.reserve_breached() {
            self.log.push(Event::LadingAbort { t: self.now, node: n });
            self.end_lading(n)?;
        }
        Ok(())
    }

    fn on_depleted(&mut self, n: NodeId) {
        let now = self.now;
        let rt = &mut self.nodes[n as usize];
        self.log.push(Event::Depleted { t: now, node: n, mode: rt.st.mode });
        rt.token += 1;
        rt.mode_token += 1;
        rt.epoch += 1;
        rt.busy = None;
        rt.queue.clear();
        rt.retry_pending = false;
        rt.incoming_ack = None;
        rt.deferred = None;
        rt.st.revert();
        self.lading.remove(&n);
    }

    /// Charges idle CAD cycles before a radio activity on `[start, end]`.
    fn radio_busy(&mut self, n: NodeId, start: f64, end: f64) -> Result<(), SimError> {
        let rt = &mut self.nodes[n as usize];
        if let Some(cad) = rt.st.cad.as_mut() {
            let cycles = cad.busy(start, end);
            if cycles > 0 {
                let e = cycles as f64 * self.e_cad;
                self.debit(n, DebitCause::Cad, e, cycles)?;
            }
        }
        Ok(())
    }

    fn close_cad(&mut self, n: NodeId, t: f64) -> Result<(), SimError> {
        let rt = &mut self.nodes[n as usize];
        if let Some(mut cad) = rt.st.cad.take() {
            let cycles = cad.close(t);
            if cycles > 0 {
                let e = cycles as f64 * self.e_cad;
                self.debit(n, DebitCause::Cad, e, cycles)?;
            }
        }
        Ok(())
    }

    fn end_lading(&mut self, n: NodeId) -> Result<(), SimError> {
        let rt = &mut self.nodes[n as usize];
        let from = rt.st.mode;
        rt.st.mode = Mode::Conventional;
        rt.mode_token += 1;
        self.lading.remove(&n);
        self.log.push(Event::ModeChange { t: self.now, node: n, from, to: Mode::Conventional, until: None });
        self.close_cad(n, self.now)?;
        self.nodes[n as usize].st.revert();
        Ok(())
    }

    // ---- traffic --------------------------------------------------------

    fn new_packet(&mut self, n: NodeId, kind: PacketKind) -> Packet {
        self.next_packet += 1;
        Packet {
            id: self.next_packet,
            origin: n,
            carrier: n,
            payload_bytes: if kind == PacketKind::Data { self.cfg.payload_bytes } else { 0 },
            created_s: self.now,
            attempts: 0,
            origin_attempts: 0,
            kind,
            origin_consumed_j: 0.0,
        }
    }

    fn on_arrival(&mut self, n: NodeId) -> Result<(), SimError> {
        let rt = &mut self.nodes[n as usize];
        let gap = rt.st.traffic.sample(&mut rt.traffic_rng);
        let depleted = rt.st.depleted;
        self.schedule(self.now + gap, n, Ev::Arrival);
        if depleted {
            return Ok(());
        }
        let p = self.new_packet(n, PacketKind::Data);
        self.nodes[n as usize].queue.push_back(p);
        self.try_start(n)
    }

    fn on_heartbeat(&mut self, n: NodeId) -> Result<(), SimError> {
        let rt = &self.nodes[n as usize];
        let hb = rt.st.heartbeat_period_s;
        if rt.st.heartbeat_due(self.now) && rt.queue.is_empty() && rt.busy.is_none() && !rt.retry_pending {
            let p = self.new_packet(n, PacketKind::Heartbeat);
            self.nodes[n as usize].queue.push_back(p);
            self.try_start(n)?;
            self.schedule(self.now + hb, n, Ev::Heartbeat);
        } else {
            let next = (self.nodes[n as usize].st.last_gateway_tx_s + hb).max(self.now + 1.0);
            self.schedule(next, n, Ev::Heartbeat);
        }
        Ok(())
    }

    fn try_start(&mut self, n: NodeId) -> Result<(), SimError> {
        let rt = &mut self.nodes[n as usize];
        if rt.busy.is_some() || rt.retry_pending || rt.st.depleted {
            return Ok(());
        }
        match rt.queue.pop_front() {
            Some(p) => self.start_uplink(n, p),
            None => Ok(()),
        }
    }

    // ---- uplinks ----------------------------------------------------------

    fn start_uplink(&mut self, n: NodeId, mut p: Packet) -> Result<(), SimError> {
        let now = self.now;
        let rt = &mut self.nodes[n as usize];
        p.attempts += 1;
        let role = if p.origin != n {
            Role::Forward
        } else if p.kind == PacketKind::Data && rt.st.offloading_at(now) {
            Role::Offload
        } else {
            Role::Own
        };
        let (params, target) = match role {
            Role::Offload => {
                let mut o = rt.st.offload_params.expect("offloading without parameters");
                o.channel = rt.channel;
                (o, Target::Node(rt.st.partner.expect("offloading without partner")))
            }
            Role::Forward => {
                // The relayed frame keeps the long, CAD-compatible preamble.
                let mut c = rt.st.conv_params.with_preamble(self.cfg.offload_preamble());
                c.channel = rt.channel;
                (c, Target::Gateway)
            }
            Role::Own => {
                let mut c = rt.st.conv_params;
                c.channel = rt.channel;
                (c, Target::Gateway)
            }
        };
        if role != Role::Forward {
            p.origin_consumed_j = rt.st.consumed_j;
        }
        if role != Role::Offload {
            rt.st.last_gateway_tx_s = now;
        }
        let frame = Frame::Data(p.payload_bytes);
        let air = phy_energy::airtime(&params, frame)?;
        let energy = phy_energy::tx_energy(&self.cfg.power_profile, &params, frame)?;
        let end = now + air;
        rt.token += 1;
        rt.incoming_ack = None;
        rt.busy = Some(Busy::Uplink(Box::new(Uplink {
            packet: p.clone(),
            role,
            params,
            tx_end: end,
            gateway_ack: None,
            awaiting_ack: None,
            window: 1,
        })));
        let kind = if p.kind == PacketKind::Heartbeat { FrameKind::Heartbeat } else { FrameKind::Data };
        let tx_id = self.put_on_air(n, params, now, end, target, kind, Some(p.clone()));
        self.radio_busy(n, now, end)?;
        let cause = match role {
            Role::Own => DebitCause::Tx,
            Role::Forward => DebitCause::ForwardTx,
            Role::Offload => DebitCause::OffloadTx,
        };
        self.debit(n, cause, energy, 0)?;
        if role == Role::Offload {
            self.schedule_detections(tx_id)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn put_on_air(
        &mut self,
        n: NodeId,
        params: TransmissionParams,
        start: f64,
        end: f64,
        target: Target,
        kind: FrameKind,
        packet: Option<Packet>,
    ) -> u64 {
        self.next_tx += 1;
        let id = self.next_tx;
        let sym = params.symbol_duration().unwrap_or(0.0);
        let tx = OnAirTransmission {
            id,
            sender: n,
            sender_pos: self.nodes[n as usize].st.position,
            params,
            start_s: start,
            preamble_end_s: start + params.preamble_symbols as f64 * sym,
            end_s: end,
            packet_id: packet.as_ref().map_or(0, |p| p.id),
            payload_bytes: packet.as_ref().map_or(0, |p| p.payload_bytes),
            target,
        };
        self.log.push(Event::TxStart {
            t: start,
            node: n,
            tx: id,
            packet: packet.as_ref().map(|p| p.id),
            origin: packet.as_ref().map_or(n, |p| p.origin),
            frame: kind,
            target,
            sf: params.sf,
            channel: params.channel,
            power_dbm: params.power_dbm,
            iq_inverted: params.iq_inverted,
            end,
        });
        let sender_consumed_j = self.nodes[n as usize].st.consumed_j;
        self.air.push(AirFrame { tx, sender_consumed_j, kind, packet });
        self.schedule(end, n, Ev::TxEnd { tx: id });
        id
    }

    /// Lading nodes whose CAD grid will catch this offload frame.
    fn schedule_detections(&mut self, tx_id: u64) -> Result<(), SimError> {
        let tx = self.air.last().expect("just pushed").tx.clone();
        let probe_s = phy_energy::cad_probe_duration(self.cfg.offload_sf, self.cfg.bandwidth_hz)?;
        let mut hits = Vec::new();
        for &m in &self.lading {
            if m == tx.sender {
                continue;
            }
            let rt = &self.nodes[m as usize];
            let Some(cad) = rt.st.cad else { continue };
            let tuning = Tuning { channel: rt.channel, ..Tuning::of(&self.listen) };
            if !medium::receivable(&tx, &rt.st.position, &tuning, &self.cfg.link) {
                continue;
            }
            let sched = medium::CadSchedule { epoch_s: cad.epoch_s, timers: self.cfg.cad_timers, probe_s };
            if let Some(p) = sched.first_detection(&tx) {
                if p < rt.st.lading_deadline_s {
                    hits.push((m, p, rt.mode_token));
                }
            }
        }
        for (m, p, token) in hits {
            self.schedule(p, m, Ev::CadDetect { tx: tx_id, token });
        }
        Ok(())
    }

    fn frame(&self, tx: u64) -> Option<&AirFrame> {
        self.air.iter().find(|f| f.tx.id == tx)
    }

    fn survives(&self, tx: &OnAirTransmission, at: &Position) -> bool {
        medium::survives_at(tx, self.air.iter().map(|f| &f.tx), at, &self.cfg.link)
    }

    fn lost(&mut self, receiver: usize) -> bool {
        let p = if receiver == self.nodes.len() {
            self.cfg.link.uplink_loss_probability
        } else {
            self.cfg.link.offload_loss_probability
        };
        p > 0.0 && self.loss_rng[receiver].gen_bool(p)
    }

    fn window_len(&self, params: &TransmissionParams) -> Result<f64, SimError> {
        Ok(self.cfg.mac.window_symbols * params.symbol_duration()?)
    }

    fn gateway_ack_airtime(&self, params: &TransmissionParams) -> Result<f64, SimError> {
        Ok(phy_energy::airtime(&params.with_preamble(self.cfg.mac.gateway_ack_preamble), Frame::Ack)?)
    }

    fn on_tx_end(&mut self, tx_id: u64) -> Result<(), SimError> {
        let Some(frame) = self.frame(tx_id) else { return Ok(()) };
        let tx = frame.tx.clone();
        let kind = frame.kind;
        let packet = frame.packet.clone();
        let reported_j = frame.sender_consumed_j;
        let s = tx.sender;

        match tx.target {
            Target::Gateway => {
                let gw = gateway();
                let in_range = !tx.params.iq_inverted
                    && self.link().sensitivity(tx.params.sf).is_some_and(|sens| medium::received_power_dbm(&tx, &gw) >= sens);
                let clear = in_range && self.survives(&tx, &gw);
                if in_range && !clear {
                    self.log.push(Event::Collision { t: self.now, tx: tx_id, node: s, receiver: None });
                }
                let gw_index = self.nodes.len();
                let ok = clear && !self.lost(gw_index);
                let payload = match (ok, packet) {
                    (true, Some(p)) => Some(self.gateway_receive(&tx, &p, reported_j)?),
                    _ => None,
                };
                let token = self.nodes[s as usize].token;
                let delay = self.cfg.mac.rx1_delay_s;
                let mut close = None;
                if let Some(Busy::Uplink(u)) = self.nodes[s as usize].busy.as_mut() {
                    if u.tx_end == tx.end_s && u.role != Role::Offload {
                        u.gateway_ack = payload;
                        close = Some((u.gateway_ack.is_some(), u.params));
                    }
                }
                if let Some((acked, params)) = close {
                    let len = if acked { self.gateway_ack_airtime(&params)? } else { self.window_len(&params)? };
                    self.schedule(tx.end_s + delay + len, s, Ev::WindowClose { which: 1, token });
                }
            }
            Target::Node(dst) => {
                for m in self.listeners.remove(&tx_id).unwrap_or_default() {
                    self.relay_receive(m, &tx, packet.clone())?;
                }
                match kind {
                    FrameKind::Ack => self.ack_arrives(dst, &tx)?,
                    _ => {
                        let token = self.nodes[s as usize].token;
                        let mut params = None;
                        if let Some(Busy::Uplink(u)) = self.nodes[s as usize].busy.as_ref() {
                            if u.role == Role::Offload && u.tx_end == tx.end_s {
                                params = Some(u.params);
                            }
                        }
                        if let Some(p) = params {
                            let at = tx.end_s + self.cfg.mac.rx1_delay_s + self.window_len(&p)?;
                            self.schedule(at, s, Ev::WindowClose { which: 1, token });
                        }
                    }
                }
            }
            Target::Broadcast => {}
        }

        let horizon = self.now - 30.0;
        self.air.retain(|f| f.tx.end_s >= horizon);
        Ok(())
    }

    /// Network-server side of a successful gateway reception.
    fn gateway_receive(&mut self, tx: &OnAirTransmission, p: &Packet, carrier_consumed_j: f64) -> Result<AckPayload, SimError> {
        let now = self.now;
        let carrier = tx.sender;
        let sv = &mut self.server;
        if sv.delivered.insert(p.id) {
            if p.kind == PacketKind::Data {
                self.log.push(Event::Delivered {
                    t: now,
                    packet: p.id,
                    origin: p.origin,
                    carrier,
                    bytes: p.payload_bytes,
                    attempts: p.attempts,
                });
            }
        } else {
            self.log.push(Event::Duplicate { t: now, packet: p.id, carrier });
        }
        sv.window.push(p.attempts.clamp(1, 8));
        let c = carrier as usize;
        sv.ledger[c].last_contact_s = now;
        sv.last_report_s[c] = now;
        sv.ledger[c].consumed_j = carrier_consumed_j;
        if p.origin != carrier {
            let o = p.origin as usize;
            sv.ledger[o].consumed_j = sv.ledger[o].consumed_j.max(p.origin_consumed_j);
            sv.last_report_s[o] = now;
        }
        for e in sv.ledger.iter_mut() {
            e.live = e.consumed_j < e.budget_j;
        }

        let mut payload = AckPayload::default();
        let margin = self
            .cfg
            .link
            .margin_db(tx.params.power_dbm as f64, tx.params.sf, tx.sender_pos.distance(&gateway()))
            .unwrap_or(f64::NEG_INFINITY);
        let cur = sv.ledger[c].conv;
        let next = netserver::adr_update(
            &mut sv.adr[c],
            &cur,
            margin,
            self.cfg.planner.adr_min_margin_db,
            self.cfg.planner.adr_every,
            &self.cfg.power_profile,
        );
        if next != cur {
            sv.ledger[c].conv = next;
            payload.new_conv = Some(next);
        }

        if self.protocol == Protocol::Lll {
            self.replan()?;
        }
        payload.commands = self.server.pending.remove(&carrier).unwrap_or_default();
        Ok(payload)
    }

    fn gamma(&self) -> f64 {
        match self.cfg.gamma {
            GammaMode::Fixed(g) => g,
            GammaMode::Window(_) => netserver::estimate_gamma(&self.server.window).max(1.0),
        }
    }

    /// Classification then pairing over the nodes not already committed to
    /// a plan, and the resulting commands queued for the next downlinks.
    fn replan(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let cycle_end = self.cycle_start + self.cfg.recharge_cycle_s;
        let t_rem = (cycle_end - now).max(0.0);
        let gamma = self.gamma();
        let sv = &self.server;
        // Free nodes with a report since their last plan ended, plus offloading
        // nodes whose current plan has started and has no successor yet: their
        // next partner is chosen ahead of time and takes over when it ends.
        let eligible: Vec<LedgerEntry> = sv
            .ledger
            .iter()
            .filter(|e| {
                let i = e.id as usize;
                let free = now >= sv.committed_until[i] && sv.last_report_s[i] > sv.committed_until[i];
                let chaining = sv.offloads_in_plan[i]
                    && !sv.awaiting_partner[i]
                    && now >= sv.plan_start[i]
                    && sv.last_report_s[i] > sv.plan_start[i];
                e.live && (free || chaining)
            })
            .cloned()
            .collect();
        let class = netserver::classify_nodes(&eligible, &self.cfg.power_profile, gamma, t_rem)?;
        if class.depleting.is_empty() || class.affluent.is_empty() {
            return Ok(());
        }
        let cell_of = |id: NodeId| sv.ledger[id as usize].cell;
        let dep_cells: BTreeSet<usize> = class.depleting.iter().map(|&u| cell_of(u)).collect();
        if !class.affluent.iter().any(|&v| dep_cells.contains(&cell_of(v))) {
            return Ok(());
        }

        let residual: BTreeMap<NodeId, f64> = class
            .affluent
            .iter()
            .map(|&v| (v, netserver::residual_energy(&sv.ledger[v as usize], class.e_cm[&v])))
            .collect();
        let mut affluent = Vec::new();
        for &v in &class.affluent {
            let e = &sv.ledger[v as usize];
            if residual[&v] <= 0.0 || !dep_cells.contains(&e.cell) {
                continue;
            }
            affluent.push(AffluentCandidate {
                id: v,
                residual_j: residual[&v],
                conv: e.conv,
                t_rx_s: self.cfg.mac.window_symbols * e.conv.symbol_duration()?,
            });
        }
        let depleting: Vec<DepletingCandidate> = class
            .depleting
            .iter()
            .map(|&u| {
                let e = &sv.ledger[u as usize];
                DepletingCandidate { id: u, tau_s: e.tau_s, payload_bytes: e.payload_bytes }
            })
            .collect();

        let cap = self.cfg.planner.lading_cap_s.unwrap_or(f64::INFINITY).min(t_rem);
        let mut ctx = PlannerContext {
            profile: &self.cfg.power_profile,
            timers: self.cfg.cad_timers,
            listen: self.listen,
            gamma,
            divisor: self.cfg.planner.correction_divisor,
            cap_s: cap,
        };
        let profile = &self.cfg.power_profile;
        let link = &self.cfg.link;
        let listen = self.listen;
        let cells = &sv.cells;
        let offload_for = |v: &AffluentCandidate, u: &DepletingCandidate| {
            let a = &sv.ledger[v.id as usize];
            let b = &sv.ledger[u.id as usize];
            let level = netserver::offload_power_level(profile, link, listen.sf, a.position.distance(&b.position))?;
            let mut p = listen.with_power(level);
            p.channel = cells.cells[b.cell].channel;
            Some(p)
        };
        let plan = netserver::select_pairs(&ctx, &affluent, &depleting, &cell_of, &offload_for)?;
        if plan.pairs.is_empty() {
            return Ok(());
        }
        let res = |v: NodeId| residual.get(&v).copied().unwrap_or(0.0);
        let plan = netserver::assign_unique_partners(&ctx, plan, &res)?;
        let contact = |id: NodeId| {
            let e = &sv.ledger[id as usize];
            ContactInfo { last_contact_s: e.last_contact_s, heartbeat_period_s: e.heartbeat_period_s, tau_s: e.tau_s }
        };
        let mut tr = netserver::schedule_mode_transition(plan, &contact, now, self.cfg.mac.guard_s, cycle_end);
        for p in &tr.plan.pairs {
            for x in [p.depleting, p.affluent] {
                tr.plan.effective_start_s = tr.plan.effective_start_s.max(sv.committed_until[x as usize]);
            }
        }
        if tr.plan.effective_start_s >= cycle_end {
            return Ok(());
        }
        ctx.cap_s = self.cfg.planner.lading_cap_s.unwrap_or(f64::INFINITY).min(cycle_end - tr.plan.effective_start_s);
        netserver::recompute_lading_times(&ctx, &mut tr.plan, &res)?;
        if tr.plan.pairs.is_empty() {
            return Ok(());
        }
        netserver::check_plan(&ctx, &tr.plan, &res).map_err(|message| SimError::InfeasiblePlan { t: now, message })?;

        let commands = netserver::plan_commands(&tr.plan, self.cfg.mac.guard_s);
        let pairs: Vec<PairInfo> = tr
            .plan
            .pairs
            .iter()
            .map(|p| PairInfo {
                depleting: p.depleting,
                affluent: p.affluent,
                offload_power_dbm: p.offload.power_dbm,
                e_om_j: p.e_om_j,
            })
            .collect();
        let event = Event::Plan {
            t: now,
            gamma,
            affluent: class.affluent.iter().copied().collect(),
            depleting: class.depleting.iter().copied().collect(),
            pairs,
            t_lm_s: tr.plan.t_lm_s.iter().map(|(&v, &t)| (v, t)).collect(),
            start_s: tr.plan.effective_start_s,
            dropped: tr.dropped.clone(),
        };
        let sv = &mut self.server;
        let start = tr.plan.effective_start_s;
        for (node, cmd) in commands {
            let i = node as usize;
            sv.plan_start[i] = start;
            match cmd {
                ModeCommand::EnterLading { until_s, .. } => {
                    sv.committed_until[i] = until_s;
                    sv.offloads_in_plan[i] = false;
                    sv.pending.entry(node).or_default().push(cmd);
                }
                ModeCommand::EnterOffloading { partner, until_s, .. } => {
                    sv.committed_until[i] = until_s;
                    sv.offloads_in_plan[i] = true;
                    sv.awaiting_partner[i] = true;
                    sv.plan_seq[i] += 1;
                    sv.held.entry(partner).or_default().push((node, sv.plan_seq[i], cmd));
                }
                ModeCommand::RevertConventional => {}
            }
        }
        self.log.push(event);
        Ok(())
    }

    fn on_window_close(&mut self, n: NodeId, which: u8, token: u64) -> Result<(), SimError> {
        let rt = &self.nodes[n as usize];
        if rt.token != token {
            return Ok(());
        }
        let Some(Busy::Uplink(u)) = rt.busy.clone() else { return Ok(()) };
        let delay = if which == 1 { self.cfg.mac.rx1_delay_s } else { self.cfg.mac.rx2_delay_s };
        let open = u.tx_end + delay;
        let p_rx = self.profile().p_rx_w;

        if u.role == Role::Offload {
            if let Some((ack, start)) = self.nodes[n as usize].incoming_ack.take() {
                if start >= open - 1e-9 && start <= self.now + 1e-9 && self.frame(ack).is_some() {
                    if let Some(Busy::Uplink(b)) = self.nodes[n as usize].busy.as_mut() {
                        b.awaiting_ack = Some(ack);
                        b.window = which;
                    }
                    return Ok(());
                }
            }
            let len = self.window_len(&u.params)?;
            self.radio_busy(n, open, open + len)?;
            self.debit(n, DebitCause::OffloadRxWindow, p_rx * len, 0)?;
            return self.after_window(n, which, &u);
        }

        let cause = if u.role == Role::Forward { DebitCause::ForwardRxWindow } else { DebitCause::RxWindow };
        if which == 1 {
            if let Some(ack) = u.gateway_ack.clone() {
                let len = self.gateway_ack_airtime(&u.params)?;
                self.radio_busy(n, open, open + len)?;
                self.debit(n, cause, p_rx * len, 0)?;
                if self.nodes[n as usize].token != token {
                    return Ok(());
                }
                self.apply_ack(n, ack)?;
                return self.uplink_done(n, &u);
            }
        }
        let len = self.window_len(&u.params)?;
        self.radio_busy(n, open, open + len)?;
        self.debit(n, cause, p_rx * len, 0)?;
        self.after_window(n, which, &u)
    }

    /// An empty or failed window: open RX2 or give up on this attempt.
    fn after_window(&mut self, n: NodeId, which: u8, u: &Uplink) -> Result<(), SimError> {
        let rt = &self.nodes[n as usize];
        if rt.st.depleted || rt.busy.is_none() {
            return Ok(());
        }
        if which == 1 {
            let token = rt.token;
            let at = u.tx_end + self.cfg.mac.rx2_delay_s + self.window_len(&u.params)?;
            if let Some(Busy::Uplink(b)) = self.nodes[n as usize].busy.as_mut() {
                b.window = 2;
            }
            self.schedule(at, n, Ev::WindowClose { which: 2, token });
            return Ok(());
        }
        self.uplink_failed(n, u)
    }

    fn uplink_done(&mut self, n: NodeId, u: &Uplink) -> Result<(), SimError> {
        let rt = &mut self.nodes[n as usize];
        rt.st.record_attempts(u.packet.attempts);
        rt.busy = None;
        self.try_start(n)
    }

    fn uplink_failed(&mut self, n: NodeId, u: &Uplink) -> Result<(), SimError> {
        let max = self.cfg.mac.max_attempts;
        let base = self.cfg.mac.backoff_base_s;
        let rt = &mut self.nodes[n as usize];
        rt.busy = None;
        if u.packet.attempts >= max {
            rt.st.record_attempts(u.packet.attempts);
            self.log.push(Event::Dropped { t: self.now, node: n, packet: u.packet.id });
            return self.try_start(n);
        }
        let d = backoff_delay(u.packet.attempts, base, &mut rt.backoff_rng);
        rt.retry_pending = true;
        let epoch = rt.epoch;
        self.schedule(self.now + d, n, Ev::Retry { packet: u.packet.clone(), epoch });
        Ok(())
    }

    fn apply_ack(&mut self, n: NodeId, ack: AckPayload) -> Result<(), SimError> {
        if let Some(p) = ack.new_conv {
            let rt = &mut self.nodes[n as usize];
            rt.st.conv_params.power_dbm = p.power_dbm;
        }
        for cmd in ack.commands {
            let rt = &mut self.nodes[n as usize];
            if let ModeCommand::EnterOffloading { from_s, .. } = cmd {
                // Successor of the current offloading period: wait for it to end.
                if rt.st.offloading_at(self.now) && from_s > self.now {
                    rt.deferred = Some(cmd);
                    continue;
                }
            }
            self.apply_command(n, cmd);
        }
        Ok(())
    }

    fn apply_command(&mut self, n: NodeId, mut cmd: ModeCommand) {
        let mut released = Vec::new();
        if let ModeCommand::EnterLading { listen_from_s, until_s } = &mut cmd {
            // Commands reach Class A nodes only after their next uplink. A late
            // lading command keeps its granted duration; the partners' windows
            // move with it. Partners that were replanned meanwhile are dropped.
            let sv = &mut self.server;
            released = sv.held.remove(&n).unwrap_or_default();
            released.retain(|(u, seq, _)| {
                let i = *u as usize;
                sv.awaiting_partner[i] && sv.plan_seq[i] == *seq && sv.ledger[i].live
            });
            if released.is_empty() {
                return;
            }
            let cycle_end = self.cycle_start + self.cfg.recharge_cycle_s;
            let delay = (self.now - *listen_from_s).max(0.0);
            *listen_from_s += delay;
            *until_s = (*until_s + delay).min(cycle_end);
            sv.committed_until[n as usize] = *until_s;
            for (u, _, c) in released.iter_mut() {
                if let ModeCommand::EnterOffloading { from_s, until_s: end, .. } = c {
                    *from_s += delay;
                    *end = (*end + delay).min(cycle_end);
                    let i = *u as usize;
                    sv.plan_start[i] = *from_s;
                    sv.committed_until[i] = *end;
                    sv.awaiting_partner[i] = false;
                }
            }
        }
        let rt = &mut self.nodes[n as usize];
        let from = rt.st.mode;
        if !rt.st.apply_mode_command(&cmd, self.now) {
            return;
        }
        rt.mode_token += 1;
        let token = rt.mode_token;
        let until = rt.st.lading_deadline_s;
        let to = rt.st.mode;
        self.log.push(Event::ModeChange { t: self.now, node: n, from, to, until: Some(until) });
        self.schedule(until, n, Ev::ModeEnd { token });
        if let ModeCommand::EnterLading { .. } = cmd {
            self.lading.insert(n);
            for (u, _, c) in released {
                self.server.pending.entry(u).or_default().push(c);
            }
        }
    }

    fn on_mode_end(&mut self, n: NodeId, token: u64) -> Result<(), SimError> {
        let rt = &self.nodes[n as usize];
        if rt.mode_token != token || rt.st.depleted {
            return Ok(());
        }
        match rt.st.mode {
            Mode::Lading => self.end_lading(n),
            Mode::Offloading => {
                let rt = &mut self.nodes[n as usize];
                if let Some(cmd) = rt.deferred.take() {
                    self.apply_command(n, cmd);
                    return Ok(());
                }
                rt.st.revert();
                rt.mode_token += 1;
                self.log.push(Event::ModeChange {
                    t: self.now,
                    node: n,
                    from: Mode::Offloading,
                    to: Mode::Conventional,
                    until: None,
                });
                Ok(())
            }
            Mode::Conventional => Ok(()),
        }
    }

    // ---- lading side ------------------------------------------------------

    fn on_cad_detect(&mut self, m: NodeId, tx_id: u64, token: u64) -> Result<(), SimError> {
        let now = self.now;
        let rt = &self.nodes[m as usize];
        if rt.mode_token != token || rt.busy.is_some() || rt.st.depleted || !rt.st.lading_at(now) {
            return Ok(());
        }
        let Some(frame) = self.frame(tx_id) else { return Ok(()) };
        let tx = frame.tx.clone();
        let foreign = tx.target != Target::Node(m);
        self.log.push(Event::CadWake { t: now, node: m, tx: tx_id, foreign });
        let rt = &mut self.nodes[m as usize];
        rt.token += 1;
        rt.busy = Some(Busy::Relay(Box::new(Relay {
            from: tx.sender,
            tx: tx_id,
            packet: None,
            forward: false,
            ack_params: tx.params,
        })));
        self.listeners.entry(tx_id).or_default().push(m);
        self.radio_busy(m, now, tx.end_s)
    }

    fn relay_receive(&mut self, m: NodeId, tx: &OnAirTransmission, packet: Option<Packet>) -> Result<(), SimError> {
        let rt = &self.nodes[m as usize];
        match rt.busy.as_ref() {
            Some(Busy::Relay(r)) if r.tx == tx.id => {}
            _ => return Ok(()),
        }
        let tuning = Tuning { channel: rt.channel, ..Tuning::of(&self.listen) };
        let pos = rt.st.position;
        let clear = medium::receivable(tx, &pos, &tuning, &self.cfg.link) && self.survives(tx, &pos);
        let foreign = tx.target != Target::Node(m);
        let ok = clear && (foreign || !self.lost(m as usize));
        let cause = if foreign { DebitCause::ForeignRx } else { DebitCause::RelayRx };
        let e = phy_energy::rx_energy(self.profile(), tx.end_s - tx.start_s)?;
        self.debit(m, cause, e, 0)?;
        if self.nodes[m as usize].st.depleted {
            return Ok(());
        }
        if !clear {
            self.log.push(Event::Collision { t: self.now, tx: tx.id, node: tx.sender, receiver: Some(m) });
        }
        let Some(p) = packet.filter(|_| ok && !foreign) else {
            self.nodes[m as usize].busy = None;
            return self.try_start(m);
        };
        self.log.push(Event::Offloaded { t: self.now, packet: p.id, origin: p.origin, carrier: m });
        let rt = &mut self.nodes[m as usize];
        rt.st.served.insert(p.origin);
        let fresh = !rt.relayed.contains(&p.id);
        if let Some(Busy::Relay(r)) = rt.busy.as_mut() {
            r.forward = fresh;
            r.packet = Some(Packet { carrier: m, attempts: 0, origin_attempts: p.attempts, ..p });
        }
        let token = rt.token;
        self.schedule(tx.end_s + self.cfg.mac.rx1_delay_s, m, Ev::AckSend { which: 1, token });
        self.schedule(tx.end_s + self.cfg.mac.rx2_delay_s, m, Ev::AckSend { which: 2, token });
        Ok(())
    }

    fn on_ack_send(&mut self, m: NodeId, which: u8, token: u64) -> Result<(), SimError> {
        let rt = &self.nodes[m as usize];
        if rt.token != token {
            return Ok(());
        }
        let Some(Busy::Relay(r)) = rt.busy.clone() else { return Ok(()) };
        let mut params = r.ack_params;
        params.channel = rt.channel;
        let air = phy_energy::airtime(&params, Frame::Ack)?;
        let e = phy_energy::tx_energy(self.profile(), &params, Frame::Ack)?;
        let now = self.now;
        let id = self.put_on_air(m, params, now, now + air, Target::Node(r.from), FrameKind::Ack, None);
        self.nodes[r.from as usize].incoming_ack = Some((id, now));
        self.radio_busy(m, now, now + air)?;
        self.debit(m, DebitCause::RelayAckTx, e, 0)?;
        if which == 2 && self.nodes[m as usize].token == token {
            self.schedule(now + air, m, Ev::ForwardStart { token });
        }
        Ok(())
    }

    /// ACK frame from a lading node reaches the depleting node.
    fn ack_arrives(&mut self, u: NodeId, tx: &OnAirTransmission) -> Result<(), SimError> {
        let rt = &self.nodes[u as usize];
        let Some(Busy::Uplink(up)) = rt.busy.clone() else { return Ok(()) };
        if up.awaiting_ack != Some(tx.id) {
            return Ok(());
        }
        let mut tuning = Tuning::of(&up.params);
        tuning.channel = rt.channel;
        let pos = rt.st.position;
        let ok = medium::receivable(tx, &pos, &tuning, &self.cfg.link) && self.survives(tx, &pos);
        let open = up.tx_end + if up.window == 1 { self.cfg.mac.rx1_delay_s } else { self.cfg.mac.rx2_delay_s };
        let len = tx.end_s - open.min(tx.start_s);
        self.radio_busy(u, open.min(tx.start_s), tx.end_s)?;
        self.debit(u, DebitCause::OffloadRxWindow, self.profile().p_rx_w * len, 0)?;
        if self.nodes[u as usize].busy.is_none() {
            return Ok(());
        }
        if ok {
            return self.uplink_done(u, &up);
        }
        self.log.push(Event::Collision { t: self.now, tx: tx.id, node: tx.sender, receiver: Some(u) });
        if let Some(Busy::Uplink(b)) = self.nodes[u as usize].busy.as_mut() {
            b.awaiting_ack = None;
        }
        self.after_window(u, up.window, &up)
    }

    fn on_forward_start(&mut self, m: NodeId, token: u64) -> Result<(), SimError> {
        let rt = &mut self.nodes[m as usize];
        if rt.token != token {
            return Ok(());
        }
        let Some(Busy::Relay(r)) = rt.busy.take() else { return Ok(()) };
        match r.packet {
            Some(p) if r.forward => {
                rt.relayed.insert(p.id);
                self.start_uplink(m, p)
            }
            _ => self.try_start(m),
        }
    }

    // ---- recharge cycles -------------------------------------------------

    fn on_cycle_reset(&mut self, cycle: u32) -> Result<(), SimError> {
        let now = self.now;
        for v in self.lading.clone() {
            let t = now.min(self.nodes[v as usize].st.lading_deadline_s);
            self.close_cad(v, t)?;
        }
        self.lading.clear();

        // Split crowded cells using the last classification of every node.
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &self.server.ledger {
            *counts.entry(e.cell).or_default() += 1;
        }
        self.server.cells.split_crowded(&counts, self.cfg.planner.split_threshold);

        for i in 0..self.nodes.len() {
            let rt = &mut self.nodes[i];
            if let Some(Busy::Uplink(u)) = rt.busy.take() {
                self.log.push(Event::Dropped { t: now, node: i as NodeId, packet: u.packet.id });
            }
            let rt = &mut self.nodes[i];
            let budget = rt.st.budget_j;
            let reserve = rt.st.reserve_j;
            rt.st.reset_cycle(budget, reserve);
            rt.token += 1;
            rt.mode_token += 1;
            rt.epoch += 1;
            rt.retry_pending = false;
            rt.incoming_ack = None;
            rt.deferred = None;
            rt.relayed.clear();
            let cell = self.server.cells.cell_of(&rt.st.position);
            rt.channel = self.server.cells.cells[cell].channel;
            let e = &mut self.server.ledger[i];
            e.cell = cell;
            e.consumed_j = 0.0;
            e.live = true;
            e.conv.channel = rt.channel;
            self.server.committed_until[i] = f64::NEG_INFINITY;
            self.server.plan_start[i] = f64::NEG_INFINITY;
            self.server.offloads_in_plan[i] = false;
            self.server.awaiting_partner[i] = false;
        }
        self.server.pending.clear();
        self.server.held.clear();
        self.cycle_start = now;
        self.log.push(Event::CycleReset { t: now, cycle, cells: self.server.cells.cells.len() });
        for i in 0..self.nodes.len() {
            self.try_start(i as NodeId)?;
        }
        Ok(())
    }
}

/// Runs `cfg` with its own protocol setting.
pub fn run_simulation(cfg: &ScenarioConfig) -> Result<(Metrics, EventLog), SimError> {
    Simulation::new(cfg, cfg.protocol)?.run()
}

pub fn run_with_protocol(cfg: &ScenarioConfig, protocol: Protocol) -> Result<(Metrics, EventLog), SimError> {
    Simulation::new(cfg, protocol)?.run()
}
