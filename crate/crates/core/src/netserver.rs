//! Network-server planning.
//!
//! The server keeps a ledger view of every node, estimates the network-wide
//! retransmission overhead, splits nodes into affluent and depleting sets,
//! and pairs them inside each cell so that an affluent node never spends
//! more on lading than its superfluous residual energy.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::TAU;

use serde::Serialize;

use crate::medium::{LinkModel, NodeId, Position};
use crate::node_mac::ModeCommand;
use crate::phy_energy::{
    self, CadTimers, CorrectionDivisor, Frame, LadingPair, OffloadLink, PhyError, RadioPowerProfile,
    TransmissionParams,
};

/// Network-wide sliding window of per-packet attempt counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RetransWindow {
    capacity: usize,
    entries: VecDeque<u8>,
}

impl RetransWindow {
    pub fn new(capacity: usize) -> Self {
        RetransWindow { capacity: capacity.max(1), entries: VecDeque::new() }
    }

    pub fn push(&mut self, attempts: u8) {
        debug_assert!((1..=8).contains(&attempts));
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(attempts);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().copied()
    }
}

impl FromIterator<u8> for RetransWindow {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let entries: VecDeque<u8> = iter.into_iter().collect();
        RetransWindow { capacity: entries.len().max(1), entries }
    }
}

/// Mean attempt count of the window; 1.0 with no evidence.
pub fn estimate_gamma(window: &RetransWindow) -> f64 {
    if window.is_empty() {
        return 1.0;
    }
    window.iter().map(f64::from).sum::<f64>() / window.len() as f64
}

pub fn expected_tx_count(gamma: f64, t_remaining_s: f64, tau_s: f64) -> Result<f64, PhyError> {
    if !(tau_s > 0.0) {
        return Err(PhyError::NonPositiveInterArrival(tau_s));
    }
    if t_remaining_s < 0.0 {
        return Err(PhyError::NegativeDuration(t_remaining_s));
    }
    Ok(gamma * t_remaining_s / tau_s)
}

pub fn conventional_mode_energy(
    profile: &RadioPowerProfile,
    conv: &TransmissionParams,
    payload_bytes: u32,
    n_tx: f64,
) -> Result<f64, PhyError> {
    Ok(n_tx * phy_energy::tx_energy(profile, conv, Frame::Data(payload_bytes))?)
}

/// What the server knows about one node.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub id: NodeId,
    pub budget_j: f64,
    pub reserve_j: f64,
    /// Consumption as last reported in an uplink.
    pub consumed_j: f64,
    pub tau_s: f64,
    pub position: Position,
    pub cell: usize,
    pub conv: TransmissionParams,
    pub payload_bytes: u32,
    pub last_contact_s: f64,
    pub heartbeat_period_s: f64,
    pub live: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Classification {
    pub affluent: BTreeSet<NodeId>,
    pub depleting: BTreeSet<NodeId>,
    /// Predicted conventional-mode energy for the rest of the cycle.
    pub e_cm: BTreeMap<NodeId, f64>,
}

/// Classification over the remaining part of the recharge cycle: a node is
/// affluent iff its predicted conventional consumption is strictly below
/// what is left of its budget after the reserve.
pub fn classify_nodes(
    ledger: &[LedgerEntry],
    profile: &RadioPowerProfile,
    gamma: f64,
    t_remaining_s: f64,
) -> Result<Classification, PhyError> {
    let mut out = Classification::default();
    for entry in ledger.iter().filter(|e| e.live) {
        let n_tx = expected_tx_count(gamma, t_remaining_s, entry.tau_s)?;
        let e_cm = conventional_mode_energy(profile, &entry.conv, entry.payload_bytes, n_tx)?;
        out.e_cm.insert(entry.id, e_cm);
        if e_cm < entry.budget_j - entry.reserve_j - entry.consumed_j {
            out.affluent.insert(entry.id);
        } else {
            out.depleting.insert(entry.id);
        }
    }
    Ok(out)
}

/// Energy an affluent node can spend on lading without eating into its own
/// predicted needs.
pub fn residual_energy(entry: &LedgerEntry, e_cm: f64) -> f64 {
    entry.budget_j - entry.reserve_j - e_cm - entry.consumed_j
}

/// Fixed inputs of one planning round.
#[derive(Debug, Clone)]
pub struct PlannerContext<'a> {
    pub profile: &'a RadioPowerProfile,
    pub timers: CadTimers,
    /// Offload configuration the lading listener is tuned to (power unused).
    pub listen: TransmissionParams,
    pub gamma: f64,
    pub divisor: CorrectionDivisor,
    /// Upper bound on any granted lading time.
    pub cap_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffluentCandidate {
    pub id: NodeId,
    pub residual_j: f64,
    pub conv: TransmissionParams,
    /// One gateway receive window at the conventional parameters.
    pub t_rx_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepletingCandidate {
    pub id: NodeId,
    pub tau_s: f64,
    pub payload_bytes: u32,
}

/// Granted lading time: the linear lading overhead solved for the residual
/// energy, then capped.
pub fn compute_lading_time(ctx: &PlannerContext, residual_j: f64, pairs: &[LadingPair]) -> Result<f64, PhyError> {
    if residual_j <= 0.0 {
        return Ok(0.0);
    }
    let rate = phy_energy::lading_power(ctx.profile, &ctx.timers, &ctx.listen, ctx.gamma, pairs, ctx.divisor)?;
    if rate <= 0.0 {
        return Ok(ctx.cap_s);
    }
    Ok((residual_j / rate).min(ctx.cap_s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pair {
    pub depleting: NodeId,
    pub affluent: NodeId,
    pub e_om_j: f64,
    pub tau_s: f64,
    #[serde(skip)]
    pub offload: TransmissionParams,
    #[serde(skip)]
    pub link: OffloadLink,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PairingPlan {
    pub pairs: Vec<Pair>,
    pub t_lm_s: BTreeMap<NodeId, f64>,
    pub effective_start_s: f64,
}

impl PairingPlan {
    pub fn pairs_of(&self, affluent: NodeId) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(move |p| p.affluent == affluent)
    }

    fn lading_pairs_of(&self, affluent: NodeId) -> Vec<LadingPair> {
        self.pairs_of(affluent).map(|p| LadingPair { tau_s: p.tau_s, link: p.link }).collect()
    }
}

/// Offload configuration for a (affluent, depleting) candidate, or `None`
/// when the pair cannot talk.
pub type OffloadFn<'a> = dyn Fn(&AffluentCandidate, &DepletingCandidate) -> Option<TransmissionParams> + 'a;

/// Greedy pairing inside one cell. Each affluent node is offered every
/// depleting node it can reach, sorted by offloading cost; the costliest
/// pair is dropped until the granted lading time covers one inter-arrival
/// period of every remaining partner.
pub fn select_pairs_in_cell(
    ctx: &PlannerContext,
    affluent: &[AffluentCandidate],
    depleting: &[DepletingCandidate],
    offload_for: &OffloadFn,
) -> Result<PairingPlan, PhyError> {
    let mut plan = PairingPlan::default();
    for v in affluent {
        let mut pairs = Vec::new();
        for u in depleting {
            let Some(offload) = offload_for(v, u) else { continue };
            let e_om = phy_energy::offload_packet_energy(ctx.profile, &offload, u.payload_bytes)?;
            let link = OffloadLink { offload, conv: v.conv, payload_bytes: u.payload_bytes, t_rx_s: v.t_rx_s };
            pairs.push(Pair { depleting: u.id, affluent: v.id, e_om_j: e_om, tau_s: u.tau_s, offload, link });
        }
        pairs.sort_by(|a, b| a.e_om_j.total_cmp(&b.e_om_j).then(a.depleting.cmp(&b.depleting)));

        let mut t_lm = lading_time_for(ctx, v.residual_j, &pairs)?;
        while pairs.iter().any(|p| t_lm < p.tau_s) {
            pairs.pop();
            t_lm = lading_time_for(ctx, v.residual_j, &pairs)?;
        }
        if !pairs.is_empty() {
            plan.t_lm_s.insert(v.id, t_lm);
            plan.pairs.extend(pairs);
        }
    }
    Ok(plan)
}

fn lading_time_for(ctx: &PlannerContext, residual_j: f64, pairs: &[Pair]) -> Result<f64, PhyError> {
    let lp: Vec<LadingPair> = pairs.iter().map(|p| LadingPair { tau_s: p.tau_s, link: p.link }).collect();
    compute_lading_time(ctx, residual_j, &lp)
}

/// Runs [`select_pairs_in_cell`] for every cell. `cell_of` maps node ids to
/// cells; only same-cell pairs are considered.
pub fn select_pairs(
    ctx: &PlannerContext,
    affluent: &[AffluentCandidate],
    depleting: &[DepletingCandidate],
    cell_of: &dyn Fn(NodeId) -> usize,
    offload_for: &OffloadFn,
) -> Result<PairingPlan, PhyError> {
    let mut cells: BTreeMap<usize, (Vec<AffluentCandidate>, Vec<DepletingCandidate>)> = BTreeMap::new();
    for v in affluent {
        cells.entry(cell_of(v.id)).or_default().0.push(v.clone());
    }
    for u in depleting {
        cells.entry(cell_of(u.id)).or_default().1.push(u.clone());
    }
    let mut plan = PairingPlan::default();
    for (an, dn) in cells.values() {
        if an.is_empty() || dn.is_empty() {
            continue;
        }
        let part = select_pairs_in_cell(ctx, an, dn, offload_for)?;
        plan.pairs.extend(part.pairs);
        plan.t_lm_s.extend(part.t_lm_s);
    }
    Ok(plan)
}

/// A depleting node can only talk to one affluent node at a time. Keep, for
/// each depleting node, the pair with the cheapest offload (then the longest
/// lading time, then the lowest affluent id) and re-solve lading times for
/// the reduced sets. Removing partners only lengthens lading time, so both
/// plan constraints keep holding.
pub fn assign_unique_partners(
    ctx: &PlannerContext,
    plan: PairingPlan,
    residual_of: &dyn Fn(NodeId) -> f64,
) -> Result<PairingPlan, PhyError> {
    let mut best: BTreeMap<NodeId, &Pair> = BTreeMap::new();
    for p in &plan.pairs {
        let t = plan.t_lm_s[&p.affluent];
        let better = match best.get(&p.depleting) {
            None => true,
            Some(cur) => {
                let ct = plan.t_lm_s[&cur.affluent];
                p.e_om_j
                    .total_cmp(&cur.e_om_j)
                    .then(ct.total_cmp(&t))
                    .then(p.affluent.cmp(&cur.affluent))
                    .is_lt()
            }
        };
        if better {
            best.insert(p.depleting, p);
        }
    }
    let mut out = PairingPlan { effective_start_s: plan.effective_start_s, ..Default::default() };
    out.pairs = best.values().map(|p| (*p).clone()).collect();
    out.pairs.sort_by_key(|p| (p.affluent, p.depleting));
    let affluent: BTreeSet<NodeId> = out.pairs.iter().map(|p| p.affluent).collect();
    for v in affluent {
        let t = compute_lading_time(ctx, residual_of(v), &out.lading_pairs_of(v))?;
        out.t_lm_s.insert(v, t);
    }
    Ok(out)
}

/// Re-solves every lading time with a new cap (used once the start time is
/// known).
pub fn recompute_lading_times(
    ctx: &PlannerContext,
    plan: &mut PairingPlan,
    residual_of: &dyn Fn(NodeId) -> f64,
) -> Result<(), PhyError> {
    let affluent: Vec<NodeId> = plan.t_lm_s.keys().copied().collect();
    for v in affluent {
        let t = compute_lading_time(ctx, residual_of(v), &plan.lading_pairs_of(v))?;
        plan.t_lm_s.insert(v, t);
    }
    plan.pairs.retain(|p| plan.t_lm_s[&p.affluent] >= p.tau_s);
    let still: BTreeSet<NodeId> = plan.pairs.iter().map(|p| p.affluent).collect();
    plan.t_lm_s.retain(|v, _| still.contains(v));
    Ok(())
}

/// Checks both plan constraints; returns a description of the first
/// violation.
pub fn check_plan(
    ctx: &PlannerContext,
    plan: &PairingPlan,
    residual_of: &dyn Fn(NodeId) -> f64,
) -> Result<(), String> {
    for p in &plan.pairs {
        let t = plan.t_lm_s.get(&p.affluent).ok_or("pair without lading time")?;
        if *t < p.tau_s {
            return Err(format!("T_LM({}) = {t} < tau({}) = {}", p.affluent, p.depleting, p.tau_s));
        }
    }
    for (&v, &t) in &plan.t_lm_s {
        let e = phy_energy::lading_energy(
            ctx.profile,
            t,
            &ctx.timers,
            &ctx.listen,
            ctx.gamma,
            &plan.lading_pairs_of(v),
            ctx.divisor,
        )
        .map_err(|e| e.to_string())?;
        let er = residual_of(v);
        if e > er * (1.0 + 1e-9) + 1e-15 {
            return Err(format!("lading energy {e} exceeds residual {er} at node {v}"));
        }
    }
    Ok(())
}

/// Contact information used to time mode transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactInfo {
    pub last_contact_s: f64,
    pub heartbeat_period_s: f64,
    pub tau_s: f64,
}

impl ContactInfo {
    pub fn next_contact(&self) -> f64 {
        self.last_contact_s + self.heartbeat_period_s.min(self.tau_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub plan: PairingPlan,
    pub commands: Vec<(NodeId, ModeCommand)>,
    pub dropped: Vec<NodeId>,
}

/// Picks the start instant by which every transitioning node should have
/// talked to the gateway once, and turns the plan into per-node commands.
/// Nodes whose next predicted contact falls after the cycle end are dropped
/// along with their pairs.
pub fn schedule_mode_transition(
    mut plan: PairingPlan,
    contact: &dyn Fn(NodeId) -> ContactInfo,
    now_s: f64,
    guard_s: f64,
    cycle_end_s: f64,
) -> Transition {
    let mut dropped = Vec::new();
    let mut involved: BTreeSet<NodeId> = BTreeSet::new();
    for p in &plan.pairs {
        involved.insert(p.affluent);
        involved.insert(p.depleting);
    }
    for &n in &involved {
        if contact(n).next_contact() >= cycle_end_s {
            dropped.push(n);
        }
    }
    plan.pairs.retain(|p| !dropped.contains(&p.affluent) && !dropped.contains(&p.depleting));
    let still: BTreeSet<NodeId> = plan.pairs.iter().map(|p| p.affluent).collect();
    plan.t_lm_s.retain(|v, _| still.contains(v));

    let start = plan
        .pairs
        .iter()
        .flat_map(|p| [p.affluent, p.depleting])
        .map(|n| contact(n).next_contact())
        .fold(now_s, f64::max);
    plan.effective_start_s = start;

    let commands = plan_commands(&plan, guard_s);
    Transition { plan, commands, dropped }
}

/// Per-node commands for a scheduled plan: lading from `guard_s` before
/// the start, offloading from the start, both until the affluent node's
/// granted lading time runs out.
pub fn plan_commands(plan: &PairingPlan, guard_s: f64) -> Vec<(NodeId, ModeCommand)> {
    let start = plan.effective_start_s;
    let mut commands = Vec::new();
    for (&v, &t_lm) in &plan.t_lm_s {
        commands.push((v, ModeCommand::EnterLading { listen_from_s: start - guard_s, until_s: start + t_lm }));
    }
    for p in &plan.pairs {
        let until = start + plan.t_lm_s[&p.affluent];
        commands.push((
            p.depleting,
            ModeCommand::EnterOffloading { partner: p.affluent, from_s: start, until_s: until, params: p.offload },
        ));
    }
    commands
}

/// Offload transmit level for a node pair: the level that lands at the
/// receiver sensitivity, rounded up to a configured power level. `None`
/// when even the highest level falls short.
pub fn offload_power_level(
    profile: &RadioPowerProfile,
    link: &LinkModel,
    sf: u8,
    distance_m: f64,
) -> Option<i32> {
    let sens = link.sensitivity(sf)?;
    let range = (profile.min_level() as f64, profile.max_level() as f64);
    let needed = sens + phy_energy::path_loss_db(distance_m);
    if needed > range.1 + 1e-9 {
        return None;
    }
    let p = phy_energy::initial_offload_power(sens, distance_m.max(1.0), range).ok()?;
    profile.level_at_least(p)
}

/// Lowest spreading factor in `sf_range` whose margin at maximum power
/// clears `installation_margin_db`; the top of the range otherwise.
pub fn select_conventional_sf(
    link: &LinkModel,
    sf_range: (u8, u8),
    max_power_dbm: i32,
    distance_m: f64,
    installation_margin_db: f64,
) -> u8 {
    for sf in sf_range.0..=sf_range.1 {
        if let Some(m) = link.margin_db(max_power_dbm as f64, sf, distance_m) {
            if m >= installation_margin_db {
                return sf;
            }
        }
    }
    sf_range.1
}

/// Per-node counter for power stepping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdrState {
    pub received: u32,
}

/// Counts one received packet; every `every` packets lowers the power by
/// 3 dB if the margin stays above `min_margin_db` and the level stays on or
/// above the hardware floor.
pub fn adr_update(
    state: &mut AdrState,
    params: &TransmissionParams,
    margin_db: f64,
    min_margin_db: f64,
    every: u32,
    profile: &RadioPowerProfile,
) -> TransmissionParams {
    state.received += 1;
    if every == 0 || !state.received.is_multiple_of(every) {
        return *params;
    }
    let next = params.power_dbm - 3;
    if next >= profile.min_level() && profile.p_tx_w.contains_key(&next) && margin_db - 3.0 > min_margin_db {
        params.with_power(next)
    } else {
        *params
    }
}

/// One cell of the deployment disc: an annular sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub r_lo: f64,
    pub r_hi: f64,
    pub th_lo: f64,
    pub th_hi: f64,
    pub channel: u8,
}

impl Cell {
    fn contains(&self, r: f64, th: f64) -> bool {
        r >= self.r_lo && (r < self.r_hi || (r - self.r_hi).abs() < 1e-9) && th >= self.th_lo && th < self.th_hi
    }

    fn split(&self) -> [Cell; 4] {
        let r_mid = ((self.r_lo * self.r_lo + self.r_hi * self.r_hi) / 2.0).sqrt();
        let th_mid = (self.th_lo + self.th_hi) / 2.0;
        let mk = |r_lo, r_hi, th_lo, th_hi| Cell { r_lo, r_hi, th_lo, th_hi, channel: self.channel };
        [
            mk(self.r_lo, r_mid, self.th_lo, th_mid),
            mk(self.r_lo, r_mid, th_mid, self.th_hi),
            mk(r_mid, self.r_hi, self.th_lo, th_mid),
            mk(r_mid, self.r_hi, th_mid, self.th_hi),
        ]
    }

    fn adjacent(&self, other: &Cell) -> bool {
        const E: f64 = 1e-9;
        let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| a0.max(b0) < a1.min(b1) - E;
        let same_angle = |a: f64, b: f64| {
            let d = (a - b).rem_euclid(TAU);
            d < E || TAU - d < E
        };
        let radial = (same_angle(self.th_hi, other.th_lo) || same_angle(self.th_lo, other.th_hi))
            && overlap(self.r_lo, self.r_hi, other.r_lo, other.r_hi);
        let arc = ((self.r_hi - other.r_lo).abs() < E || (self.r_lo - other.r_hi).abs() < E)
            && overlap(self.th_lo, self.th_hi, other.th_lo, other.th_hi);
        radial || arc
    }
}

/// Spatial partition of the disc into cells, one channel per cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMap {
    pub cells: Vec<Cell>,
    pub n_channels: u8,
    pub radius_m: f64,
}

impl CellMap {
    /// One equal-angle sector per channel.
    pub fn initial(n_channels: u8, radius_m: f64) -> Self {
        let n = n_channels.max(1);
        let cells = (0..n)
            .map(|i| Cell {
                r_lo: 0.0,
                r_hi: radius_m,
                th_lo: TAU * i as f64 / n as f64,
                th_hi: TAU * (i + 1) as f64 / n as f64,
                channel: i,
            })
            .collect();
        CellMap { cells, n_channels: n, radius_m }
    }

    /// Cell index of a position relative to the gateway at the origin.
    pub fn cell_of(&self, pos: &Position) -> usize {
        let r = pos.x.hypot(pos.y).min(self.radius_m);
        let th = pos.y.atan2(pos.x).rem_euclid(TAU);
        self.cells.iter().position(|c| c.contains(r, th)).unwrap_or(0)
    }

    pub fn channel_of(&self, pos: &Position) -> u8 {
        self.cells[self.cell_of(pos)].channel
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.cells[a].adjacent(&self.cells[b])
    }

    /// Splits every cell whose node count exceeds `threshold` into four and
    /// recolours. Returns the indices (before splitting) of split cells.
    pub fn split_crowded(&mut self, counts: &BTreeMap<usize, usize>, threshold: usize) -> Vec<usize> {
        let crowded: Vec<usize> = (0..self.cells.len())
            .filter(|i| counts.get(i).copied().unwrap_or(0) > threshold)
            .collect();
        if crowded.is_empty() {
            return crowded;
        }
        let mut next = Vec::with_capacity(self.cells.len() + 3 * crowded.len());
        for (i, c) in self.cells.iter().enumerate() {
            if crowded.contains(&i) {
                next.extend(c.split());
            } else {
                next.push(*c);
            }
        }
        self.cells = next;
        self.recolor();
        crowded
    }

    /// Greedy colouring: each cell takes the lowest channel not used by an
    /// already coloured neighbour, or the least used one if all are taken.
    pub fn recolor(&mut self) {
        let n = self.cells.len();
        let mut assigned: Vec<Option<u8>> = vec![None; n];
        for i in 0..n {
            let mut used = vec![0usize; self.n_channels as usize];
            for (j, a) in assigned.iter().enumerate() {
                if let Some(ch) = a {
                    if self.adjacent(i, j) {
                        used[*ch as usize] += 1;
                    }
                }
            }
            let ch = used
                .iter()
                .enumerate()
                .min_by_key(|(ch, count)| (**count, *ch))
                .map(|(ch, _)| ch as u8)
                .unwrap_or(0);
            assigned[i] = Some(ch);
        }
        for (c, a) in self.cells.iter_mut().zip(assigned) {
            c.channel = a.unwrap_or(0);
        }
    }

    /// True when no two adjacent cells share a channel.
    pub fn properly_colored(&self) -> bool {
        (0..self.cells.len()).all(|i| {
            (0..self.cells.len()).all(|j| !self.adjacent(i, j) || self.cells[i].channel != self.cells[j].channel)
        })
    }
}

/// Maps every node to its (cell, channel).
pub fn assign_cells(map: &CellMap, positions: &[Position]) -> Vec<(usize, u8)> {
    positions
        .iter()
        .map(|p| {
            let c = map.cell_of(p);
            (c, map.cells[c].channel)
        })
        .collect()
}
