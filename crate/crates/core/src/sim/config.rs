//! Scenario files.
//!
//! A scenario is a JSON object; everything except `node_count` and `seed`
//! has a default, and unknown fields are rejected. See
//! `scenarios/README.md` for the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::LinkModel;
use crate::phy_energy::{CadTimers, CorrectionDivisor, RadioPowerProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Lorawan,
    Lll,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lorawan" => Ok(Protocol::Lorawan),
            "lll" => Ok(Protocol::Lll),
            other => Err(format!("unknown protocol '{other}' (expected lorawan or lll)")),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Lorawan => "lorawan",
            Protocol::Lll => "lll",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPlan {
    pub count: u8,
    pub base_mhz: f64,
    pub step_mhz: f64,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        ChannelPlan { count: 8, base_mhz: 902.3, step_mhz: 0.2 }
    }
}

/// Per-node battery budgets for one recharge cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budgets {
    /// Drawn uniformly from `[lo, hi]` joules.
    Uniform { lo: f64, hi: f64 },
    /// One value per node.
    Explicit(Vec<f64>),
    /// Piecewise-constant recharge power per node: `(duration_s, power_w)`.
    Recharge(Vec<Vec<(f64, f64)>>),
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets::Uniform { lo: 6.0, hi: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Share of nodes on the high rate band.
    pub high_rate_fraction: f64,
    /// Packets per hour, `[lo, hi]`.
    pub high_rate_pph: (f64, f64),
    pub low_rate_pph: (f64, f64),
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig { high_rate_fraction: 0.03, high_rate_pph: (20.0, 30.0), low_rate_pph: (2.0, 4.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaMode {
    Fixed(f64),
    /// Mean attempt count over the last `n` packets received network-wide.
    Window(usize),
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Fixed(2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub rx1_delay_s: f64,
    pub rx2_delay_s: f64,
    /// Receive window length in symbols of the listening configuration.
    pub window_symbols: f64,
    pub backoff_base_s: f64,
    /// Lading starts this long before offloading.
    pub guard_s: f64,
    pub max_attempts: u8,
    pub gateway_ack_preamble: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            rx1_delay_s: 1.0,
            rx2_delay_s: 2.0,
            window_symbols: 5.0,
            backoff_base_s: 1.0,
            guard_s: 5.0,
            max_attempts: crate::node_mac::MAX_ATTEMPTS,
            gateway_ack_preamble: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub split_threshold: usize,
    pub adr_every: u32,
    /// ADR keeps the margin above this after a step.
    pub adr_min_margin_db: f64,
    /// Margin needed to pick the lower conventional spreading factor.
    pub installation_margin_db: f64,
    pub correction_divisor: CorrectionDivisor,
    /// Optional extra cap on granted lading time.
    pub lading_cap_s: Option<f64>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            split_threshold: 10,
            adr_every: 20,
            adr_min_margin_db: 0.0,
            installation_margin_db: 10.0,
            correction_divisor: CorrectionDivisor::CadPeriod,
            lading_cap_s: None,
        }
    }
}

/// A hand-placed node, used by scripted scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub x: f64,
    pub y: f64,
    pub budget_j: f64,
    /// Fixed inter-arrival time; overrides `pph`.
    #[serde(default)]
    pub period_s: Option<f64>,
    #[serde(default)]
    pub pph: Option<(f64, f64)>,
    /// First packet time; random within one inter-arrival otherwise.
    #[serde(default)]
    pub first_packet_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub node_count: usize,
    pub seed: u64,
    #[serde(default = "d_radius")]
    pub disc_radius_m: f64,
    #[serde(default)]
    pub channel_plan: ChannelPlan,
    #[serde(default = "d_conv_sf")]
    pub conventional_sf: (u8, u8),
    #[serde(default = "d_offload_sf")]
    pub offload_sf: u8,
    /// Offload preamble; the CAD-derived minimum when absent.
    #[serde(default)]
    pub offload_preamble_symbols: Option<u32>,
    #[serde(default = "d_conv_preamble")]
    pub conventional_preamble_symbols: u32,
    #[serde(default = "d_bw")]
    pub bandwidth_hz: u32,
    #[serde(default)]
    pub cad_timers: CadTimers,
    #[serde(default)]
    pub power_profile: RadioPowerProfile,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default)]
    pub budgets: Budgets,
    /// β as a fraction of each node's budget.
    #[serde(default = "d_reserve")]
    pub reserve_fraction: f64,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default = "d_payload")]
    pub payload_bytes: u32,
    #[serde(default = "d_heartbeat")]
    pub heartbeat_period_s: f64,
    #[serde(default)]
    pub gamma: GammaMode,
    #[serde(default = "d_cycle")]
    pub recharge_cycle_s: f64,
    /// Defaults to one recharge cycle.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default = "d_protocol")]
    pub protocol: Protocol,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Hand-placed nodes; replaces random placement and budgets.
    #[serde(default)]
    pub nodes: Option<Vec<NodeSpec>>,
}

fn d_radius() -> f64 {
    3500.0
}
fn d_conv_sf() -> (u8, u8) {
    (9, 10)
}
fn d_offload_sf() -> u8 {
    7
}
fn d_conv_preamble() -> u32 {
    8
}
fn d_bw() -> u32 {
    125_000
}
fn d_reserve() -> f64 {
    0.05
}
fn d_payload() -> u32 {
    2
}
fn d_heartbeat() -> f64 {
    3600.0
}
fn d_cycle() -> f64 {
    86_400.0
}
fn d_protocol() -> Protocol {
    Protocol::Lll
}

impl ScenarioConfig {
    pub fn duration(&self) -> f64 {
        self.duration_s.unwrap_or(self.recharge_cycle_s)
    }

    pub fn offload_preamble(&self) -> u32 {
        let min = crate::phy_energy::min_preamble_symbols(&self.cad_timers, self.offload_sf, self.bandwidth_hz)
            .unwrap_or(0);
        self.offload_preamble_symbols.unwrap_or(min)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {v}")))
            }
        };
        let fraction = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(field, format!("must be in [0, 1], got {v}")))
            }
        };
        let band = |field: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && hi >= lo && hi.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("needs 0 < lo <= hi, got [{lo}, {hi}]")))
            }
        };

        positive("disc_radius_m", self.disc_radius_m)?;
        if self.channel_plan.count == 0 {
            return Err(invalid("channel_plan.count", "must be at least 1"));
        }
        let (lo, hi) = self.conventional_sf;
        if lo > hi || !(6..=12).contains(&lo) || !(6..=12).contains(&hi) {
            return Err(invalid("conventional_sf", format!("bad range [{lo}, {hi}]")));
        }
        for sf in lo..=hi {
            if self.link.sensitivity(sf).is_none() {
                return Err(invalid("link.sensitivity_dbm_by_sf", format!("no entry for SF{sf}")));
            }
        }
        if self.link.sensitivity(self.offload_sf).is_none() {
            return Err(invalid("offload_sf", format!("no sensitivity entry for SF{}", self.offload_sf)));
        }
        self.link.validate().map_err(|m| invalid("link.sensitivity_dbm_by_sf", m))?;
        crate::phy_energy::symbol_duration(self.offload_sf, self.bandwidth_hz)
            .map_err(|e| invalid("bandwidth_hz", e.to_string()))?;
        self.cad_timers
            .validate_for(self.offload_sf, self.bandwidth_hz)
            .map_err(|e| invalid("cad_timers", e.to_string()))?;
        let min_pre = crate::phy_energy::min_preamble_symbols(&self.cad_timers, self.offload_sf, self.bandwidth_hz)
            .map_err(|e| invalid("cad_timers", e.to_string()))?;
        if self.offload_preamble() < min_pre {
            return Err(invalid(
                "offload_preamble_symbols",
                format!("{} is below the CAD minimum of {min_pre}", self.offload_preamble()),
            ));
        }
        self.power_profile.validate().map_err(|e| invalid("power_profile", e.to_string()))?;
        fraction("reserve_fraction", self.reserve_fraction)?;
        fraction("traffic.high_rate_fraction", self.traffic.high_rate_fraction)?;
        band("traffic.high_rate_pph", self.traffic.high_rate_pph)?;
        band("traffic.low_rate_pph", self.traffic.low_rate_pph)?;
        positive("heartbeat_period_s", self.heartbeat_period_s)?;
        positive("recharge_cycle_s", self.recharge_cycle_s)?;
        positive("duration_s", self.duration())?;
        match self.gamma {
            GammaMode::Fixed(g) if !(g >= 1.0 && g.is_finite()) => {
                return Err(invalid("gamma.fixed", format!("must be >= 1, got {g}")))
            }
            GammaMode::Window(0) => return Err(invalid("gamma.window", "must be at least 1")),
            _ => {}
        }
        match &self.budgets {
            Budgets::Uniform { lo, hi } => {
                if !(*lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(invalid("budgets.uniform", format!("needs 0 <= lo <= hi, got [{lo}, {hi}]")));
                }
            }
            Budgets::Explicit(v) => {
                if self.nodes.is_none() && v.len() != self.node_count {
                    return Err(invalid("budgets.explicit", format!("{} values for {} nodes", v.len(), self.node_count)));
                }
                if let Some(b) = v.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
                    return Err(invalid("budgets.explicit", format!("bad budget {b}")));
                }
            }
            Budgets::Recharge(traces) => {
                if self.nodes.is_none() && traces.len() != self.node_count {
                    return Err(invalid("budgets.recharge", format!("{} traces for {} nodes", traces.len(), self.node_count)));
                }
                for (i, trace) in traces.iter().enumerate() {
                    for &(d, p) in trace {
                        if !(d > 0.0) || !(p >= 0.0) {
                            return Err(invalid(
                                &format!("budgets.recharge[{i}]"),
                                format!("segment ({d}, {p}) needs duration > 0 and power >= 0"),
                            ));
                        }
                    }
                }
            }
        }
        if self.mac.max_attempts == 0 || self.mac.max_attempts > crate::node_mac::MAX_ATTEMPTS {
            return Err(invalid("mac.max_attempts", "must be in [1, 8]"));
        }
        if !(self.mac.rx2_delay_s > self.mac.rx1_delay_s && self.mac.rx1_delay_s > 0.0) {
            return Err(invalid("mac.rx2_delay_s", "need 0 < rx1_delay_s < rx2_delay_s"));
        }
        if !(self.mac.guard_s >= 0.0) {
            return Err(invalid("mac.guard_s", "must be non-negative"));
        }
        if let Some(nodes) = &self.nodes {
            if nodes.len() != self.node_count {
                return Err(invalid("nodes", format!("{} entries for node_count {}", nodes.len(), self.node_count)));
            }
            for (i, n) in nodes.iter().enumerate() {
                if n.x.hypot(n.y) > self.disc_radius_m {
                    return Err(invalid(&format!("nodes[{i}]"), "outside the disc"));
                }
                if !(n.budget_j >= 0.0) {
                    return Err(invalid(&format!("nodes[{i}].budget_j"), "must be non-negative"));
                }
                if let Some(p) = n.period_s {
                    positive(&format!("nodes[{i}].period_s"), p)?;
                }
                if let Some(b) = n.pph {
                    band(&format!("nodes[{i}].pph"), b)?;
                }
            }
        }
        Ok(())
    }
}

/// Energy harvested over a piecewise-constant power trace.
pub fn integrate_recharge(trace: &[(f64, f64)]) -> f64 {
    trace.iter().map(|(d, p)| d * p).sum()
}

/// Parses and validates a scenario document. Schema errors carry the JSON
/// path of the offending field.
pub fn load_scenario(document: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    load_scenario(&std::fs::read_to_string(path)?)
}

/// Sets a field addressed by a dotted path (e.g. `traffic.high_rate_fraction`)
/// to a JSON value, then re-validates.
pub fn with_param(base: &ScenarioConfig, param: &str, value: &serde_json::Value) -> Result<ScenarioConfig, ConfigError> {
    let mut doc = serde_json::to_value(base).expect("config serialises");
    let mut slot = &mut doc;
    for part in param.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| invalid(param, format!("no field '{part}'")))?;
    }
    *slot = value.clone();
    load_scenario(&doc.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = load_scenario(r#"{"node_count": 10, "seed": 1}"#).unwrap();
        assert_eq!(cfg.disc_radius_m, 3500.0);
        assert_eq!(cfg.channel_plan.count, 8);
        assert_eq!(cfg.budgets, Budgets::Uniform { lo: 6.0, hi: 25.0 });
        assert_eq!(cfg.gamma, GammaMode::Fixed(2.0));
        assert_eq!(cfg.duration(), 86_400.0);
        assert_eq!(cfg.offload_preamble(), 13);
    }

    #[test]
    fn rejections_name_the_field() {
        let e = load_scenario(r#"{"node_count": 10, "seed": 1, "disc_radius_m": -5}"#).unwrap_err();
        assert!(e.to_string().contains("disc_radius_m"), "{e}");
        let e = load_scenario(r#"{"node_count": 10}"#).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let e = load_scenario(r#"{"node_count": 10, "seed": 1, "mac": {"guard": 3}}"#).unwrap_err();
        assert!(e.to_string().starts_with("mac"), "{e}");
        let e = load_scenario(r#"{"node_count": 2, "seed": 1, "traffic": {"high_rate_fraction": 1.5}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("traffic.high_rate_fraction"), "{e}");
    }

    #[test]
    fn recharge_integral() {
        assert!((integrate_recharge(&[(3600.0, 0.001)]) - 3.6).abs() < 1e-12);
        assert_eq!(integrate_recharge(&[(3600.0, 0.0), (10.0, 0.0)]), 0.0);
        assert!((integrate_recharge(&[(1800.0, 0.002), (1800.0, 0.004)]) - 10.8).abs() < 1e-12);
        assert_eq!(integrate_recharge(&[]), 0.0);
    }

    #[test]
    fn dotted_param_override() {
        let cfg = load_scenario(r#"{"node_count": 10, "seed": 1}"#).unwrap();
        let c2 = with_param(&cfg, "traffic.high_rate_fraction", &serde_json::json!(0.1)).unwrap();
        assert_eq!(c2.traffic.high_rate_fraction, 0.1);
        let c3 = with_param(&cfg, "node_count", &serde_json::json!(50)).unwrap();
        assert_eq!(c3.node_count, 50);
        assert!(with_param(&cfg, "nope", &serde_json::json!(1)).is_err());
    }
}
