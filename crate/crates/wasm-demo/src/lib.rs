//! Browser bindings: an airtime/energy calculator, a lading-time explorer
//! and a small side-by-side simulation. Each entry point takes plain
//! numbers and returns a JSON string; errors come back as `{"error": ...}`.

use lll_core::phy_energy::{
    self, CadTimers, CorrectionDivisor, Frame, LadingPair, OffloadLink, RadioPowerProfile, TransmissionParams,
};
use lll_core::sim::{load_scenario, run_with_protocol};
use lll_core::Protocol;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type Res = Result<Value, String>;

fn render(r: Res) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn airtime_report(sf: u8, bw_hz: u32, payload_bytes: u32, preamble: u32, power_dbm: i32) -> Res {
    let p = TransmissionParams::new(sf, bw_hz, power_dbm, preamble).map_err(err)?;
    let profile = RadioPowerProfile::default();
    let data = Frame::Data(payload_bytes);
    Ok(json!({
        "symbol_s": p.symbol_duration().map_err(err)?,
        "low_data_rate": p.de() == 1,
        "data_symbols": p.symbols(data).map_err(err)?,
        "data_airtime_s": phy_energy::airtime(&p, data).map_err(err)?,
        "ack_airtime_s": phy_energy::airtime(&p, Frame::Ack).map_err(err)?,
        "tx_energy_j": phy_energy::tx_energy(&profile, &p, data).map_err(err)?,
    }))
}

/// Lading cost for one affluent node serving one depleting node.
pub fn lading_report(
    t1_ms: f64,
    t2_ms: f64,
    conv_sf: u8,
    gamma: f64,
    tau_s: f64,
    residual_j: f64,
) -> Res {
    let profile = RadioPowerProfile::default();
    let timers = CadTimers { t1_s: t1_ms / 1e3, t2_s: t2_ms / 1e3 };
    let preamble = phy_energy::min_preamble_symbols(&timers, 7, 125_000).map_err(err)?;
    let listen = TransmissionParams::new(7, 125_000, profile.min_level(), preamble).map_err(err)?;
    let conv = TransmissionParams::new(conv_sf, 125_000, profile.max_level(), 8).map_err(err)?;
    let t_rx_s = 5.0 * conv.symbol_duration().map_err(err)?;
    let link = OffloadLink { offload: listen, conv, payload_bytes: 2, t_rx_s };
    let pair = LadingPair { tau_s, link };
    let div = CorrectionDivisor::CadPeriod;
    let cad_w = phy_energy::cad_cycle_energy(&profile, &timers, &listen).map_err(err)? / timers.period();
    let power = phy_energy::lading_power(&profile, &timers, &listen, gamma, &[pair], div).map_err(err)?;
    Ok(json!({
        "offload_preamble": preamble,
        "cad_power_w": cad_w,
        "per_packet_j": phy_energy::per_packet_overhead(&profile, &timers, &link, div).map_err(err)?,
        "lading_power_w": power,
        "t_lm_s": if power > 0.0 { residual_j.max(0.0) / power } else { f64::INFINITY },
        "offload_packet_j": phy_energy::offload_packet_energy(&profile, &listen, 2).map_err(err)?,
    }))
}

/// Runs the same small network under both protocols.
pub fn compare_report(node_count: usize, seed: u64, high_rate_fraction: f64, t1_ms: f64) -> Res {
    let doc = json!({
        "node_count": node_count,
        "seed": seed,
        "traffic": { "high_rate_fraction": high_rate_fraction },
        "cad_timers": { "t1_s": t1_ms / 1e3, "t2_s": 0.0041 },
        "link": { "uplink_loss_probability": 0.5 },
    });
    let cfg = load_scenario(&doc.to_string()).map_err(err)?;
    let mut out = serde_json::Map::new();
    for (name, proto) in [("lll", Protocol::Lll), ("lorawan", Protocol::Lorawan)] {
        let (m, _) = run_with_protocol(&cfg, proto).map_err(err)?;
        out.insert(
            name.into(),
            json!({
                "lifetime_h": m.lifetime_s / 3600.0,
                "censored": m.lifetime_censored,
                "throughput_bps": m.throughput_bytes_per_s,
                "offloads": m.counters.offloads,
                "plans": m.counters.plans,
                "depletions": m.counters.depletions,
            }),
        );
    }
    Ok(Value::Object(out))
}

#[wasm_bindgen]
pub fn airtime(sf: u8, bw_hz: u32, payload_bytes: u32, preamble: u32, power_dbm: i32) -> String {
    render(airtime_report(sf, bw_hz, payload_bytes, preamble, power_dbm))
}

#[wasm_bindgen]
pub fn lading(t1_ms: f64, t2_ms: f64, conv_sf: u8, gamma: f64, tau_s: f64, residual_j: f64) -> String {
    render(lading_report(t1_ms, t2_ms, conv_sf, gamma, tau_s, residual_j))
}

#[wasm_bindgen]
pub fn compare(node_count: usize, seed: u64, high_rate_fraction: f64, t1_ms: f64) -> String {
    render(compare_report(node_count, seed, high_rate_fraction, t1_ms))
}
