//! Parameter sweeps: one row per (value, seed, protocol).

use std::io::Write;

use serde::Serialize;

use super::config::{with_param, Protocol, ScenarioConfig};
use super::engine::run_with_protocol;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub lifetime_s: Option<f64>,
    #[serde(rename = "throughput_Bps")]
    pub throughput_bps: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<serde_json::Value>,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
}

fn one(base: &ScenarioConfig, spec: &SweepSpec, value: &serde_json::Value, seed: u64, protocol: Protocol) -> SweepRow {
    let mut row = SweepRow {
        param: spec.param.clone(),
        value: value.to_string(),
        seed,
        protocol,
        lifetime_s: None,
        throughput_bps: None,
        error: String::new(),
    };
    let result = with_param(base, &spec.param, value)
        .map_err(|e| e.to_string())
        .and_then(|mut cfg| {
            cfg.seed = seed;
            run_with_protocol(&cfg, protocol).map_err(|e| e.to_string())
        });
    match result {
        Ok((m, _)) => {
            row.lifetime_s = Some(m.lifetime_s);
            row.throughput_bps = Some(m.throughput_bytes_per_s);
        }
        Err(e) => row.error = e,
    }
    row
}

/// Runs every combination. Rows come back in (value, seed, protocol) order
/// whether or not they were computed in parallel. A failing point is
/// recorded in its row and does not stop the sweep.
pub fn sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Vec<SweepRow> {
    let jobs: Vec<(&serde_json::Value, u64, Protocol)> = spec
        .values
        .iter()
        .flat_map(|v| spec.seeds.iter().flat_map(move |&s| spec.protocols.iter().map(move |&p| (v, s, p))))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(v, s, p)| one(base, spec, v, s, p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(|&(v, s, p)| one(base, spec, v, s, p)).collect()
    }
}

const CSV_HEADER: [&str; 7] = ["param", "value", "seed", "protocol", "lifetime_s", "throughput_Bps", "error"];

/// Writes the header even when there are no rows.
pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
