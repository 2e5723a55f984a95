use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lll_core::sim::{self, load_scenario_file, Protocol, SweepSpec};

#[derive(Parser)]
#[command(name = "lll-sim", version, about = "Energy-harvesting LoRa network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its metrics as JSON.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario protocol.
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the event log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Vary one field over a list of values and seeds; write CSV.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted field path, e.g. `traffic.high_rate_fraction`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![Protocol::Lorawan, Protocol::Lll])]
        protocols: Vec<Protocol>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file and print the resolved configuration.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run { scenario, seed, protocol, out, log } => {
            let mut cfg = load_scenario_file(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let protocol = protocol.unwrap_or(cfg.protocol);
            let (metrics, events) = sim::run_with_protocol(&cfg, protocol)?;
            serde_json::to_writer_pretty(BufWriter::new(File::create(&out)?), &metrics)?;
            if let Some(p) = log {
                events.write_jsonl(BufWriter::new(File::create(p)?))?;
            }
            eprintln!(
                "{protocol}: lifetime {:.0} s{}, throughput {:.4} B/s",
                metrics.lifetime_s,
                if metrics.lifetime_censored { " (no depletion)" } else { "" },
                metrics.throughput_bytes_per_s
            );
        }
        Cmd::Sweep { scenario, param, values, seeds, protocols, out } => {
            let cfg = load_scenario_file(&scenario)?;
            let values = values
                .iter()
                .filter(|v| !v.trim().is_empty())
                .map(|v| serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.clone())))
                .collect();
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let rows = sim::sweep(&cfg, &SweepSpec { param, values, seeds, protocols });
            sim::write_csv(&rows, File::create(&out)?)?;
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} of {} points failed; see the error column", rows.len());
            }
        }
        Cmd::Validate { scenario } => {
            let cfg = load_scenario_file(&scenario)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}
