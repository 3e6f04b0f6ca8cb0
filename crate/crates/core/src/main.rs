use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use replsim::harness::{self, Format, Scenario, ScenarioConfig, OUT_DIR_ENV};
use replsim::scheduler::{self, ClusterSpec, PodList};
use replsim::{Error, Protocol};

#[derive(Parser)]
#[command(name = "replsim", version, about = "Simulate and benchmark Raft and BFT master clusters under attack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep attack rates for one protocol and export per-run metrics.
    Run {
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        masters: Option<usize>,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Comma-separated attack rates in Gbps.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated run length per repetition, in microseconds.
        #[arg(long)]
        horizon_us: Option<u64>,
        /// TOML scenario file; flags given on the command line win.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Compare two JSON exports (typically one Raft and one BFT sweep).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Place pods on a cluster of minions and print the placements as JSON.
    Schedule {
        #[arg(long)]
        cluster: PathBuf,
        #[arg(long)]
        pods: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn out_path(out: Option<PathBuf>, default_name: String) -> PathBuf {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    match (out, dir) {
        (Some(p), Some(d)) if p.is_relative() => d.join(p),
        (Some(p), _) => p,
        (None, Some(d)) => d.join(default_name),
        (None, None) => PathBuf::from(default_name),
    }
}

fn fmt_us(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

#[allow(clippy::too_many_arguments)]
fn run(
    protocol: Option<Protocol>,
    masters: Option<usize>,
    scenario: Option<Scenario>,
    rates: Option<Vec<f64>>,
    reps: Option<usize>,
    seed: Option<u64>,
    horizon_us: Option<u64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Format,
) -> replsim::Result<()> {
    let mut cfg = match config {
        Some(path) => ScenarioConfig::from_file(&path)?,
        None => ScenarioConfig::default(),
    };
    cfg.protocol = protocol.unwrap_or(cfg.protocol);
    cfg.n = masters.unwrap_or(cfg.n);
    cfg.scenario = scenario.unwrap_or(cfg.scenario);
    cfg.attack_rates_gbps = rates.unwrap_or(cfg.attack_rates_gbps);
    cfg.repetitions = reps.unwrap_or(cfg.repetitions);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.horizon_us = horizon_us.unwrap_or(cfg.horizon_us);
    cfg.validate()?;

    let records = harness::run_scenario(&cfg)?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let path = out_path(out, format!("{}-n{}-s{}.{ext}", cfg.protocol, cfg.n, cfg.scenario));
    harness::export(&records, format, &path)?;

    println!("{:>8} {:>12} {:>8} {:>14}", "rate", "mean_us", "silent", "leader_changes");
    for a in harness::aggregate(&records) {
        println!("{:>8} {:>12} {:>8} {:>14.2}", a.attack_rate_gbps, fmt_us(a.mean_us), a.silent_repetitions, a.leader_changes_mean);
    }
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn compare(a: &Path, b: &Path) -> replsim::Result<()> {
    let mut records = harness::read_json(a)?;
    records.extend(harness::read_json(b)?);
    let report = harness::summarize(&records)?;
    println!("{:>3} {:>6} {:>12} {:>12} {:>8} {:>10} {:>10}", "n", "rate", "raft_us", "bft_us", "ratio", "raft_coll", "bft_coll");
    for p in &report.points {
        println!(
            "{:>3} {:>6} {:>12} {:>12} {:>8} {:>10} {:>10}",
            p.n,
            p.attack_rate_gbps,
            fmt_us(p.raft_mean_us),
            fmt_us(p.bft_mean_us),
            p.ratio.map_or_else(|| "-".into(), |r| format!("{r:.3}")),
            p.raft_collapsed,
            p.bft_collapsed
        );
    }
    Ok(())
}

fn schedule(cluster: &Path, pods: &Path, seed: u64) -> replsim::Result<()> {
    let mut cluster = ClusterSpec::from_file(cluster)?;
    let pods = PodList::from_file(pods)?;
    let placements = scheduler::schedule_all(&mut cluster, &pods.pods, seed);
    let json = serde_json::json!({ "seed": seed, "placements": placements, "minions": cluster.minions });
    println!("{}", serde_json::to_string_pretty(&json).expect("placements serialize"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { protocol, masters, scenario, rates, reps, seed, horizon_us, config, out, format } => {
            run(protocol, masters, scenario, rates, reps, seed, horizon_us, config, out, format)
        }
        Command::Compare { a, b } => compare(&a, &b),
        Command::Schedule { cluster, pods, seed } => schedule(&cluster, &pods, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigRejected(_) | Error::Parse { .. } | Error::InvalidCluster(_) | Error::InvalidFault(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
