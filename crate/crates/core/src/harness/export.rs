use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsRecord;
use crate::error::{Error, Result};

/// Overrides the directory the CLI writes to when `--out` is a bare file
/// name or absent.
pub const OUT_DIR_ENV: &str = "REPLSIM_OUT_DIR";

pub const CSV_COLUMNS: [&str; 17] = [
    "run_id",
    "protocol",
    "n",
    "scenario",
    "attack_rate_gbps",
    "repetition",
    "seed",
    "requests_answered",
    "mean_us",
    "median_us",
    "p99_us",
    "leader_changes",
    "msgs_sent",
    "msgs_dropped",
    "cpu_pct_peak",
    "ram_mb_peak",
    "bandwidth_gbps_min",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::ConfigRejected(format!("unknown format {other:?}"))),
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn row(r: &MetricsRecord) -> [String; 17] {
    [
        r.run_id.clone(),
        r.protocol.to_string(),
        r.n.to_string(),
        r.scenario.to_string(),
        r.attack_rate_gbps.to_string(),
        r.repetition.to_string(),
        r.seed.to_string(),
        r.requests_answered.to_string(),
        opt(r.mean_us),
        opt(r.median_us),
        opt(r.p99_us),
        r.leader_changes.to_string(),
        r.msgs_sent.to_string(),
        r.msgs_dropped.to_string(),
        r.cpu_pct_peak.to_string(),
        r.ram_mb_peak.to_string(),
        r.bandwidth_gbps_min.to_string(),
    ]
}

fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[MetricsRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn io_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

pub fn export(records: &[MetricsRecord], format: Format, path: &Path) -> Result<()> {
    let wrap = |source: io::Error| Error::Export { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(records, &mut out).map_err(|e| wrap(io_err(e)))?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, records).map_err(|e| wrap(e.into()))?;
            out.write_all(b"\n").map_err(wrap)?;
        }
    }
    out.flush().map_err(wrap)
}

pub fn read_json(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Export { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}
