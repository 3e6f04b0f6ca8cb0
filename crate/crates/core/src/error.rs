use std::path::PathBuf;

use thiserror::Error;

use crate::sim::{Addr, Micros};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("engine fault: event scheduled at {fire_at}us but clock is already at {now}us")]
    PastEvent { now: Micros, fire_at: Micros },

    #[error("invalid target {0}")]
    InvalidTarget(Addr),

    #[error("protocol bug: {0}")]
    Protocol(String),

    #[error("invalid fault: {0}")]
    InvalidFault(String),

    #[error("unschedulable pod: {0}")]
    Unschedulable(String),

    #[error("config rejected: {0}")]
    ConfigRejected(String),

    #[error("report alignment: {0}")]
    ReportAlignment(String),

    #[error("export to {path}: {source}")]
    Export {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}
