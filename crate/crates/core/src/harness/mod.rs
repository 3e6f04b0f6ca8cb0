//! Scenario runner: builds a cluster per (attack rate, repetition), injects
//! the scenario's crashes and DDoS fault, drives closed-loop clients and
//! turns the run into a [`MetricsRecord`].

mod client;
mod config;
mod export;
mod metrics;
mod runner;

pub use client::{ClosedLoopClient, Targeting};
pub use config::{Benchmark, Scenario, ScenarioConfig, DEFAULT_COSTS, DEFAULT_RATES, DEFAULT_RETRANSMIT_US};
pub use export::{export, read_json, to_csv_string, Format, CSV_COLUMNS, OUT_DIR_ENV};
pub use metrics::{
    aggregate, mean, median, percentile, summarize, Aggregate, ComparisonReport, MetricsRecord, RatePoint, ResourceSample, COLLAPSE_FACTOR,
};
pub use runner::{repetition_seed, run_once, run_scenario, run_scenario_with};
