use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

pub const RUN_RECORD_NAME: &str = "run_record.json";

/// Provenance written next to every subcommand's outputs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub threads_cap: Option<usize>,
    pub status: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunRecord {
    pub fn start(subcommand: &str, threads_cap: Option<usize>) -> Self {
        Self {
            tool: "afmkit",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.into(),
            argv: std::env::args().collect(),
            config: Value::Null,
            seeds: Vec::new(),
            threads_cap,
            status: "running".into(),
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
        }
    }

    pub fn write(mut self, out_dir: &Path, status: &str) -> std::io::Result<()> {
        self.status = status.into();
        self.finished_unix_s = unix_now();
        fs::create_dir_all(out_dir)?;
        let text = serde_json::to_string_pretty(&self).expect("run record serializes") + "\n";
        fs::write(out_dir.join(RUN_RECORD_NAME), text)
    }
}
