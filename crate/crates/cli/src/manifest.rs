//! The run manifest written next to every set of artifacts.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use floquet_core::config::Tolerances;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub command: String,
    pub problem: String,
    pub grid_nt: usize,
    pub substeps: usize,
    pub window: Option<(f64, f64)>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub options: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub started_unix: f64,
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub run: String,
    pub tool: String,
    pub version: String,
    pub problem_sha256: String,
    pub config: ConfigEcho,
    pub tolerances: Tolerances,
    pub artifacts: Vec<String>,
    pub summary: serde_json::Value,
    pub timing: Timing,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Run identifier derived from the inputs only, so artifacts of identical
/// runs are byte-identical.
pub fn run_id(problem_hash: &str, config: &ConfigEcho, tol: &Tolerances) -> String {
    let echo = serde_json::to_string(&(problem_hash, config, tol)).unwrap_or_default();
    sha256_hex(echo.as_bytes())[..16].to_string()
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or(Duration::ZERO).as_secs_f64()
}
