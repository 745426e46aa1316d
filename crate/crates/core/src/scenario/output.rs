//! Run artefacts: `ticks.csv` (timing-free, byte-reproducible), `ticks.jsonl`
//! (everything, one record per line), `metrics.json` and `config.echo`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Metrics, ScenarioConfig, ScenarioError, TickLog};

pub const CSV_FILE: &str = "ticks.csv";
pub const JSONL_FILE: &str = "ticks.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ECHO_FILE: &str = "config.echo";

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn header(first: &TickLog) -> Vec<String> {
    let mut h: Vec<String> = ["tick", "t", "leader_x", "leader_y", "leader_z", "h_coll", "min_distance", "obstacle"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for a in &first.agents {
        for field in ["x", "y", "z", "unom_x", "unom_y", "unom_z", "u_x", "u_y", "u_z", "status", "active", "error"] {
            h.push(format!("{}_{field}", a.id));
        }
    }
    for p in &first.pairs {
        h.push(format!("{}-{}_distance", p.a, p.b));
    }
    h
}

fn record(log: &TickLog) -> Vec<String> {
    let mut r = vec![log.tick.to_string(), log.t.to_string()];
    r.extend(log.leader_pos.iter().map(|v| v.to_string()));
    r.push(opt(log.h_coll));
    r.push(opt(log.min_distance));
    r.push(log.obstacle_index.map(|k| k.to_string()).unwrap_or_default());
    for a in &log.agents {
        r.extend(a.position.iter().chain(a.u_nom.iter()).chain(a.u.iter()).map(|v| v.to_string()));
        r.push(a.status.as_str().to_string());
        r.push(a.active_labels.join(";"));
        r.push(a.tracking_error.to_string());
    }
    r.extend(log.pairs.iter().map(|p| p.distance.to_string()));
    r
}

/// Write the per-tick table. Wall-clock timings are left out so equal
/// inputs give identical bytes.
pub fn write_csv(path: &Path, logs: &[TickLog]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    if let Some(first) = logs.first() {
        w.write_record(header(first)).map_err(|e| io_err(path, e))?;
    }
    for log in logs {
        w.write_record(record(log)).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_outputs(dir: &Path, config: &ScenarioConfig, logs: &[TickLog], metrics: Option<&Metrics>) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let echo = dir.join(ECHO_FILE);
    fs::write(&echo, config.to_toml()).map_err(|e| io_err(&echo, e))?;
    write_csv(&dir.join(CSV_FILE), logs)?;

    let jsonl = dir.join(JSONL_FILE);
    let mut w = BufWriter::new(File::create(&jsonl).map_err(|e| io_err(&jsonl, e))?);
    for log in logs {
        serde_json::to_writer(&mut w, log).map_err(|e| io_err(&jsonl, e))?;
        w.write_all(b"\n").map_err(|e| io_err(&jsonl, e))?;
    }
    w.flush().map_err(|e| io_err(&jsonl, e))?;

    if let Some(m) = metrics {
        let path = dir.join(METRICS_FILE);
        let text = serde_json::to_string_pretty(m).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
