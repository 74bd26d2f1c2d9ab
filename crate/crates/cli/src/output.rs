//! Artifact files: frontier.csv, costs.csv, run.json, and model snapshots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use decnas_core::coordinator::IterationReport;
use decnas_core::cost::{CostSummary, LedgerEntry};
use decnas_core::nn::Model;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::pipeline::{FrontierRow, SearchRun};

pub const FRONTIER_FILE: &str = "frontier.csv";
pub const COSTS_FILE: &str = "costs.csv";
pub const RUN_FILE: &str = "run.json";
pub const MODELS_DIR: &str = "models";
pub const SVG_FILE: &str = "frontier.svg";

pub const FRONTIER_HEADER: &str = "method,iteration,macs,macs_ratio,top1_accuracy";
pub const COSTS_HEADER: &str = "iteration,round,candidate_id,client_id,uplink_bytes,downlink_bytes,compute_macs";

/// SHA-256 over `blob <len>\0<content>`, the object layout git hashes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn frontier_csv(rows: &[FrontierRow]) -> String {
    let mut s = format!("{FRONTIER_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6},{:.6}", r.method, r.iteration, r.macs, r.macs_ratio, r.top1_accuracy);
    }
    s
}

pub fn parse_frontier(text: &str) -> anyhow::Result<Vec<FrontierRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(FRONTIER_HEADER) {
        bail!("frontier file does not start with `{FRONTIER_HEADER}`");
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let ctx = || format!("frontier line {}: `{line}`", i + 2);
            if f.len() != 5 {
                bail!("{}: expected 5 fields", ctx());
            }
            Ok(FrontierRow {
                method: f[0].to_string(),
                iteration: f[1].parse().with_context(ctx)?,
                macs: f[2].parse().with_context(ctx)?,
                macs_ratio: f[3].parse().with_context(ctx)?,
                top1_accuracy: f[4].parse().with_context(ctx)?,
            })
        })
        .collect()
}

pub fn costs_csv(entries: &[LedgerEntry]) -> String {
    let mut s = format!("{COSTS_HEADER}\n");
    for e in entries {
        let cand = e.candidate_id.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.iteration, e.round, cand, e.client_id, e.uplink_bytes, e.downlink_bytes, e.compute_macs
        );
    }
    s
}

/// Column totals of costs.csv: (uplink, downlink, compute MACs).
pub fn cost_totals(text: &str) -> anyhow::Result<(u64, u64, u64)> {
    let mut lines = text.lines();
    if lines.next() != Some(COSTS_HEADER) {
        bail!("cost file does not start with `{COSTS_HEADER}`");
    }
    let mut totals = (0u64, 0u64, 0u64);
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            bail!("cost line {}: expected 7 fields", i + 2);
        }
        let num = |s: &str| s.parse::<u64>().with_context(|| format!("cost line {}: `{line}`", i + 2));
        totals.0 += num(f[4])?;
        totals.1 += num(f[5])?;
        totals.2 += num(f[6])?;
    }
    Ok(totals)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: String,
    pub config: RunConfig,
    /// Candidates come from every conv/dense layer except the classifier.
    pub candidate_layers: String,
    pub initial_accuracy: f64,
    pub starting_macs: u64,
    pub budgets: Vec<f64>,
    pub reports: Vec<IterationReport>,
    pub cost: CostSummary,
    /// Content hashes of the other artifacts, keyed by relative path.
    pub artifacts: BTreeMap<String, String>,
}

fn write(dir: &Path, rel: &str, bytes: &[u8], hashes: &mut BTreeMap<String, String>) -> anyhow::Result<()> {
    let path = dir.join(rel);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    hashes.insert(rel.to_string(), content_hash(bytes));
    Ok(())
}

pub fn model_file(iteration: usize) -> String {
    format!("{MODELS_DIR}/gm_{iteration:03}.json")
}

/// Writes every artifact of a search run and returns the written paths.
pub fn write_search(dir: &Path, config: &RunConfig, run: &SearchRun) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join(MODELS_DIR)).with_context(|| format!("creating {}", dir.display()))?;
    let mut hashes = BTreeMap::new();
    write(dir, FRONTIER_FILE, frontier_csv(&run.frontier).as_bytes(), &mut hashes)?;
    write(dir, COSTS_FILE, costs_csv(&run.outcome.ledger).as_bytes(), &mut hashes)?;
    let models: Vec<&Model> = std::iter::once(&run.gm0).chain(&run.outcome.models).collect();
    for (t, m) in models.iter().enumerate() {
        write(dir, &model_file(t), &serde_json::to_vec(m)?, &mut hashes)?;
    }
    let record = RunRecord {
        seed: config.run.seed,
        method: config.method().into(),
        config: config.clone(),
        candidate_layers: "every conv/dense layer except the classifier".into(),
        initial_accuracy: run.outcome.initial_accuracy,
        starting_macs: run.gm0.macs(),
        budgets: run.outcome.schedule.budgets.clone(),
        reports: run.outcome.reports.clone(),
        cost: run.cost.clone(),
        artifacts: hashes.clone(),
    };
    fs::write(dir.join(RUN_FILE), serde_json::to_vec_pretty(&record)?)?;
    let mut paths: Vec<PathBuf> = hashes.keys().map(|k| dir.join(k)).collect();
    paths.push(dir.join(RUN_FILE));
    Ok(paths)
}

/// Merges rows into an existing (or new) frontier.csv and refreshes its hash
/// in run.json when one exists.
pub fn append_frontier(dir: &Path, rows: Vec<FrontierRow>) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(FRONTIER_FILE);
    let mut all = if path.exists() {
        parse_frontier(&fs::read_to_string(&path)?)?
    } else {
        Vec::new()
    };
    all.extend(rows);
    let text = frontier_csv(&crate::pipeline::sort_frontier(all));
    fs::write(&path, &text)?;
    let run_path = dir.join(RUN_FILE);
    if run_path.exists() {
        let mut record: RunRecord = serde_json::from_slice(&fs::read(&run_path)?).context("reading run.json")?;
        record.artifacts.insert(FRONTIER_FILE.into(), content_hash(text.as_bytes()));
        fs::write(&run_path, serde_json::to_vec_pretty(&record)?)?;
    }
    Ok(())
}
