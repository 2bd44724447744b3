//! On-disk artifact schemas: rollout logs, mined-pair exports, failure
//! points, and the metrics CSV layout.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::FailureLabel;

/// One rollout in a JSONL log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub query_id: usize,
    pub sample_id: usize,
    pub tokens: Vec<u32>,
    pub logp_old: Vec<f64>,
    pub reward: RewardParts,
    pub answer: Option<String>,
    pub confidence: Option<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardParts {
    pub corr: f64,
    pub fmt: f64,
    pub calib: f64,
    pub total: f64,
}

/// One mined preference pair in a JSONL export. Indices are within the
/// group of the query. The logit is present only when a policy and
/// reference were supplied to fill it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub query_id: usize,
    pub i: usize,
    pub j: usize,
    pub r_i: f64,
    pub r_j: f64,
    pub gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// One externally labeled failure point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailurePointRecord {
    pub step: u32,
    pub steps: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<FailureLabel>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("line {}: {}", ln + 1, e)))?,
        );
    }
    Ok(out)
}

/// Groups rollout records by query id, preserving first-seen order.
pub fn group_by_query(records: &[RolloutRecord]) -> Vec<(usize, Vec<&RolloutRecord>)> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: std::collections::HashMap<usize, Vec<&RolloutRecord>> =
        std::collections::HashMap::new();
    for r in records {
        if !groups.contains_key(&r.query_id) {
            order.push(r.query_id);
        }
        groups.entry(r.query_id).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let v = groups.remove(&id).unwrap();
            (id, v)
        })
        .collect()
}

/// Per-question (n, c) counts from a rollout log, in first-seen order.
pub fn counts_by_query(records: &[RolloutRecord]) -> Vec<(u32, u32)> {
    group_by_query(records)
        .into_iter()
        .map(|(_, rs)| {
            let n = rs.len() as u32;
            let c = rs.iter().filter(|r| r.correct).count() as u32;
            (n, c)
        })
        .collect()
}

/// Metrics CSV schema, version 1.
pub const METRICS_HEADER: &str = "step,mean_reward,advantage_mean,advantage_std,grpo_loss,pref_loss,lambda_reg,contribution_ratio,contribution_ratio_raw,mean_kl,pairs_mined,mean_len_correct,mean_len_incorrect,pass_at_1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_row(m: &crate::trainer::MetricRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.step,
        m.mean_reward,
        m.advantage_mean,
        m.advantage_std,
        m.grpo_loss,
        m.pref_loss,
        m.lambda_reg,
        m.contribution_ratio,
        m.contribution_ratio_raw,
        m.mean_kl,
        m.pairs_mined,
        opt(m.mean_len_correct),
        opt(m.mean_len_incorrect),
        opt(m.pass_at_1),
    )
}
