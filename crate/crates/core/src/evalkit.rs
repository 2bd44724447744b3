//! Evaluation and analysis mathematics: Pass@k, conditional perplexity,
//! preference margins, solvable-set coverage, and failure-locality density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{length_normalized_logprob, PolicyParams, Rollout};

/// Exact binomial coefficient; valid for n up to 64 well within u128 range.
fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Unbiased Pass@k estimator `1 - C(n - c, k) / C(n, k)`, averaged over
/// questions. `counts` holds one `(n, c)` pair per question.
pub fn pass_at_k(counts: &[(u32, u32)], k: u32) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("pass_at_k over no questions".into()));
    }
    let mut sum = 0.0;
    for &(n, c) in counts {
        if c > n {
            return Err(Error::InvalidInput(format!(
                "correct count {} exceeds generations {}",
                c, n
            )));
        }
        if k > n {
            return Err(Error::InvalidInput(format!(
                "k {} exceeds generations {}",
                k, n
            )));
        }
        let miss = binomial((n - c) as u64, k as u64);
        let total = binomial(n as u64, k as u64);
        sum += 1.0 - miss as f64 / total as f64;
    }
    Ok(sum / counts.len() as f64)
}

/// Exponentiated average negative log-likelihood of `completion` given
/// `query`; always at least 1.
pub fn conditional_perplexity(params: &PolicyParams, query: &[u32], completion: &[u32]) -> f64 {
    (-length_normalized_logprob(params, query, completion)).exp()
}

/// Mean length-normalized log-prob of correct completions minus that of
/// incorrect ones; absent when either side is empty.
pub fn preference_margin(
    params: &PolicyParams,
    correct: &[Rollout],
    incorrect: &[Rollout],
) -> Option<f64> {
    let mean_ell = |rs: &[Rollout]| -> Option<f64> {
        if rs.is_empty() {
            return None;
        }
        let sum: f64 = rs
            .iter()
            .map(|r| length_normalized_logprob(params, &r.query, &r.completion))
            .sum();
        Some(sum / rs.len() as f64)
    };
    Some(mean_ell(correct)? - mean_ell(incorrect)?)
}

/// One cell of the solved/unsolved partition across three systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub base: bool,
    pub grpo: bool,
    pub amir: bool,
    pub fraction: f64,
}

/// Classifies each question as solvable (at least one correct rollout) per
/// system and reports the fractions of the eight cells. Cells are ordered
/// with solved-by-base first, lexicographic on (base, grpo, amir) descending.
pub fn coverage_table(base: &[u32], grpo: &[u32], amir: &[u32]) -> Result<Vec<CoverageCell>> {
    if base.len() != grpo.len() || base.len() != amir.len() {
        return Err(Error::InvalidInput(
            "coverage_table: mismatched question sets".into(),
        ));
    }
    if base.is_empty() {
        return Err(Error::InvalidInput("coverage_table: no questions".into()));
    }
    let mut counts = [0usize; 8];
    for i in 0..base.len() {
        let idx =
            ((base[i] == 0) as usize) << 2 | ((grpo[i] == 0) as usize) << 1 | (amir[i] == 0) as usize;
        counts[idx] += 1;
    }
    let q = base.len() as f64;
    let mut out = Vec::with_capacity(8);
    for (idx, &c) in counts.iter().enumerate() {
        out.push(CoverageCell {
            base: idx & 4 == 0,
            grpo: idx & 2 == 0,
            amir: idx & 1 == 0,
            fraction: c as f64 / q,
        });
    }
    Ok(out)
}

/// Closed label vocabulary for failure annotations (externally supplied).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureLabel {
    Calculation,
    Conceptual,
    Reasoning,
    Modeling,
    Constraint,
    PromptMisinterpretation,
    Format,
    Other,
}

/// First-error position within a reasoning chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailurePoint {
    /// 1-based index of the first erroneous step.
    pub first_error_step: u32,
    pub total_steps: u32,
    pub label: Option<FailureLabel>,
}

impl FailurePoint {
    /// Relative position `step / steps` in `(0, 1]`.
    pub fn relative_position(&self) -> f64 {
        assert!(
            self.first_error_step >= 1 && self.first_error_step <= self.total_steps,
            "step {} outside 1..={}",
            self.first_error_step,
            self.total_steps
        );
        self.first_error_step as f64 / self.total_steps as f64
    }
}

pub const DENSITY_GRID: usize = 101;
pub const DEFAULT_DENSITY_BANDWIDTH: f64 = 0.07;

/// Gaussian kernel density of relative failure positions on a fixed
/// 101-point grid over [0, 1], with boundary reflection at both ends.
pub fn locality_density(points: &[FailurePoint], bandwidth: f64) -> Result<Vec<(f64, f64)>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("locality_density: no points".into()));
    }
    if bandwidth <= 0.0 {
        return Err(Error::InvalidInput("bandwidth must be positive".into()));
    }
    let positions: Vec<f64> = points.iter().map(|p| p.relative_position()).collect();
    let norm = 1.0 / (positions.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut out = Vec::with_capacity(DENSITY_GRID);
    for g in 0..DENSITY_GRID {
        let x = g as f64 / (DENSITY_GRID - 1) as f64;
        let mut acc = 0.0;
        for &p in &positions {
            // reflected images of p under the mirrors at 0 and 1
            for shift in [-2.0, 0.0, 2.0] {
                for center in [shift + p, shift - p] {
                    let d = (x - center) / bandwidth;
                    acc += (-0.5 * d * d).exp();
                }
            }
        }
        out.push((x, norm * acc));
    }
    Ok(out)
}

/// Trapezoid integral of a density sampled on the uniform grid.
pub fn density_integral(density: &[(f64, f64)]) -> f64 {
    let mut acc = 0.0;
    for w in density.windows(2) {
        acc += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    acc
}
