//! Group-relative policy optimization objectives.
//!
//! Builds the token-level clipped surrogate with k3 KL regularization, and
//! the sequence-level variant that moves the importance ratio and clipping
//! from tokens to whole sequences.

use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Var};
use crate::error::{Error, Result};
use crate::policy::{Rollout, TracedPolicy};
use crate::tasks::RewardBreakdown;

/// Exponent clamp for the k3 ratio; keeps `exp` well inside f64 range.
pub const K3_EXPONENT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StdMode {
    Population,
    Sample,
}

/// Normalizes group rewards to zero-mean, unit-std advantages.
///
/// Groups whose reward std falls below `std_guard` are degenerate: all
/// advantages are exactly zero and the flag is set.
pub fn normalize_advantages(
    rewards: &[f64],
    std_guard: f64,
    mode: StdMode,
) -> Result<(Vec<f64>, bool)> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    assert!(std_guard > 0.0, "std_guard must be positive");
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let denom = match mode {
        StdMode::Population => n,
        StdMode::Sample => n - 1.0,
    };
    let std = (centered.iter().map(|c| c * c).sum::<f64>() / denom).sqrt();
    if std < std_guard {
        return Ok((vec![0.0; rewards.len()], true));
    }
    Ok((centered.iter().map(|c| c / std).collect(), false))
}

/// Non-negative per-token KL estimate `r - log r - 1` with
/// `r = exp(logp_ref - logp_theta)`.
pub fn kl_k3(logp_ref: f64, logp_theta: f64) -> f64 {
    let mut log_r = logp_ref - logp_theta;
    if log_r.abs() > K3_EXPONENT_CLAMP {
        log::warn!("k3 exponent {} clamped to +/-{}", log_r, K3_EXPONENT_CLAMP);
        log_r = log_r.clamp(-K3_EXPONENT_CLAMP, K3_EXPONENT_CLAMP);
    }
    log_r.exp() - log_r - 1.0
}

/// One rollout with its reward and the cached per-token log-probs under the
/// behavior and reference snapshots.
#[derive(Debug, Clone)]
pub struct ScoredRollout {
    pub rollout: Rollout,
    pub reward: RewardBreakdown,
    pub lp_old: Vec<f64>,
    pub lp_ref: Vec<f64>,
}

/// The G completions for one query with their normalized advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub query_id: usize,
    pub rollouts: Vec<ScoredRollout>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

impl RolloutGroup {
    pub fn new(
        query_id: usize,
        rollouts: Vec<ScoredRollout>,
        std_guard: f64,
        mode: StdMode,
    ) -> Result<RolloutGroup> {
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward.total).collect();
        let (advantages, degenerate) = normalize_advantages(&rewards, std_guard, mode)?;
        Ok(RolloutGroup {
            query_id,
            rollouts,
            advantages,
            degenerate,
        })
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward.total).collect()
    }

    pub fn size(&self) -> usize {
        self.rollouts.len()
    }
}

/// Traced per-token log-probs for each rollout of a group, shared between
/// the policy objective and the preference regularizer.
pub fn trace_group(tape: &mut Tape, group: &RolloutGroup, theta: &TracedPolicy) -> Vec<Var> {
    group
        .rollouts
        .iter()
        .map(|r| {
            assert!(!r.rollout.completion.is_empty(), "length-zero rollout");
            theta.sequence_logprob(tape, &r.rollout.query, &r.rollout.completion)
        })
        .collect()
}

/// Per-token clipped-surrogate term of one group (negated objective).
///
/// Returns `-(1/G) sum_i (1/|o_i|) sum_t { min[rho A, clip(rho) A] - gamma k3 }`.
/// The behavior and reference log-probs enter as constants.
pub fn grpo_group_term(
    tape: &mut Tape,
    group: &RolloutGroup,
    traced: &[Var],
    eps: f64,
    gamma: f64,
) -> Var {
    assert!(eps > 0.0 && eps < 1.0, "eps must be in (0,1)");
    assert!(gamma >= 0.0, "gamma must be non-negative");
    assert_eq!(traced.len(), group.size());
    let mut per_rollout = Vec::with_capacity(group.size());
    for (i, sr) in group.rollouts.iter().enumerate() {
        let lp = traced[i];
        let n = sr.rollout.completion.len();
        let adv = group.advantages[i];
        let lp_old = tape.constant(vec![n], sr.lp_old.clone());
        let lp_ref = tape.constant(vec![n], sr.lp_ref.clone());

        let log_ratio = tape.sub(lp, lp_old);
        let ratio = tape.exp(log_ratio);
        let unclipped = tape.scalar_mul(ratio, adv);
        let clipped_ratio = tape.clip(ratio, 1.0 - eps, 1.0 + eps);
        let clipped = tape.scalar_mul(clipped_ratio, adv);
        let surrogate = tape.min(unclipped, clipped);

        let log_r = tape.sub(lp_ref, lp);
        let log_r = tape.clip(log_r, -K3_EXPONENT_CLAMP, K3_EXPONENT_CLAMP);
        let r = tape.exp(log_r);
        let r_minus_log = tape.sub(r, log_r);
        let k3 = tape.scalar_add(r_minus_log, -1.0);

        let penalty = tape.scalar_mul(k3, gamma);
        let inner = tape.sub(surrogate, penalty);
        per_rollout.push(tape.mean(inner));
    }
    let total = tape.add_all(&per_rollout);
    tape.scalar_mul(total, -1.0 / group.size() as f64)
}

/// Sequence-level variant: the per-token ratio is replaced by
/// `s_i = exp(l_theta - l_old)` on length-normalized log-probs, applied
/// once per sequence; the KL term stays token-averaged.
pub fn gspo_group_term(
    tape: &mut Tape,
    group: &RolloutGroup,
    traced: &[Var],
    eps: f64,
    gamma: f64,
) -> Var {
    assert!(eps > 0.0 && eps < 1.0, "eps must be in (0,1)");
    assert!(gamma >= 0.0, "gamma must be non-negative");
    assert_eq!(traced.len(), group.size());
    let mut per_rollout = Vec::with_capacity(group.size());
    for (i, sr) in group.rollouts.iter().enumerate() {
        let lp = traced[i];
        let n = sr.rollout.completion.len();
        let adv = group.advantages[i];

        let ell_theta = tape.mean(lp);
        let ell_old = sr.lp_old.iter().sum::<f64>() / n as f64;
        let log_s = tape.scalar_add(ell_theta, -ell_old);
        let s = tape.exp(log_s);
        let unclipped = tape.scalar_mul(s, adv);
        let clipped_s = tape.clip(s, 1.0 - eps, 1.0 + eps);
        let clipped = tape.scalar_mul(clipped_s, adv);
        let surrogate = tape.min(unclipped, clipped);

        let lp_ref = tape.constant(vec![n], sr.lp_ref.clone());
        let log_r = tape.sub(lp_ref, lp);
        let log_r = tape.clip(log_r, -K3_EXPONENT_CLAMP, K3_EXPONENT_CLAMP);
        let r = tape.exp(log_r);
        let r_minus_log = tape.sub(r, log_r);
        let k3 = tape.scalar_add(r_minus_log, -1.0);
        let kl_mean = tape.mean(k3);

        let penalty = tape.scalar_mul(kl_mean, gamma);
        per_rollout.push(tape.sub(surrogate, penalty));
    }
    let total = tape.add_all(&per_rollout);
    tape.scalar_mul(total, -1.0 / group.size() as f64)
}

/// Convenience wrapper: traces the group under `theta` and builds the
/// token-level loss.
pub fn grpo_loss(
    tape: &mut Tape,
    group: &RolloutGroup,
    theta: &TracedPolicy,
    eps: f64,
    gamma: f64,
) -> Var {
    let traced = trace_group(tape, group, theta);
    grpo_group_term(tape, group, &traced, eps, gamma)
}

/// Convenience wrapper for the sequence-level loss.
pub fn gspo_loss(
    tape: &mut Tape,
    group: &RolloutGroup,
    theta: &TracedPolicy,
    eps: f64,
    gamma: f64,
) -> Var {
    let traced = trace_group(tape, group, theta);
    gspo_group_term(tape, group, &traced, eps, gamma)
}
