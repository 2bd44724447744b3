//! Implicit preference regularization on top of the group objective.
//!
//! Reward rankings inside each rollout group are mined into ordered
//! (preferred, rejected) pairs; a logistic loss on the difference of
//! policy-vs-reference log-likelihood ratios pushes preferred completions up
//! and rejected ones down. An adaptive multiplicative controller keeps the
//! regularizer's contribution inside a target band.

use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Var};

/// One mined (preferred, rejected) index pair within a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferencePair {
    pub preferred: usize,
    pub rejected: usize,
    pub gap: f64,
}

/// All ordered pairs whose reward gap strictly exceeds `delta_r`. With a
/// cap, the largest gaps win; ties break toward lower preferred then lower
/// rejected index.
pub fn mine_pairs(rewards: &[f64], delta_r: f64, cap: Option<usize>) -> Vec<PreferencePair> {
    assert!(delta_r > 0.0, "delta_r must be positive");
    let mut pairs = Vec::new();
    for i in 0..rewards.len() {
        for j in 0..rewards.len() {
            if i == j {
                continue;
            }
            let gap = rewards[i] - rewards[j];
            if gap > delta_r {
                pairs.push(PreferencePair {
                    preferred: i,
                    rejected: j,
                    gap,
                });
            }
        }
    }
    if let Some(cap) = cap {
        pairs.sort_by(|a, b| {
            b.gap
                .partial_cmp(&a.gap)
                .unwrap()
                .then(a.preferred.cmp(&b.preferred))
                .then(a.rejected.cmp(&b.rejected))
        });
        pairs.truncate(cap);
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpoLogprobMode {
    /// Length-normalized sequence log-probabilities.
    LengthNormalized,
    /// Raw sequence log-probability sums (ablation).
    Unnormalized,
}

/// Completion-level log-likelihood score under the current policy:
/// the mean (or sum) of the traced per-token log-probs.
pub fn completion_score(tape: &mut Tape, per_token_logp: Var, mode: DpoLogprobMode) -> Var {
    match mode {
        DpoLogprobMode::LengthNormalized => tape.mean(per_token_logp),
        DpoLogprobMode::Unnormalized => tape.sum(per_token_logp),
    }
}

/// Reference-side completion score from cached per-token log-probs.
pub fn reference_score(lp_ref: &[f64], mode: DpoLogprobMode) -> f64 {
    let total: f64 = lp_ref.iter().sum();
    match mode {
        DpoLogprobMode::LengthNormalized => total / lp_ref.len() as f64,
        DpoLogprobMode::Unnormalized => total,
    }
}

/// The pair logit
/// `z = beta * [(l_theta(i) - l_ref(i)) - (l_theta(j) - l_ref(j))]`,
/// differentiable in the policy scores; reference scores are constants.
pub fn dpo_logit(
    tape: &mut Tape,
    score_pref: Var,
    score_rej: Var,
    ref_pref: f64,
    ref_rej: f64,
    beta_dpo: f64,
) -> Var {
    assert!(beta_dpo > 0.0, "beta_dpo must be positive");
    let pref_side = tape.scalar_add(score_pref, -ref_pref);
    let rej_side = tape.scalar_add(score_rej, -ref_rej);
    let diff = tape.sub(pref_side, rej_side);
    tape.scalar_mul(diff, beta_dpo)
}

/// Negated preference objective: `-(1/N) * sum log sigmoid(z)` over all
/// mined pairs in the batch. Exactly zero when no pairs were mined.
pub fn pref_loss(tape: &mut Tape, logits: &[Var]) -> Var {
    if logits.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let mut terms = Vec::with_capacity(logits.len());
    for &z in logits {
        let s = tape.sigmoid(z);
        let ls = tape.log(s);
        terms.push(ls);
    }
    let total = tape.add_all(&terms);
    tape.scalar_mul(total, -1.0 / logits.len() as f64)
}

/// `total = grpo_term + lambda_reg * pref_term`; both inputs are already
/// negated objectives, so minimizing the result maximizes the combined one.
pub fn combined_loss(tape: &mut Tape, grpo_term: Var, pref_term: Var, lambda_reg: f64) -> Var {
    let scaled = tape.scalar_mul(pref_term, lambda_reg);
    tape.add(grpo_term, scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioMode {
    /// Ratio measured on loss magnitudes.
    LossMagnitude,
    /// Ratio measured on gradient norms.
    GradNorm,
}

/// Multiplicative controller holding the regularizer's contribution ratio
/// inside `[lo, hi]`. Magnitudes are smoothed with an exponential window
/// before the ratio is formed; updates start after the warmup.
#[derive(Debug, Clone)]
pub struct LambdaController {
    pub lambda: f64,
    pub lo: f64,
    pub hi: f64,
    pub step_mult: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub warmup: u32,
    pub eps_den: f64,
    pub smoothing: f64,
    smoothed_grpo: Option<f64>,
    smoothed_pref: Option<f64>,
    updates_seen: u32,
    /// Observed (smoothed) contribution ratios, one per update call.
    pub history: Vec<f64>,
}

/// Result of one controller update, for logging.
#[derive(Debug, Clone, Copy)]
pub struct LambdaUpdate {
    pub ratio_raw: f64,
    pub ratio_smoothed: f64,
    pub lambda: f64,
}

impl LambdaController {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lambda: f64,
        lo: f64,
        hi: f64,
        step_mult: f64,
        lambda_min: f64,
        lambda_max: f64,
        warmup: u32,
        smoothing: f64,
    ) -> LambdaController {
        assert!(lambda >= lambda_min && lambda <= lambda_max);
        assert!(0.0 <= lo && lo <= hi);
        assert!(step_mult > 1.0, "step multiplier must exceed 1");
        assert!((0.0..1.0).contains(&smoothing));
        LambdaController {
            lambda,
            lo,
            hi,
            step_mult,
            lambda_min,
            lambda_max,
            warmup,
            eps_den: 1e-8,
            smoothing,
            smoothed_grpo: None,
            smoothed_pref: None,
            updates_seen: 0,
            history: Vec::new(),
        }
    }

    fn smooth(prev: &mut Option<f64>, value: f64, decay: f64) -> f64 {
        let next = match *prev {
            Some(p) => decay * p + (1.0 - decay) * value,
            None => value,
        };
        *prev = Some(next);
        next
    }

    /// Observes one step's magnitudes and adjusts lambda multiplicatively:
    /// below the band multiply by the step, above it divide, inside leave
    /// unchanged. No adjustment during warmup.
    pub fn update(&mut self, grpo_mag: f64, pref_mag: f64) -> LambdaUpdate {
        assert!(grpo_mag >= 0.0 && pref_mag >= 0.0);
        let ratio_raw = self.lambda * pref_mag / (grpo_mag + self.eps_den);
        let sg = Self::smooth(&mut self.smoothed_grpo, grpo_mag, self.smoothing);
        let sp = Self::smooth(&mut self.smoothed_pref, pref_mag, self.smoothing);
        let ratio = self.lambda * sp / (sg + self.eps_den);
        self.history.push(ratio);
        self.updates_seen += 1;
        if self.updates_seen > self.warmup {
            if ratio < self.lo {
                self.lambda = (self.lambda * self.step_mult).min(self.lambda_max);
            } else if ratio > self.hi {
                self.lambda = (self.lambda / self.step_mult).max(self.lambda_min);
            }
        }
        LambdaUpdate {
            ratio_raw,
            ratio_smoothed: ratio,
            lambda: self.lambda,
        }
    }
}
