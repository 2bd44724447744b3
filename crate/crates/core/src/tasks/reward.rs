//! Three-component reward stack: correctness, format, calibration.

use crate::policy::{Rollout, Vocabulary};

/// Component weights for the total reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub corr: f64,
    pub fmt: f64,
    pub calib: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            corr: 2.0,
            fmt: 0.9,
            calib: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn max_total(&self) -> f64 {
        self.corr + self.fmt + self.calib
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r_corr: f64,
    pub r_fmt: f64,
    pub r_calib: f64,
    pub total: f64,
}

/// 1 iff a parsed answer exists and matches the truth after canonical
/// numeric normalization; unparseable completions score 0.
pub fn correctness_reward(rollout: &Rollout, truth: &str) -> f64 {
    match rollout.answer.as_deref() {
        Some(ans) => {
            if answers_match(ans, truth) {
                1.0
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

fn answers_match(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Fraction of the four structural markers present in order: answer-open,
/// answer-close, confidence-open, confidence-close. Out-of-order markers
/// earn credit only for the longest in-order prefix.
pub fn format_reward(rollout: &Rollout, vocab: &Vocabulary) -> f64 {
    let required = [
        vocab.answer_open,
        vocab.answer_close,
        vocab.conf_open,
        vocab.conf_close,
    ];
    let mut matched = 0;
    for &tok in &rollout.completion {
        if matched < required.len() && tok == required[matched] {
            matched += 1;
        }
    }
    matched as f64 / required.len() as f64
}

/// Complement of the Brier score against the binary correctness indicator:
/// `1 - (a - q)^2` when a confidence was parsed, 0 when absent.
pub fn calibration_reward(rollout: &Rollout, correct: bool) -> f64 {
    match rollout.confidence {
        Some(q) => calibration_value(q, correct),
        None => 0.0,
    }
}

/// Brier complement for an explicit confidence value. Out-of-range values
/// are clamped and flagged.
pub fn calibration_value(q: f64, correct: bool) -> f64 {
    let q = if (0.0..=1.0).contains(&q) {
        q
    } else {
        log::warn!("confidence {} outside [0,1], clamping", q);
        q.clamp(0.0, 1.0)
    };
    let a = if correct { 1.0 } else { 0.0 };
    1.0 - (a - q) * (a - q)
}

/// Weighted sum of the three components.
pub fn total_reward(r_corr: f64, r_fmt: f64, r_calib: f64, w: &RewardWeights) -> f64 {
    assert!(w.corr >= 0.0 && w.fmt >= 0.0 && w.calib >= 0.0);
    w.corr * r_corr + w.fmt * r_fmt + w.calib * r_calib
}

/// Full reward breakdown of one rollout against its ground truth.
pub fn score_rollout(rollout: &Rollout, truth: &str, vocab: &Vocabulary, w: &RewardWeights) -> RewardBreakdown {
    let r_corr = correctness_reward(rollout, truth);
    let r_fmt = format_reward(rollout, vocab);
    let r_calib = calibration_reward(rollout, r_corr == 1.0);
    RewardBreakdown {
        r_corr,
        r_fmt,
        r_calib,
        total: total_reward(r_corr, r_fmt, r_calib, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout_with(
        completion: Vec<u32>,
        answer: Option<&str>,
        confidence: Option<f64>,
    ) -> Rollout {
        Rollout {
            query: vec![0],
            logp_old: vec![-0.1; completion.len()],
            completion,
            terminated: true,
            answer: answer.map(|s| s.to_string()),
            confidence,
        }
    }

    #[test]
    fn correctness_normalizes_numerics() {
        let r = rollout_with(vec![], Some("12"), None);
        assert_eq!(correctness_reward(&r, "12"), 1.0);
        let r = rollout_with(vec![], Some("012"), None);
        assert_eq!(correctness_reward(&r, "12"), 1.0);
        let r = rollout_with(vec![], Some("13"), None);
        assert_eq!(correctness_reward(&r, "12"), 0.0);
        let r = rollout_with(vec![], None, None);
        assert_eq!(correctness_reward(&r, "12"), 0.0);
        let r = rollout_with(vec![], Some("even"), None);
        assert_eq!(correctness_reward(&r, "even"), 1.0);
    }

    #[test]
    fn format_counts_in_order_markers() {
        let v = Vocabulary::toy();
        let full = rollout_with(
            vec![
                v.answer_open,
                v.number(3),
                v.answer_close,
                v.conf_open,
                v.conf_lead,
                v.number(5),
                v.number(0),
                v.conf_close,
            ],
            None,
            None,
        );
        assert_eq!(format_reward(&full, &v), 1.0);

        let answer_only = rollout_with(vec![v.answer_open, v.number(3), v.answer_close], None, None);
        assert_eq!(format_reward(&answer_only, &v), 0.5);

        // markers out of order: only the in-order prefix counts
        let scrambled = rollout_with(
            vec![v.conf_close, v.answer_open, v.conf_open, v.answer_close],
            None,
            None,
        );
        assert_eq!(format_reward(&scrambled, &v), 0.75);

        let reversed = rollout_with(vec![v.conf_close, v.conf_open, v.answer_close, v.answer_open], None, None);
        assert_eq!(format_reward(&reversed, &v), 0.25);

        let empty = rollout_with(vec![v.eos], None, None);
        assert_eq!(format_reward(&empty, &v), 0.0);
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibration_value(1.0, true), 1.0);
        assert!((calibration_value(0.5, true) - 0.75).abs() < 1e-15);
        assert!((calibration_value(0.5, false) - 0.75).abs() < 1e-15);
        assert_eq!(calibration_value(0.0, true), 0.0);
        // missing confidence scores zero
        let r = rollout_with(vec![], None, None);
        assert_eq!(calibration_reward(&r, true), 0.0);
        // out-of-range confidence clamps
        assert_eq!(calibration_value(1.7, true), 1.0);
    }

    #[test]
    fn total_reward_examples() {
        let w = RewardWeights::default();
        let total = total_reward(1.0, 1.0, 0.75, &w);
        assert!((total - 3.65).abs() < 1e-12);
        assert_eq!(total_reward(0.0, 0.0, 0.0, &w), 0.0);
        let proj = RewardWeights {
            corr: 1.0,
            fmt: 0.0,
            calib: 0.0,
        };
        assert_eq!(total_reward(1.0, 0.3, 0.9, &proj), 1.0);
    }

    #[test]
    fn total_reward_monotone_and_bounded() {
        let w = RewardWeights::default();
        let base = total_reward(0.0, 0.4, 0.2, &w);
        assert!(total_reward(1.0, 0.4, 0.2, &w) >= base);
        assert!(total_reward(0.0, 0.5, 0.2, &w) >= base);
        assert!(total_reward(0.0, 0.4, 0.3, &w) >= base);
        assert!(total_reward(1.0, 1.0, 1.0, &w) <= w.max_total() + 1e-15);
    }

    #[test]
    fn expected_calibration_is_maximized_at_true_probability() {
        // E_a~Bern(p)[1 - (a - q)^2] over the 0.01 grid peaks exactly at q = p.
        for p10 in 1..=9u32 {
            let p = p10 as f64 / 10.0;
            let expected = |q: f64| p * calibration_value(q, true) + (1.0 - p) * calibration_value(q, false);
            let mut best_q = 0.0;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=100 {
                let q = i as f64 / 100.0;
                let e = expected(q);
                if e > best {
                    best = e;
                    best_q = q;
                }
            }
            assert!((best_q - p).abs() < 1e-12, "p={} argmax={}", p, best_q);
        }
    }
}
