//! Flat key = value training configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::amir::{DpoLogprobMode, RatioMode};
use crate::error::{Error, Result};
use crate::grpo::StdMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Grpo,
    AmirGrpo,
    Gspo,
    AmirGspo,
}

impl Algorithm {
    pub fn uses_pairs(&self) -> bool {
        matches!(self, Algorithm::AmirGrpo | Algorithm::AmirGspo)
    }

    pub fn sequence_level(&self) -> bool {
        matches!(self, Algorithm::Gspo | Algorithm::AmirGspo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Grpo => "grpo",
            Algorithm::AmirGrpo => "amir-grpo",
            Algorithm::Gspo => "gspo",
            Algorithm::AmirGspo => "amir-gspo",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algorithm> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "amir-grpo" => Ok(Algorithm::AmirGrpo),
            "gspo" => Ok(Algorithm::Gspo),
            "amir-gspo" => Ok(Algorithm::AmirGspo),
            other => Err(Error::Config(format!("unknown algorithm {:?}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub group_size: usize,
    pub batch_queries: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub beta_dpo: f64,
    pub delta_r: f64,
    pub lambda_init: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_step_mult: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_warmup: u32,
    pub lambda_smoothing: f64,
    pub lambda_ratio_mode: RatioMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub ref_refresh_interval: u64,
    pub shared_reference: bool,
    pub inner_epochs: usize,
    pub std_guard: f64,
    pub std_mode: StdMode,
    pub dpo_logprob_mode: DpoLogprobMode,
    pub pair_cap: usize,
    pub w_corr: f64,
    pub w_fmt: f64,
    pub w_calib: f64,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub eval_every: u64,
    pub eval_n: u32,
    pub eval_temperature: f64,
    pub eval_top_p: f64,
    pub checkpoint_every: u64,
    pub log_rollouts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Grpo,
            group_size: 8,
            batch_queries: 8,
            epsilon: 0.2,
            gamma: 0.01,
            beta_dpo: 0.5,
            delta_r: 0.39,
            lambda_init: 0.1,
            lambda_lo: 0.1,
            lambda_hi: 0.5,
            lambda_step_mult: 1.1,
            lambda_min: 1e-3,
            lambda_max: 10.0,
            lambda_warmup: 20,
            lambda_smoothing: 0.9,
            lambda_ratio_mode: RatioMode::LossMagnitude,
            lr: 1e-3,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            temperature: 1.0,
            top_p: 1.0,
            max_len: 16,
            total_steps: 500,
            seed: 0,
            ref_refresh_interval: 0,
            shared_reference: true,
            inner_epochs: 1,
            std_guard: 1e-4,
            std_mode: StdMode::Population,
            dpo_logprob_mode: DpoLogprobMode::LengthNormalized,
            pair_cap: 0,
            w_corr: 2.0,
            w_fmt: 0.9,
            w_calib: 1.0,
            emb_dim: 64,
            hidden_dim: 128,
            layers: 2,
            eval_every: 50,
            eval_n: 8,
            eval_temperature: 0.6,
            eval_top_p: 1.0,
            checkpoint_every: 0,
            log_rollouts: false,
        }
    }
}

/// (key, description) for every configuration field, in canonical order.
const FIELDS: &[(&str, &str)] = &[
    ("algorithm", "one of grpo, amir-grpo, gspo, amir-gspo"),
    ("group_size", "completions sampled per query (G)"),
    ("batch_queries", "queries per training step"),
    ("epsilon", "clip range of the importance ratio"),
    ("gamma", "weight of the k3 KL regularizer"),
    ("beta_dpo", "temperature of the preference logit"),
    ("delta_r", "minimum reward gap for a mined pair"),
    ("lambda_init", "initial preference-regularizer weight"),
    ("lambda_lo", "lower edge of the contribution-ratio band"),
    ("lambda_hi", "upper edge of the contribution-ratio band"),
    ("lambda_step_mult", "multiplicative lambda adjustment step"),
    ("lambda_min", "lambda floor"),
    ("lambda_max", "lambda ceiling"),
    ("lambda_warmup", "steps before lambda adjustments start"),
    ("lambda_smoothing", "exponential decay for magnitude smoothing"),
    (
        "lambda_ratio_mode",
        "contribution ratio source: loss or grad-norm",
    ),
    ("lr", "AdamW learning rate"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("adam_beta1", "AdamW first-moment decay"),
    ("adam_beta2", "AdamW second-moment decay"),
    ("adam_eps", "AdamW denominator epsilon"),
    ("temperature", "rollout sampling temperature"),
    ("top_p", "rollout nucleus mass; 1.0 disables truncation"),
    ("max_len", "completion length cap in tokens"),
    ("total_steps", "training steps"),
    ("seed", "global seed; all randomness derives from it"),
    (
        "ref_refresh_interval",
        "steps between reference snapshot refreshes; 0 = never",
    ),
    (
        "shared_reference",
        "true: one snapshot serves KL and preference terms; false: the preference side keeps the initial snapshot across refreshes",
    ),
    ("inner_epochs", "optimizer epochs per rollout batch"),
    ("std_guard", "reward-std threshold for degenerate groups"),
    ("std_mode", "advantage std: population or sample"),
    (
        "dpo_logprob_mode",
        "preference scores: length-normalized or unnormalized",
    ),
    ("pair_cap", "max mined pairs per group; 0 = unlimited"),
    ("w_corr", "correctness reward weight"),
    ("w_fmt", "format reward weight"),
    ("w_calib", "calibration reward weight"),
    ("emb_dim", "policy embedding width"),
    ("hidden_dim", "policy mixing-layer width"),
    ("layers", "policy mixing layers (1 or 2)"),
    ("eval_every", "steps between held-out evaluations; 0 = never"),
    ("eval_n", "generations per eval question"),
    ("eval_temperature", "eval sampling temperature"),
    ("eval_top_p", "eval nucleus mass"),
    ("checkpoint_every", "steps between checkpoints; 0 = final only"),
    ("log_rollouts", "write every training rollout to rollouts.jsonl"),
];

impl TrainConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "algorithm" => self.algorithm.to_string(),
            "group_size" => self.group_size.to_string(),
            "batch_queries" => self.batch_queries.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "gamma" => self.gamma.to_string(),
            "beta_dpo" => self.beta_dpo.to_string(),
            "delta_r" => self.delta_r.to_string(),
            "lambda_init" => self.lambda_init.to_string(),
            "lambda_lo" => self.lambda_lo.to_string(),
            "lambda_hi" => self.lambda_hi.to_string(),
            "lambda_step_mult" => self.lambda_step_mult.to_string(),
            "lambda_min" => self.lambda_min.to_string(),
            "lambda_max" => self.lambda_max.to_string(),
            "lambda_warmup" => self.lambda_warmup.to_string(),
            "lambda_smoothing" => self.lambda_smoothing.to_string(),
            "lambda_ratio_mode" => match self.lambda_ratio_mode {
                RatioMode::LossMagnitude => "loss".into(),
                RatioMode::GradNorm => "grad-norm".into(),
            },
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "temperature" => self.temperature.to_string(),
            "top_p" => self.top_p.to_string(),
            "max_len" => self.max_len.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "seed" => self.seed.to_string(),
            "ref_refresh_interval" => self.ref_refresh_interval.to_string(),
            "shared_reference" => self.shared_reference.to_string(),
            "inner_epochs" => self.inner_epochs.to_string(),
            "std_guard" => self.std_guard.to_string(),
            "std_mode" => match self.std_mode {
                StdMode::Population => "population".into(),
                StdMode::Sample => "sample".into(),
            },
            "dpo_logprob_mode" => match self.dpo_logprob_mode {
                DpoLogprobMode::LengthNormalized => "length-normalized".into(),
                DpoLogprobMode::Unnormalized => "unnormalized".into(),
            },
            "pair_cap" => self.pair_cap.to_string(),
            "w_corr" => self.w_corr.to_string(),
            "w_fmt" => self.w_fmt.to_string(),
            "w_calib" => self.w_calib.to_string(),
            "emb_dim" => self.emb_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "layers" => self.layers.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_n" => self.eval_n.to_string(),
            "eval_temperature" => self.eval_temperature.to_string(),
            "eval_top_p" => self.eval_top_p.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "log_rollouts" => self.log_rollouts.to_string(),
            _ => return None,
        };
        Some(v)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {:?} for {}", value, key)))
        }
        match key {
            "algorithm" => self.algorithm = value.parse()?,
            "group_size" => self.group_size = num(key, value)?,
            "batch_queries" => self.batch_queries = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "beta_dpo" => self.beta_dpo = num(key, value)?,
            "delta_r" => self.delta_r = num(key, value)?,
            "lambda_init" => self.lambda_init = num(key, value)?,
            "lambda_lo" => self.lambda_lo = num(key, value)?,
            "lambda_hi" => self.lambda_hi = num(key, value)?,
            "lambda_step_mult" => self.lambda_step_mult = num(key, value)?,
            "lambda_min" => self.lambda_min = num(key, value)?,
            "lambda_max" => self.lambda_max = num(key, value)?,
            "lambda_warmup" => self.lambda_warmup = num(key, value)?,
            "lambda_smoothing" => self.lambda_smoothing = num(key, value)?,
            "lambda_ratio_mode" => {
                self.lambda_ratio_mode = match value {
                    "loss" => RatioMode::LossMagnitude,
                    "grad-norm" => RatioMode::GradNorm,
                    _ => {
                        return Err(Error::Config(format!(
                            "invalid lambda_ratio_mode {:?}",
                            value
                        )))
                    }
                }
            }
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "top_p" => self.top_p = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "total_steps" => self.total_steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "ref_refresh_interval" => self.ref_refresh_interval = num(key, value)?,
            "shared_reference" => self.shared_reference = num(key, value)?,
            "inner_epochs" => self.inner_epochs = num(key, value)?,
            "std_guard" => self.std_guard = num(key, value)?,
            "std_mode" => {
                self.std_mode = match value {
                    "population" => StdMode::Population,
                    "sample" => StdMode::Sample,
                    _ => return Err(Error::Config(format!("invalid std_mode {:?}", value))),
                }
            }
            "dpo_logprob_mode" => {
                self.dpo_logprob_mode = match value {
                    "length-normalized" => DpoLogprobMode::LengthNormalized,
                    "unnormalized" => DpoLogprobMode::Unnormalized,
                    _ => {
                        return Err(Error::Config(format!(
                            "invalid dpo_logprob_mode {:?}",
                            value
                        )))
                    }
                }
            }
            "pair_cap" => self.pair_cap = num(key, value)?,
            "w_corr" => self.w_corr = num(key, value)?,
            "w_fmt" => self.w_fmt = num(key, value)?,
            "w_calib" => self.w_calib = num(key, value)?,
            "emb_dim" => self.emb_dim = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_n" => self.eval_n = num(key, value)?,
            "eval_temperature" => self.eval_temperature = num(key, value)?,
            "eval_top_p" => self.eval_top_p = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "log_rollouts" => self.log_rollouts = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {:?}", other))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        TrainConfig::from_text(&std::fs::read_to_string(path)?)
    }

    /// The full configuration as canonical `key = value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in FIELDS {
            out.push_str(&format!("{} = {}\n", key, self.get(key).unwrap()));
        }
        out
    }

    /// Every field with its default value and a one-line description.
    pub fn help_text() -> String {
        let defaults = TrainConfig::default();
        let mut out = String::from("Configuration fields (key = default):\n");
        for (key, desc) in FIELDS {
            out.push_str(&format!(
                "  {} = {}\n      {}\n",
                key,
                defaults.get(key).unwrap(),
                desc
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        check(self.group_size >= 2, "group_size must be at least 2")?;
        check(self.batch_queries >= 1, "batch_queries must be positive")?;
        check(
            self.epsilon > 0.0 && self.epsilon < 1.0,
            "epsilon must be in (0, 1)",
        )?;
        check(self.gamma >= 0.0, "gamma must be non-negative")?;
        check(self.beta_dpo > 0.0, "beta_dpo must be positive")?;
        check(self.delta_r > 0.0, "delta_r must be positive")?;
        check(self.lr > 0.0, "lr must be positive")?;
        check(self.weight_decay >= 0.0, "weight_decay must be non-negative")?;
        check(self.temperature > 0.0, "temperature must be positive")?;
        check(
            self.top_p > 0.0 && self.top_p <= 1.0,
            "top_p must be in (0, 1]",
        )?;
        check(self.max_len >= 1, "max_len must be at least 1")?;
        check(self.total_steps >= 1, "total_steps must be at least 1")?;
        check(self.inner_epochs >= 1, "inner_epochs must be at least 1")?;
        check(self.std_guard > 0.0, "std_guard must be positive")?;
        check(
            self.lambda_min >= 0.0 && self.lambda_min <= self.lambda_max,
            "lambda_min must be within [0, lambda_max]",
        )?;
        check(
            self.lambda_init >= self.lambda_min && self.lambda_init <= self.lambda_max,
            "lambda_init must lie within [lambda_min, lambda_max]",
        )?;
        check(
            self.lambda_lo <= self.lambda_hi && self.lambda_lo >= 0.0,
            "lambda band must satisfy 0 <= lo <= hi",
        )?;
        check(self.lambda_step_mult > 1.0, "lambda_step_mult must exceed 1")?;
        check(
            (0.0..1.0).contains(&self.lambda_smoothing),
            "lambda_smoothing must be in [0, 1)",
        )?;
        check(
            self.w_corr >= 0.0 && self.w_fmt >= 0.0 && self.w_calib >= 0.0,
            "reward weights must be non-negative",
        )?;
        check(
            self.layers >= 1 && self.layers <= 2,
            "layers must be 1 or 2",
        )?;
        check(self.eval_n >= 1, "eval_n must be at least 1")?;
        check(self.eval_temperature > 0.0, "eval_temperature must be positive")?;
        check(
            self.eval_top_p > 0.0 && self.eval_top_p <= 1.0,
            "eval_top_p must be in (0, 1]",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_covers_every_field() {
        let mut cfg = TrainConfig::default();
        cfg.algorithm = Algorithm::AmirGspo;
        cfg.seed = 1234;
        cfg.lambda_ratio_mode = RatioMode::GradNorm;
        cfg.std_mode = StdMode::Sample;
        cfg.dpo_logprob_mode = DpoLogprobMode::Unnormalized;
        cfg.shared_reference = false;
        let text = cfg.to_text();
        let back = TrainConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
        // every declared field is present in the canonical text
        for (key, _) in FIELDS {
            assert!(text.contains(&format!("{} = ", key)), "missing {}", key);
        }
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("not_a_field", "1").is_err());
        assert!(TrainConfig::from_text("group_size = 4\nbogus = 2").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = TrainConfig::from_text("# a comment\n\ngroup_size = 4 # trailing\n").unwrap();
        assert_eq!(cfg.group_size, 4);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.group_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.epsilon = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lambda_init = 100.0;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn help_text_lists_every_field_with_default() {
        let help = TrainConfig::help_text();
        let defaults = TrainConfig::default();
        for (key, _) in FIELDS {
            let line = format!("{} = {}", key, defaults.get(key).unwrap());
            assert!(help.contains(&line), "help missing {:?}", line);
        }
    }
}
