//! Training orchestration: rollout, reward, mine, loss, update, log.

pub mod config;
pub mod seeds;

use rayon::prelude::*;

use crate::amir::{
    combined_loss, completion_score, dpo_logit, mine_pairs, pref_loss, reference_score,
    LambdaController, PreferencePair, RatioMode,
};
use crate::diffmath::{adamw_step, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::grpo::{
    grpo_group_term, gspo_group_term, kl_k3, trace_group, RolloutGroup, ScoredRollout,
};
use crate::logs::{RewardParts, RolloutRecord};
use crate::policy::{
    sample_completion, sequence_logprob, PolicyConfig, PolicyParams, TracedPolicy, Vocabulary,
};
use crate::tasks::{score_rollout, RewardBreakdown, RewardWeights, TaskInstance};

pub use config::{Algorithm, TrainConfig};
use seeds::{PURPOSE_BATCH, PURPOSE_EVAL, PURPOSE_INIT, PURPOSE_SAMPLE};

/// Scalar diagnostics for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub mean_reward: f64,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    pub grpo_loss: f64,
    pub pref_loss: f64,
    pub lambda_reg: f64,
    pub contribution_ratio: f64,
    pub contribution_ratio_raw: f64,
    pub mean_kl: f64,
    pub pairs_mined: usize,
    pub mean_len_correct: Option<f64>,
    pub mean_len_incorrect: Option<f64>,
    pub pass_at_1: Option<f64>,
}

/// Hooks for artifact emission during training.
pub trait TrainObserver {
    fn on_metric(&mut self, _m: &MetricRecord) {}
    fn on_checkpoint(
        &mut self,
        _step: u64,
        _params: &PolicyParams,
        _vocab: &Vocabulary,
    ) -> Result<()> {
        Ok(())
    }
    fn on_rollouts(&mut self, _step: u64, _records: &[RolloutRecord]) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

pub struct TaskSet {
    pub train: Vec<TaskInstance>,
    pub eval: Vec<TaskInstance>,
}

pub struct TrainOutput {
    pub params: PolicyParams,
    pub metrics: Vec<MetricRecord>,
}

/// The policy architecture a config describes.
pub fn policy_config(cfg: &TrainConfig, vocab: &Vocabulary) -> PolicyConfig {
    PolicyConfig::new(vocab.len(), cfg.emb_dim, cfg.hidden_dim, cfg.layers)
}

/// The deterministic initial parameters for a config and vocabulary.
pub fn initial_params(cfg: &TrainConfig, vocab: &Vocabulary) -> PolicyParams {
    PolicyParams::init(
        policy_config(cfg, vocab),
        seeds::derive(cfg.seed, &[PURPOSE_INIT]),
    )
}

fn reward_weights(cfg: &TrainConfig) -> RewardWeights {
    RewardWeights {
        corr: cfg.w_corr,
        fmt: cfg.w_fmt,
        calib: cfg.w_calib,
    }
}

/// Runs the full rollout -> reward -> mine -> loss -> update loop.
pub fn train(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    tasks: &TaskSet,
    obs: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if tasks.train.is_empty() {
        return Err(Error::Config("empty training task set".into()));
    }
    if cfg.eval_every > 0 && tasks.eval.is_empty() {
        return Err(Error::Config(
            "eval_every > 0 requires a non-empty eval task set".into(),
        ));
    }
    let weights = reward_weights(cfg);
    let mut params = initial_params(cfg, vocab);
    let mut opt = OptimizerState::new(
        cfg.lr,
        cfg.weight_decay,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut kl_ref = params.snapshot();
    // The preference side keeps the initial snapshot when references are
    // split; with a shared reference both roles point at the same values.
    let dpo_ref = params.snapshot();
    let mut ref_hash = kl_ref.content_hash();

    let mut lambda = LambdaController::new(
        cfg.lambda_init,
        cfg.lambda_lo,
        cfg.lambda_hi,
        cfg.lambda_step_mult,
        cfg.lambda_min,
        cfg.lambda_max,
        cfg.lambda_warmup,
        cfg.lambda_smoothing,
    );
    let mut metrics = Vec::with_capacity(cfg.total_steps as usize);

    for step in 0..cfg.total_steps {
        assert_eq!(
            kl_ref.content_hash(),
            ref_hash,
            "reference snapshot changed outside a refresh"
        );
        if cfg.ref_refresh_interval > 0 && step > 0 && step % cfg.ref_refresh_interval == 0 {
            kl_ref = params.snapshot();
            ref_hash = kl_ref.content_hash();
        }

        let theta_old = params.snapshot();

        // batch selection
        let mut batch_rng = seeds::rng_for(cfg.seed, &[PURPOSE_BATCH, step]);
        let query_ids: Vec<usize> = (0..cfg.batch_queries)
            .map(|_| rand::Rng::gen_range(&mut batch_rng, 0..tasks.train.len()))
            .collect();

        // rollout fan-out over (slot, sample) with independent streams
        let jobs: Vec<(usize, usize)> = (0..cfg.batch_queries)
            .flat_map(|slot| (0..cfg.group_size).map(move |g| (slot, g)))
            .collect();
        let scored: Vec<(ScoredRollout, f64)> = jobs
            .par_iter()
            .map(|&(slot, g)| {
                let task = &tasks.train[query_ids[slot]];
                let mut rng = seeds::rng_for(
                    cfg.seed,
                    &[PURPOSE_SAMPLE, step, slot as u64, g as u64],
                );
                let rollout = sample_completion(
                    &theta_old,
                    vocab,
                    &task.query,
                    cfg.temperature,
                    cfg.top_p,
                    cfg.max_len,
                    &mut rng,
                );
                let (_, lp_old) = sequence_logprob(&theta_old, &task.query, &rollout.completion);
                let (_, lp_ref) = sequence_logprob(&kl_ref, &task.query, &rollout.completion);
                let ell_dpo_ref = if cfg.shared_reference {
                    reference_score(&lp_ref, cfg.dpo_logprob_mode)
                } else {
                    let (_, lp_dpo) = sequence_logprob(&dpo_ref, &task.query, &rollout.completion);
                    reference_score(&lp_dpo, cfg.dpo_logprob_mode)
                };
                let reward = score_rollout(&rollout, &task.answer, vocab, &weights);
                (
                    ScoredRollout {
                        rollout,
                        reward,
                        lp_old,
                        lp_ref,
                    },
                    ell_dpo_ref,
                )
            })
            .collect();

        let mut groups: Vec<RolloutGroup> = Vec::with_capacity(cfg.batch_queries);
        let mut dpo_ref_scores: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_queries);
        for slot in 0..cfg.batch_queries {
            let mut rollouts = Vec::with_capacity(cfg.group_size);
            let mut ells = Vec::with_capacity(cfg.group_size);
            for g in 0..cfg.group_size {
                let (sr, ell) = scored[slot * cfg.group_size + g].clone();
                rollouts.push(sr);
                ells.push(ell);
            }
            groups.push(RolloutGroup::new(
                query_ids[slot],
                rollouts,
                cfg.std_guard,
                cfg.std_mode,
            )?);
            dpo_ref_scores.push(ells);
        }

        let pairs_per_group: Vec<Vec<PreferencePair>> = if cfg.algorithm.uses_pairs() {
            let cap = if cfg.pair_cap == 0 {
                None
            } else {
                Some(cfg.pair_cap)
            };
            groups
                .iter()
                .map(|g| mine_pairs(&g.rewards(), cfg.delta_r, cap))
                .collect()
        } else {
            vec![Vec::new(); groups.len()]
        };
        let pairs_mined: usize = pairs_per_group.iter().map(|p| p.len()).sum();

        let mut policy_loss_val = 0.0;
        let mut pref_loss_val = 0.0;
        let mut mean_kl = 0.0;
        let mut grad_mags: Option<(f64, f64)> = None;

        for epoch in 0..cfg.inner_epochs {
            let mut tape = Tape::new();
            let tp = TracedPolicy::new(&mut tape, &params);
            let traced: Vec<Vec<Var>> = groups
                .iter()
                .map(|g| trace_group(&mut tape, g, &tp))
                .collect();

            let group_terms: Vec<Var> = groups
                .iter()
                .zip(&traced)
                .map(|(g, t)| {
                    if cfg.algorithm.sequence_level() {
                        gspo_group_term(&mut tape, g, t, cfg.epsilon, cfg.gamma)
                    } else {
                        grpo_group_term(&mut tape, g, t, cfg.epsilon, cfg.gamma)
                    }
                })
                .collect();
            let summed = tape.add_all(&group_terms);
            let policy_term = tape.scalar_mul(summed, 1.0 / groups.len() as f64);

            let pref_term = if cfg.algorithm.uses_pairs() {
                let mut logits = Vec::with_capacity(pairs_mined);
                for (slot, pairs) in pairs_per_group.iter().enumerate() {
                    let mut scores: Vec<Option<Var>> = vec![None; cfg.group_size];
                    for p in pairs {
                        for idx in [p.preferred, p.rejected] {
                            if scores[idx].is_none() {
                                scores[idx] = Some(completion_score(
                                    &mut tape,
                                    traced[slot][idx],
                                    cfg.dpo_logprob_mode,
                                ));
                            }
                        }
                        let z = dpo_logit(
                            &mut tape,
                            scores[p.preferred].unwrap(),
                            scores[p.rejected].unwrap(),
                            dpo_ref_scores[slot][p.preferred],
                            dpo_ref_scores[slot][p.rejected],
                            cfg.beta_dpo,
                        );
                        logits.push(z);
                    }
                }
                Some(pref_loss(&mut tape, &logits))
            } else {
                None
            };

            let total = match pref_term {
                Some(p) => combined_loss(&mut tape, policy_term, p, lambda.lambda),
                None => policy_term,
            };

            let loss_val = tape.scalar_value(total);
            if !loss_val.is_finite() {
                return Err(non_finite_error(step, loss_val, &groups, vocab));
            }

            if epoch == 0 {
                policy_loss_val = tape.scalar_value(policy_term);
                pref_loss_val = pref_term.map(|p| tape.scalar_value(p)).unwrap_or(0.0);
                mean_kl = batch_mean_kl(&tape, &groups, &traced);
                if cfg.algorithm.uses_pairs()
                    && cfg.lambda_ratio_mode == RatioMode::GradNorm
                {
                    tape.backward(policy_term);
                    let g_policy = tp.grad_norm(&tape);
                    tape.zero_grads();
                    tape.backward(pref_term.unwrap());
                    let g_pref = tp.grad_norm(&tape);
                    tape.zero_grads();
                    grad_mags = Some((g_policy, g_pref));
                }
            }

            tape.backward(total);
            tp.write_back_grads(&tape, &mut params);
            adamw_step(&mut params.tensors_mut(), &mut opt);
        }

        let (lambda_reg, contribution_ratio, contribution_ratio_raw) =
            if cfg.algorithm.uses_pairs() {
                let (gm, pm) = grad_mags.unwrap_or((policy_loss_val.abs(), pref_loss_val.abs()));
                let u = lambda.update(gm, pm);
                (u.lambda, u.ratio_smoothed, u.ratio_raw)
            } else {
                (0.0, 0.0, 0.0)
            };

        // diagnostics
        let all: Vec<&ScoredRollout> = groups.iter().flat_map(|g| g.rollouts.iter()).collect();
        let n_all = all.len() as f64;
        let mean_reward = all.iter().map(|r| r.reward.total).sum::<f64>() / n_all;
        let advs: Vec<f64> = groups.iter().flat_map(|g| g.advantages.clone()).collect();
        let advantage_mean = advs.iter().sum::<f64>() / advs.len() as f64;
        let advantage_std = (advs.iter().map(|a| (a - advantage_mean).powi(2)).sum::<f64>()
            / advs.len() as f64)
            .sqrt();
        let mean_len = |want_correct: bool| -> Option<f64> {
            let lens: Vec<f64> = all
                .iter()
                .filter(|r| (r.reward.r_corr == 1.0) == want_correct)
                .map(|r| r.rollout.completion.len() as f64)
                .collect();
            if lens.is_empty() {
                None
            } else {
                Some(lens.iter().sum::<f64>() / lens.len() as f64)
            }
        };

        let pass_at_1 = if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let counts = evaluate(
                &params,
                vocab,
                &tasks.eval,
                cfg.eval_n,
                cfg.eval_temperature,
                cfg.eval_top_p,
                cfg.max_len,
                cfg.seed,
                step + 1,
            );
            Some(crate::evalkit::pass_at_k(&counts_pairs(&counts, cfg.eval_n), 1).expect("k=1"))
        } else {
            None
        };

        let record = MetricRecord {
            step: step + 1,
            mean_reward,
            advantage_mean,
            advantage_std,
            grpo_loss: policy_loss_val,
            pref_loss: pref_loss_val,
            lambda_reg,
            contribution_ratio,
            contribution_ratio_raw,
            mean_kl,
            pairs_mined,
            mean_len_correct: mean_len(true),
            mean_len_incorrect: mean_len(false),
            pass_at_1,
        };
        obs.on_metric(&record);
        metrics.push(record);

        if cfg.log_rollouts {
            let records = rollout_records(&groups);
            obs.on_rollouts(step + 1, &records)?;
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            obs.on_checkpoint(step + 1, &params, vocab)?;
        }
    }

    Ok(TrainOutput { params, metrics })
}

fn counts_pairs(counts: &[u32], n: u32) -> Vec<(u32, u32)> {
    counts.iter().map(|&c| (n, c)).collect()
}

fn batch_mean_kl(tape: &Tape, groups: &[RolloutGroup], traced: &[Vec<Var>]) -> f64 {
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for (g, tvars) in groups.iter().zip(traced) {
        for (sr, &var) in g.rollouts.iter().zip(tvars) {
            let lp_theta = tape.value(var);
            for (r, t) in sr.lp_ref.iter().zip(lp_theta) {
                sum += kl_k3(*r, *t);
            }
            tokens += lp_theta.len();
        }
    }
    sum / tokens as f64
}

fn rollout_records(groups: &[RolloutGroup]) -> Vec<RolloutRecord> {
    let mut out = Vec::new();
    for g in groups {
        for (i, sr) in g.rollouts.iter().enumerate() {
            out.push(RolloutRecord {
                query_id: g.query_id,
                sample_id: i,
                tokens: sr.rollout.completion.clone(),
                logp_old: sr.rollout.logp_old.clone(),
                reward: RewardParts {
                    corr: sr.reward.r_corr,
                    fmt: sr.reward.r_fmt,
                    calib: sr.reward.r_calib,
                    total: sr.reward.total,
                },
                answer: sr.rollout.answer.clone(),
                confidence: sr.rollout.confidence,
                correct: sr.reward.r_corr == 1.0,
            });
        }
    }
    out
}

fn non_finite_error(
    step: u64,
    loss: f64,
    groups: &[RolloutGroup],
    vocab: &Vocabulary,
) -> Error {
    #[derive(serde::Serialize)]
    struct GroupDump {
        query_id: usize,
        query: String,
        rewards: Vec<f64>,
        advantages: Vec<f64>,
        completions: Vec<String>,
        logp_old: Vec<Vec<f64>>,
    }
    let dumps: Vec<GroupDump> = groups
        .iter()
        .map(|g| GroupDump {
            query_id: g.query_id,
            query: g
                .rollouts
                .first()
                .map(|r| vocab.decode_str(&r.rollout.query))
                .unwrap_or_default(),
            rewards: g.rewards(),
            advantages: g.advantages.clone(),
            completions: g
                .rollouts
                .iter()
                .map(|r| vocab.decode_str(&r.rollout.completion))
                .collect(),
            logp_old: g.rollouts.iter().map(|r| r.lp_old.clone()).collect(),
        })
        .collect();
    Error::NonFinite {
        step,
        message: format!("loss = {}", loss),
        dump: serde_json::to_string_pretty(&dumps).unwrap_or_default(),
    }
}

/// Samples `n` completions per task under fixed streams and returns the
/// number of correct ones per task.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &PolicyParams,
    vocab: &Vocabulary,
    tasks: &[TaskInstance],
    n: u32,
    temperature: f64,
    top_p: f64,
    max_len: usize,
    seed: u64,
    stream_tag: u64,
) -> Vec<u32> {
    evaluate_detailed(
        params,
        vocab,
        tasks,
        n,
        temperature,
        top_p,
        max_len,
        seed,
        stream_tag,
    )
    .iter()
    .map(|rs| rs.iter().filter(|(_, rw)| rw.r_corr == 1.0).count() as u32)
    .collect()
}

/// As [`evaluate`], returning every rollout with its reward breakdown.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_detailed(
    params: &PolicyParams,
    vocab: &Vocabulary,
    tasks: &[TaskInstance],
    n: u32,
    temperature: f64,
    top_p: f64,
    max_len: usize,
    seed: u64,
    stream_tag: u64,
) -> Vec<Vec<(crate::policy::Rollout, RewardBreakdown)>> {
    let weights = RewardWeights::default();
    let jobs: Vec<(usize, u32)> = (0..tasks.len())
        .flat_map(|ti| (0..n).map(move |si| (ti, si)))
        .collect();
    let flat: Vec<(crate::policy::Rollout, RewardBreakdown)> = jobs
        .par_iter()
        .map(|&(ti, si)| {
            let task = &tasks[ti];
            let mut rng = seeds::rng_for(
                seed,
                &[PURPOSE_EVAL, stream_tag, ti as u64, si as u64],
            );
            let rollout =
                sample_completion(params, vocab, &task.query, temperature, top_p, max_len, &mut rng);
            let reward = score_rollout(&rollout, &task.answer, vocab, &weights);
            (rollout, reward)
        })
        .collect();
    flat.chunks(n as usize).map(|c| c.to_vec()).collect()
}
