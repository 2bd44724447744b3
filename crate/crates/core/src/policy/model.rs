//! Tiny causal autoregressive model.
//!
//! Architecture: token embedding, one or two causal mixing layers, and an
//! output projection to vocabulary logits. A mixing layer combines the
//! current position, the previous position, and the running prefix mean of
//! its input stream through a sigmoid-gated projection with a residual
//! connection. All context flows through causal paths only.
//!
//! The no-tape forward here composes the same `diffmath::kernels` routines,
//! in the same order, as the traced forward in [`super::traced`]; the two
//! paths therefore produce bit-identical log-probabilities.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{kernels, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
}

impl PolicyConfig {
    pub fn new(vocab_size: usize, emb_dim: usize, hidden_dim: usize, layers: usize) -> Self {
        assert!(vocab_size > 0 && emb_dim > 0 && hidden_dim > 0);
        assert!(layers >= 1 && layers <= 2, "layers must be 1 or 2");
        PolicyConfig {
            vocab_size,
            emb_dim,
            hidden_dim,
            layers,
        }
    }

    /// Default width: embedding 64, hidden 128, two layers.
    pub fn default_for(vocab_size: usize) -> Self {
        PolicyConfig::new(vocab_size, 64, 128, 2)
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_self: Tensor,
    pub w_prev: Tensor,
    pub w_ctx: Tensor,
    pub b_in: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// One full set of policy parameters. Snapshots of this struct play the
/// current, behavior, and reference roles during training.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub embed: Tensor,
    pub layers: Vec<LayerParams>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl PolicyParams {
    pub fn init(config: PolicyConfig, seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, w) = (config.vocab_size, config.emb_dim, config.hidden_dim);
        let embed = Tensor::randn(vec![v, d], 0.4, &mut rng);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let in_std = 1.0 / (d as f64).sqrt();
            let out_std = 0.5 / (w as f64).sqrt();
            layers.push(LayerParams {
                w_self: Tensor::randn(vec![d, w], in_std, &mut rng),
                w_prev: Tensor::randn(vec![d, w], in_std, &mut rng),
                w_ctx: Tensor::randn(vec![d, w], in_std, &mut rng),
                b_in: Tensor::zeros(vec![w]),
                w_out: Tensor::randn(vec![w, d], out_std, &mut rng),
                b_out: Tensor::zeros(vec![d]),
            });
        }
        let out_w = Tensor::randn(vec![d, v], 0.5 / (d as f64).sqrt(), &mut rng);
        let out_b = Tensor::zeros(vec![v]);
        PolicyParams {
            config,
            embed,
            layers,
            out_w,
            out_b,
        }
    }

    /// Stable parameter ordering used by the optimizer and checkpoints.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed];
        for l in &self.layers {
            out.extend([&l.w_self, &l.w_prev, &l.w_ctx, &l.b_in, &l.w_out, &l.b_out]);
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        for l in &mut self.layers {
            out.extend([
                &mut l.w_self,
                &mut l.w_prev,
                &mut l.w_ctx,
                &mut l.b_in,
                &mut l.w_out,
                &mut l.b_out,
            ]);
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["embed".to_string()];
        for (i, _) in self.layers.iter().enumerate() {
            for name in ["w_self", "w_prev", "w_ctx", "b_in", "w_out", "b_out"] {
                out.push(format!("layer{}.{}", i, name));
            }
        }
        out.push("out_w".into());
        out.push("out_b".into());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Deep, detached copy; optimizer steps on the original never touch it.
    pub fn snapshot(&self) -> PolicyParams {
        PolicyParams {
            config: self.config.clone(),
            embed: self.embed.detached(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_self: l.w_self.detached(),
                    w_prev: l.w_prev.detached(),
                    w_ctx: l.w_ctx.detached(),
                    b_in: l.b_in.detached(),
                    w_out: l.w_out.detached(),
                    b_out: l.b_out.detached(),
                })
                .collect(),
            out_w: self.out_w.detached(),
            out_b: self.out_b.detached(),
        }
    }

    /// FNV-1a over the bit patterns of every parameter, in stable order.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Hidden states `[len, d]` for the given input tokens.
    fn hidden_states(&self, tokens_in: &[u32]) -> Vec<f64> {
        let d = self.config.emb_dim;
        let w = self.config.hidden_dim;
        let len = tokens_in.len();
        let mut x = Vec::with_capacity(len * d);
        for &t in tokens_in {
            let t = t as usize;
            assert!(t < self.config.vocab_size, "token id {} out of range", t);
            x.extend_from_slice(&self.embed.data()[t * d..(t + 1) * d]);
        }
        for layer in &self.layers {
            let c = kernels::prefix_mean(&x, len, d);
            let p = kernels::shift_down(&x, len, d);
            let m1 = kernels::matmul(&x, len, d, layer.w_self.data(), w);
            let m2 = kernels::matmul(&p, len, d, layer.w_prev.data(), w);
            let m3 = kernels::matmul(&c, len, d, layer.w_ctx.data(), w);
            let u = kernels::add(&kernels::add(&m1, &m2), &m3);
            let u = kernels::add_bias(&u, w, layer.b_in.data());
            let a = kernels::sigmoid(&u);
            let r = kernels::matmul(&a, len, w, layer.w_out.data(), d);
            let y = kernels::add(&x, &r);
            x = kernels::add_bias(&y, d, layer.b_out.data());
        }
        x
    }

    /// Log-softmax rows `[len, vocab]`; row `i` is the next-token
    /// distribution after consuming `tokens_in[..=i]`.
    pub fn logprob_rows(&self, tokens_in: &[u32]) -> Vec<f64> {
        assert!(!tokens_in.is_empty(), "empty input sequence");
        let (d, v) = (self.config.emb_dim, self.config.vocab_size);
        let len = tokens_in.len();
        let x = self.hidden_states(tokens_in);
        let logits = kernels::matmul(&x, len, d, self.out_w.data(), v);
        let logits = kernels::add_bias(&logits, v, self.out_b.data());
        kernels::log_softmax_rows(&logits, v)
    }
}

/// Sum and per-token log-probabilities of `completion` given `query`.
pub fn sequence_logprob(
    params: &PolicyParams,
    query: &[u32],
    completion: &[u32],
) -> (f64, Vec<f64>) {
    assert!(!query.is_empty(), "empty query");
    assert!(!completion.is_empty(), "empty completion");
    let q = query.len();
    let mut full = Vec::with_capacity(q + completion.len());
    full.extend_from_slice(query);
    full.extend_from_slice(completion);
    let inputs = &full[..full.len() - 1];
    let rows = params.logprob_rows(inputs);
    let v = params.config.vocab_size;
    let mut per_token = Vec::with_capacity(completion.len());
    for (k, &tok) in completion.iter().enumerate() {
        let row = q - 1 + k;
        per_token.push(rows[row * v + tok as usize]);
    }
    let total = per_token.iter().sum();
    (total, per_token)
}

/// Per-token average log-probability of `completion` given `query`.
pub fn length_normalized_logprob(params: &PolicyParams, query: &[u32], completion: &[u32]) -> f64 {
    assert!(!completion.is_empty(), "empty completion");
    let (total, per_token) = sequence_logprob(params, query, completion);
    total / per_token.len() as f64
}

/// Incremental decoding state: per-layer running sums and previous inputs.
pub struct IncrementalState {
    layers: Vec<LayerState>,
    pos: usize,
}

struct LayerState {
    run_sum: Vec<f64>,
    prev: Vec<f64>,
}

impl PolicyParams {
    pub fn begin_decode(&self) -> IncrementalState {
        let d = self.config.emb_dim;
        IncrementalState {
            layers: self
                .layers
                .iter()
                .map(|_| LayerState {
                    run_sum: vec![0.0; d],
                    prev: vec![0.0; d],
                })
                .collect(),
            pos: 0,
        }
    }

    /// Consumes one token and returns the logits row predicting the next.
    ///
    /// Mirrors `hidden_states` kernel-for-kernel so that a full-sequence
    /// forward reproduces these rows bit-for-bit.
    pub fn advance(&self, st: &mut IncrementalState, token: u32) -> Vec<f64> {
        let d = self.config.emb_dim;
        let w = self.config.hidden_dim;
        let v = self.config.vocab_size;
        let t = token as usize;
        assert!(t < v, "token id {} out of range", t);
        let mut x = self.embed.data()[t * d..(t + 1) * d].to_vec();
        let denom = (st.pos + 1) as f64;
        for (layer, ls) in self.layers.iter().zip(st.layers.iter_mut()) {
            for j in 0..d {
                ls.run_sum[j] += x[j];
            }
            let c: Vec<f64> = ls.run_sum.iter().map(|s| s / denom).collect();
            let m1 = kernels::matmul(&x, 1, d, layer.w_self.data(), w);
            let m2 = kernels::matmul(&ls.prev, 1, d, layer.w_prev.data(), w);
            let m3 = kernels::matmul(&c, 1, d, layer.w_ctx.data(), w);
            let u = kernels::add(&kernels::add(&m1, &m2), &m3);
            let u = kernels::add_bias(&u, w, layer.b_in.data());
            let a = kernels::sigmoid(&u);
            let r = kernels::matmul(&a, 1, w, layer.w_out.data(), d);
            let y = kernels::add(&x, &r);
            let y = kernels::add_bias(&y, d, layer.b_out.data());
            ls.prev = x;
            x = y;
        }
        st.pos += 1;
        let logits = kernels::matmul(&x, 1, d, self.out_w.data(), v);
        kernels::add_bias(&logits, v, self.out_b.data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::vocab::Vocabulary;

    fn toy_params(seed: u64) -> PolicyParams {
        let v = Vocabulary::toy();
        PolicyParams::init(PolicyConfig::new(v.len(), 8, 12, 2), seed)
    }

    #[test]
    fn uniform_policy_scores_minus_t_log_v() {
        let v = Vocabulary::toy();
        let mut p = toy_params(0);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let q = [v.bos, v.number(3)];
        let c = [v.number(7), v.eos];
        let (total, per) = sequence_logprob(&p, &q, &c);
        let expect = -(v.len() as f64).ln();
        for lp in &per {
            assert!((lp - expect).abs() < 1e-12);
        }
        assert!((total - 2.0 * expect).abs() < 1e-12);
        assert!((length_normalized_logprob(&p, &q, &c) - expect).abs() < 1e-12);
    }

    #[test]
    fn total_equals_sum_of_per_token() {
        let p = toy_params(3);
        let q = [0u32, 8, 9];
        let c = [2u32, 10, 3, 1];
        let (total, per) = sequence_logprob(&p, &q, &c);
        assert!((total - per.iter().sum::<f64>()).abs() < 1e-12);
        let ell = length_normalized_logprob(&p, &q, &c);
        assert!((ell - total / 4.0).abs() < 1e-12);
    }

    #[test]
    fn doubled_completion_under_uniform_policy_keeps_normalized_score() {
        let v = Vocabulary::toy();
        let mut p = toy_params(0);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let q = [v.bos];
        let single = [v.number(5), v.eos];
        let double = [v.number(5), v.eos, v.number(5), v.eos];
        let a = length_normalized_logprob(&p, &q, &single);
        let b = length_normalized_logprob(&p, &q, &double);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn next_token_distributions_sum_to_one() {
        let p = toy_params(5);
        let rows = p.logprob_rows(&[0, 9, 12, 40, 3]);
        let v = p.config.vocab_size;
        for r in 0..5 {
            let s: f64 = rows[r * v..(r + 1) * v].iter().map(|lp| lp.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12, "row {} sums to {}", r, s);
        }
    }

    #[test]
    fn incremental_rows_match_full_forward_bitwise() {
        let p = toy_params(9);
        let tokens = [0u32, 14, 38, 9, 2, 11];
        let v = p.config.vocab_size;
        let full_rows = {
            let hidden_rows = p.logprob_rows(&tokens);
            hidden_rows
        };
        let mut st = p.begin_decode();
        for (i, &tok) in tokens.iter().enumerate() {
            let logits = p.advance(&mut st, tok);
            let mut lp = vec![0.0; v];
            kernels::log_softmax_row_into(&logits, &mut lp);
            assert_eq!(
                &full_rows[i * v..(i + 1) * v],
                lp.as_slice(),
                "row {} differs between incremental and full forward",
                i
            );
        }
    }

    #[test]
    fn snapshot_is_detached_and_idempotent() {
        let mut p = toy_params(1);
        let snap = p.snapshot();
        let h0 = snap.content_hash();
        // mutate the live params
        p.embed.data_mut()[0] += 1.0;
        assert_eq!(snap.content_hash(), h0);
        assert_eq!(snap.snapshot().content_hash(), h0);
        assert_ne!(p.content_hash(), h0);
    }
}
