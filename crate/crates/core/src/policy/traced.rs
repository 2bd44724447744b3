//! Differentiable policy forward recorded on a tape.
//!
//! Composes the same kernels, in the same order, as the no-tape forward in
//! [`super::model`], so traced values match sampled-time values exactly.

use crate::diffmath::{Tape, Var};

use super::model::PolicyParams;

/// Tape leaves for one parameter set, in the same stable order as
/// [`PolicyParams::tensors`].
pub struct TracedPolicy {
    pub embed: Var,
    pub layers: Vec<TracedLayer>,
    pub out_w: Var,
    pub out_b: Var,
    vocab_size: usize,
}

pub struct TracedLayer {
    pub w_self: Var,
    pub w_prev: Var,
    pub w_ctx: Var,
    pub b_in: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl TracedPolicy {
    pub fn new(tape: &mut Tape, params: &PolicyParams) -> TracedPolicy {
        TracedPolicy {
            embed: tape.leaf(&params.embed),
            layers: params
                .layers
                .iter()
                .map(|l| TracedLayer {
                    w_self: tape.leaf(&l.w_self),
                    w_prev: tape.leaf(&l.w_prev),
                    w_ctx: tape.leaf(&l.w_ctx),
                    b_in: tape.leaf(&l.b_in),
                    w_out: tape.leaf(&l.w_out),
                    b_out: tape.leaf(&l.b_out),
                })
                .collect(),
            out_w: tape.leaf(&params.out_w),
            out_b: tape.leaf(&params.out_b),
            vocab_size: params.config.vocab_size,
        }
    }

    fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embed];
        for l in &self.layers {
            out.extend([l.w_self, l.w_prev, l.w_ctx, l.b_in, l.w_out, l.b_out]);
        }
        out.push(self.out_w);
        out.push(self.out_b);
        out
    }

    /// Log-softmax rows `[len, vocab]` over a traced forward.
    pub fn logprob_rows(&self, tape: &mut Tape, tokens_in: &[u32]) -> Var {
        assert!(!tokens_in.is_empty(), "empty input sequence");
        let ids: Vec<usize> = tokens_in
            .iter()
            .map(|&t| {
                let t = t as usize;
                assert!(t < self.vocab_size, "token id {} out of range", t);
                t
            })
            .collect();
        let mut x = tape.gather_rows(self.embed, &ids);
        for l in &self.layers {
            let c = tape.prefix_mean(x);
            let p = tape.shift_down(x);
            let m1 = tape.matmul(x, l.w_self);
            let m2 = tape.matmul(p, l.w_prev);
            let m3 = tape.matmul(c, l.w_ctx);
            let u = tape.add(m1, m2);
            let u = tape.add(u, m3);
            let u = tape.add_bias(u, l.b_in);
            let a = tape.sigmoid(u);
            let r = tape.matmul(a, l.w_out);
            let y = tape.add(x, r);
            x = tape.add_bias(y, l.b_out);
        }
        let logits = tape.matmul(x, self.out_w);
        let logits = tape.add_bias(logits, self.out_b);
        tape.log_softmax(logits)
    }

    /// Per-token log-probabilities `[|completion|]` of `completion` given
    /// `query`, differentiable with respect to the policy leaves.
    pub fn sequence_logprob(&self, tape: &mut Tape, query: &[u32], completion: &[u32]) -> Var {
        assert!(!query.is_empty(), "empty query");
        assert!(!completion.is_empty(), "empty completion");
        let q = query.len();
        let mut full = Vec::with_capacity(q + completion.len());
        full.extend_from_slice(query);
        full.extend_from_slice(completion);
        let inputs = &full[..full.len() - 1];
        let rows = self.logprob_rows(tape, inputs);
        let pairs: Vec<(usize, usize)> = completion
            .iter()
            .enumerate()
            .map(|(k, &tok)| (q - 1 + k, tok as usize))
            .collect();
        tape.gather_pairs(rows, &pairs)
    }

    /// L2 norm of the current tape gradients over all policy leaves.
    pub fn grad_norm(&self, tape: &Tape) -> f64 {
        self.vars()
            .iter()
            .map(|v| tape.grad(*v).iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulates the tape gradients of every policy leaf into the
    /// parameter tensors' gradient buffers.
    pub fn write_back_grads(&self, tape: &Tape, params: &mut PolicyParams) {
        let vars = self.vars();
        let mut tensors = params.tensors_mut();
        assert_eq!(vars.len(), tensors.len());
        for (var, tensor) in vars.iter().zip(tensors.iter_mut()) {
            let g = tape.grad(*var);
            let dst = tensor.grad_mut();
            debug_assert_eq!(g.len(), dst.len());
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::model::{sequence_logprob, PolicyConfig};
    use crate::policy::vocab::Vocabulary;

    fn toy_params(seed: u64) -> PolicyParams {
        let v = Vocabulary::toy();
        PolicyParams::init(PolicyConfig::new(v.len(), 8, 12, 2), seed)
    }

    #[test]
    fn traced_logprobs_match_raw_forward_bitwise() {
        let p = toy_params(21);
        let q = [0u32, 9, 38, 11, 42];
        let c = [2u32, 17, 3, 1];
        let (_, raw) = sequence_logprob(&p, &q, &c);
        let mut tape = Tape::new();
        let tp = TracedPolicy::new(&mut tape, &p);
        let lp = tp.sequence_logprob(&mut tape, &q, &c);
        assert_eq!(tape.value(lp), raw.as_slice());
    }

    #[test]
    fn traced_total_gradient_matches_finite_differences() {
        let p = toy_params(33);
        let q = [0u32, 12, 38, 15, 42];
        let c = [2u32, 20, 3, 1];

        // analytic gradient of the summed sequence log-prob
        let mut params = p.clone();
        let mut tape = Tape::new();
        let tp = TracedPolicy::new(&mut tape, &params);
        let lp = tp.sequence_logprob(&mut tape, &q, &c);
        let root = tape.sum(lp);
        tape.backward(root);
        tp.write_back_grads(&tape, &mut params);

        // check a spread of coordinates in every tensor via central
        // differences of the raw forward
        let names = params.tensor_names();
        for (ti, name) in names.iter().enumerate() {
            let n = params.tensors()[ti].numel();
            for &ci in &[0usize, n / 2, n - 1] {
                let analytic = params.tensors()[ti].grad().unwrap()[ci];
                let h = 1e-6;
                let mut plus = p.clone();
                plus.tensors_mut()[ti].data_mut()[ci] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[ti].data_mut()[ci] -= h;
                let f = |pp: &PolicyParams| sequence_logprob(pp, &q, &c).0;
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
                assert!(
                    err <= 1e-6,
                    "{}[{}]: analytic {} vs numeric {}",
                    name,
                    ci,
                    analytic,
                    numeric
                );
            }
        }
    }
}
