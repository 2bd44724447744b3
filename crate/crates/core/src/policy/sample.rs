//! Autoregressive sampling and completion parsing.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use super::model::PolicyParams;
use super::vocab::Vocabulary;
use crate::diffmath::kernels;

/// One sampled completion with the log-probabilities recorded at sampling
/// time. The recorded values are those of the truncated-renormalized
/// distribution actually sampled from; at temperature 1 and top-p 1 they
/// coincide bit-for-bit with [`sequence_logprob`] under the same snapshot.
///
/// [`sequence_logprob`]: super::model::sequence_logprob
#[derive(Debug, Clone)]
pub struct Rollout {
    pub query: Vec<u32>,
    pub completion: Vec<u32>,
    /// Per-token log-probs under the behavior policy at sampling time.
    pub logp_old: Vec<f64>,
    /// True when generation stopped at EOS rather than the length cap.
    pub terminated: bool,
    pub answer: Option<String>,
    pub confidence: Option<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.completion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completion.is_empty()
    }
}

/// Samples one completion from the temperature-scaled, nucleus-truncated
/// next-token distribution. Generation stops at EOS or after `max_len`
/// tokens; the EOS token, when emitted, is part of the completion.
pub fn sample_completion(
    params: &PolicyParams,
    vocab: &Vocabulary,
    query: &[u32],
    temperature: f64,
    top_p: f64,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Rollout {
    assert!(!query.is_empty(), "empty query");
    assert!(temperature > 0.0, "temperature must be positive");
    assert!(top_p > 0.0 && top_p <= 1.0, "top_p must be in (0, 1]");
    assert!(max_len >= 1, "max_len must be at least 1");
    let v = params.config.vocab_size;
    for &t in query {
        assert!((t as usize) < v, "query token {} out of range", t);
    }

    let mut st = params.begin_decode();
    let mut row = Vec::new();
    for &t in query {
        row = params.advance(&mut st, t);
    }

    let mut completion = Vec::new();
    let mut logp_old = Vec::new();
    let mut terminated = false;
    while completion.len() < max_len {
        let (token, logp) = sample_from_row(&row, temperature, top_p, rng);
        completion.push(token);
        logp_old.push(logp);
        if token == vocab.eos {
            terminated = true;
            break;
        }
        row = params.advance(&mut st, token);
    }

    let answer = parse_answer(&completion, vocab);
    let confidence = parse_confidence(&completion, vocab);
    Rollout {
        query: query.to_vec(),
        completion,
        logp_old,
        terminated,
        answer,
        confidence,
    }
}

/// Draws one token from the tempered, nucleus-truncated distribution over a
/// logits row, returning the token and its log-probability under the
/// distribution actually sampled from.
fn sample_from_row(logits: &[f64], temperature: f64, top_p: f64, rng: &mut ChaCha8Rng) -> (u32, f64) {
    let v = logits.len();
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();

    if top_p >= 1.0 {
        let mut lp = vec![0.0; v];
        kernels::log_softmax_row_into(&scaled, &mut lp);
        let u = uniform01(rng);
        let mut acc = 0.0;
        for (i, &l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return (i as u32, l);
            }
        }
        return ((v - 1) as u32, lp[v - 1]);
    }

    let probs = kernels::softmax_rows(&scaled, v);
    // Nucleus: smallest prefix of the sorted distribution with mass >= top_p.
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    kept.sort_unstable();
    let u = uniform01(rng) * mass;
    let mut acc = 0.0;
    let mut chosen = *kept.last().unwrap();
    for &i in &kept {
        acc += probs[i];
        if u < acc {
            chosen = i;
            break;
        }
    }
    (chosen as u32, (probs[chosen] / mass).ln())
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Concatenated token text strictly between the first `<answer>` marker and
/// the first `</answer>` marker after it.
pub fn parse_answer(completion: &[u32], vocab: &Vocabulary) -> Option<String> {
    let open = completion.iter().position(|&t| t == vocab.answer_open)?;
    let close = completion[open + 1..]
        .iter()
        .position(|&t| t == vocab.answer_close)?
        + open
        + 1;
    let mut out = String::new();
    for &t in &completion[open + 1..close] {
        out.push_str(vocab.decode(t));
    }
    Some(out)
}

/// Confidence between the confidence markers, accepted only in the exact
/// form `0.` followed by two digit tokens; parses to two decimals.
pub fn parse_confidence(completion: &[u32], vocab: &Vocabulary) -> Option<f64> {
    let open = completion.iter().position(|&t| t == vocab.conf_open)?;
    let close = completion[open + 1..]
        .iter()
        .position(|&t| t == vocab.conf_close)?
        + open
        + 1;
    let body = &completion[open + 1..close];
    if body.len() != 3 || body[0] != vocab.conf_lead {
        return None;
    }
    let d1 = vocab.digit_value(body[1])?;
    let d2 = vocab.digit_value(body[2])?;
    Some((10 * d1 + d2) as f64 / 100.0)
}
