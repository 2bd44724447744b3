//! Synthetic, automatically verifiable task families.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "addition-chain")]
    AdditionChain,
    #[serde(rename = "modular-arithmetic")]
    ModularArithmetic,
    #[serde(rename = "digit-parity")]
    DigitParity,
    #[serde(rename = "bracket-evaluation")]
    BracketEvaluation,
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskFamily::AdditionChain => "addition-chain",
            TaskFamily::ModularArithmetic => "modular-arithmetic",
            TaskFamily::DigitParity => "digit-parity",
            TaskFamily::BracketEvaluation => "bracket-evaluation",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<TaskFamily> {
        match s {
            "addition-chain" => Ok(TaskFamily::AdditionChain),
            "modular-arithmetic" => Ok(TaskFamily::ModularArithmetic),
            "digit-parity" => Ok(TaskFamily::DigitParity),
            "bracket-evaluation" => Ok(TaskFamily::BracketEvaluation),
            other => Err(Error::Task(format!("unknown task family {:?}", other))),
        }
    }
}

/// One query with its verifiable ground-truth answer.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub query: Vec<u32>,
    pub answer: String,
    pub family: TaskFamily,
    pub difficulty: u32,
}

/// Operand count range and value cap per addition-chain difficulty level,
/// chosen so every sum stays within the single-token number range.
fn addition_bounds(difficulty: u32) -> (u32, u32, u32) {
    match difficulty {
        0 | 1 => (2, 2, 5),
        2 => (2, 3, 5),
        3 => (2, 3, 9),
        4 => (3, 4, 7),
        5 => (4, 5, 6),
        _ => (5, 6, 5),
    }
}

/// Generates `count` instances with unique queries. Deterministic in the
/// seed; fails if the family/difficulty cannot yield enough unique queries.
pub fn generate_instances(
    vocab: &Vocabulary,
    family: TaskFamily,
    count: usize,
    difficulty: u32,
    seed: u64,
) -> Result<Vec<TaskInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(1000) + 10_000;
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Task(format!(
                "could not generate {} unique {} instances at difficulty {} (got {})",
                count,
                family,
                difficulty,
                out.len()
            )));
        }
        let inst = match family {
            TaskFamily::AdditionChain => gen_addition(vocab, difficulty, &mut rng),
            TaskFamily::ModularArithmetic => gen_modular(vocab, difficulty, &mut rng),
            TaskFamily::DigitParity => gen_parity(vocab, difficulty, &mut rng),
            TaskFamily::BracketEvaluation => gen_bracket(vocab, difficulty, &mut rng),
        };
        if seen.insert(inst.query.clone()) {
            out.push(inst);
        }
    }
    Ok(out)
}

fn gen_addition(vocab: &Vocabulary, difficulty: u32, rng: &mut ChaCha8Rng) -> TaskInstance {
    let (lo, hi, vmax) = addition_bounds(difficulty);
    let count = rng.gen_range(lo..=hi);
    let plus = vocab.id("+").unwrap();
    let eq = vocab.id("=").unwrap();
    let mut query = vec![vocab.bos];
    let mut sum = 0u32;
    for i in 0..count {
        let v = rng.gen_range(1..=vmax);
        sum += v;
        if i > 0 {
            query.push(plus);
        }
        query.push(vocab.number(v));
    }
    query.push(eq);
    TaskInstance {
        query,
        answer: sum.to_string(),
        family: TaskFamily::AdditionChain,
        difficulty,
    }
}

fn gen_modular(vocab: &Vocabulary, difficulty: u32, rng: &mut ChaCha8Rng) -> TaskInstance {
    let vmax = (2 + 2 * difficulty).min(9);
    let mmax = (2 + difficulty).min(9).max(2);
    let a = rng.gen_range(1..=vmax);
    let b = rng.gen_range(1..=vmax);
    let c = rng.gen_range(1..=vmax);
    let m = rng.gen_range(2..=mmax);
    let query = vec![
        vocab.bos,
        vocab.number(a),
        vocab.id("*").unwrap(),
        vocab.number(b),
        vocab.id("+").unwrap(),
        vocab.number(c),
        vocab.id("mod").unwrap(),
        vocab.number(m),
        vocab.id("=").unwrap(),
    ];
    TaskInstance {
        query,
        answer: ((a * b + c) % m).to_string(),
        family: TaskFamily::ModularArithmetic,
        difficulty,
    }
}

fn gen_parity(vocab: &Vocabulary, difficulty: u32, rng: &mut ChaCha8Rng) -> TaskInstance {
    let digits = (difficulty + 1).clamp(1, 8);
    let mut query = vec![vocab.bos];
    let mut last = 0u32;
    for i in 0..digits {
        let d = if i == 0 && digits > 1 {
            rng.gen_range(1..=9)
        } else {
            rng.gen_range(0..=9)
        };
        last = d;
        query.push(vocab.number(d));
    }
    query.push(vocab.id("=").unwrap());
    let answer = if last % 2 == 0 { "even" } else { "odd" };
    TaskInstance {
        query,
        answer: answer.into(),
        family: TaskFamily::DigitParity,
        difficulty,
    }
}

fn gen_bracket(vocab: &Vocabulary, difficulty: u32, rng: &mut ChaCha8Rng) -> TaskInstance {
    let vmax = (2 + difficulty).min(6);
    let lp = vocab.id("(").unwrap();
    let rp = vocab.id(")").unwrap();
    let plus = vocab.id("+").unwrap();
    let times = vocab.id("*").unwrap();
    let eq = vocab.id("=").unwrap();
    loop {
        let a = rng.gen_range(1..=vmax);
        let b = rng.gen_range(1..=vmax);
        let c = rng.gen_range(1..=vmax);
        let template = rng.gen_range(0..3u32);
        let (tokens, value) = match template {
            // (a + b) * c
            0 => (
                vec![
                    vocab.bos,
                    lp,
                    vocab.number(a),
                    plus,
                    vocab.number(b),
                    rp,
                    times,
                    vocab.number(c),
                    eq,
                ],
                (a + b) * c,
            ),
            // (a * b) + c
            1 => (
                vec![
                    vocab.bos,
                    lp,
                    vocab.number(a),
                    times,
                    vocab.number(b),
                    rp,
                    plus,
                    vocab.number(c),
                    eq,
                ],
                a * b + c,
            ),
            // a * (b + c)
            _ => (
                vec![
                    vocab.bos,
                    vocab.number(a),
                    times,
                    lp,
                    vocab.number(b),
                    plus,
                    vocab.number(c),
                    rp,
                    eq,
                ],
                a * (b + c),
            ),
        };
        if value <= 30 {
            return TaskInstance {
                query: tokens,
                answer: value.to_string(),
                family: TaskFamily::BracketEvaluation,
                difficulty,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addition_chain_answers_are_sums() {
        let v = Vocabulary::toy();
        let q = v.encode_str("<s> 3 + 4 + 5 =").unwrap();
        // the generator's encoding matches this layout; verify by decoding
        // a generated instance and recomputing its sum
        let insts = generate_instances(&v, TaskFamily::AdditionChain, 50, 3, 11).unwrap();
        assert!(insts.iter().all(|i| i.query.starts_with(&[v.bos])));
        for inst in &insts {
            let text = v.decode_str(&inst.query);
            let sum: u32 = text
                .split_whitespace()
                .filter_map(|p| p.parse::<u32>().ok())
                .sum();
            assert_eq!(sum.to_string(), inst.answer, "query {:?}", text);
        }
        // the spec's canonical example
        let sum: u32 = v
            .decode_str(&q)
            .split_whitespace()
            .filter_map(|p| p.parse::<u32>().ok())
            .sum();
        assert_eq!(sum, 12);
    }

    #[test]
    fn digit_parity_follows_last_digit() {
        let v = Vocabulary::toy();
        let insts = generate_instances(&v, TaskFamily::DigitParity, 40, 2, 5).unwrap();
        for inst in &insts {
            let digits: Vec<u32> = inst.query[1..inst.query.len() - 1]
                .iter()
                .map(|&t| v.digit_value(t).unwrap())
                .collect();
            assert_eq!(digits.len(), 3);
            let expect = if digits.last().unwrap() % 2 == 0 {
                "even"
            } else {
                "odd"
            };
            assert_eq!(inst.answer, expect);
        }
        // "2 4 6" is even
        let ids = v.encode_str("2 4 6").unwrap();
        assert_eq!(v.digit_value(*ids.last().unwrap()).unwrap() % 2, 0);
    }

    #[test]
    fn generation_is_deterministic_and_unique() {
        let v = Vocabulary::toy();
        for family in [
            TaskFamily::AdditionChain,
            TaskFamily::ModularArithmetic,
            TaskFamily::DigitParity,
            TaskFamily::BracketEvaluation,
        ] {
            let a = generate_instances(&v, family, 200, 3, 42).unwrap();
            let b = generate_instances(&v, family, 200, 3, 42).unwrap();
            assert_eq!(a.len(), 200);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.query, y.query);
                assert_eq!(x.answer, y.answer);
            }
            let unique: HashSet<_> = a.iter().map(|i| i.query.clone()).collect();
            assert_eq!(unique.len(), 200);
        }
    }

    #[test]
    fn exhausted_family_reports_error() {
        let v = Vocabulary::toy();
        // difficulty 1 addition has only 25 distinct queries
        let err = generate_instances(&v, TaskFamily::AdditionChain, 100, 1, 3);
        assert!(err.is_err());
    }

    #[test]
    fn all_answers_fit_single_number_or_parity_tokens() {
        let v = Vocabulary::toy();
        for family in [
            TaskFamily::AdditionChain,
            TaskFamily::ModularArithmetic,
            TaskFamily::BracketEvaluation,
        ] {
            for d in 1..=6 {
                let insts = generate_instances(&v, family, 30, d, 7).unwrap();
                for inst in insts {
                    let n: u32 = inst.answer.parse().unwrap();
                    assert!(n <= 30, "{} answer {} too large", family, n);
                }
            }
        }
    }
}
