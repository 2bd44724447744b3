//! Token vocabulary for the toy policies.
//!
//! Completions follow a tagged protocol: the answer sits between
//! `<answer>`/`</answer>` markers and a verbalized confidence of the form
//! `0.NN` sits between `<confidence>`/`</confidence>` markers.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_NUMBER_TOKEN: u32 = 30;

/// Bijection between token strings and ids, with reserved structural ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub bos: u32,
    pub eos: u32,
    pub answer_open: u32,
    pub answer_close: u32,
    pub conf_open: u32,
    pub conf_close: u32,
    pub conf_lead: u32,
}

impl Vocabulary {
    /// The standard toy vocabulary: structural markers, the confidence lead
    /// token `0.`, number tokens `0..=30`, operators, and parity words.
    pub fn toy() -> Vocabulary {
        let mut tokens: Vec<String> = vec![
            "<s>".into(),
            "</s>".into(),
            "<answer>".into(),
            "</answer>".into(),
            "<confidence>".into(),
            "</confidence>".into(),
            "0.".into(),
        ];
        for v in 0..=MAX_NUMBER_TOKEN {
            tokens.push(v.to_string());
        }
        for s in ["+", "*", "mod", "(", ")", "=", "even", "odd"] {
            tokens.push(s.into());
        }
        Vocabulary::from_tokens(tokens).expect("builtin vocabulary is valid")
    }

    /// Rebuilds a vocabulary from an ordered token list (checkpoint load).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Checkpoint(format!("duplicate token {:?}", t)));
            }
        }
        let lookup = |s: &str| -> Result<u32> {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("missing reserved token {:?}", s)))
        };
        Ok(Vocabulary {
            bos: lookup("<s>")?,
            eos: lookup("</s>")?,
            answer_open: lookup("<answer>")?,
            answer_close: lookup("</answer>")?,
            conf_open: lookup("<confidence>")?,
            conf_close: lookup("</confidence>")?,
            conf_lead: lookup("0.")?,
            tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of the number token with the given value (`0..=30`).
    pub fn number(&self, v: u32) -> u32 {
        assert!(v <= MAX_NUMBER_TOKEN, "number token {} out of range", v);
        self.id(&v.to_string()).expect("number tokens present")
    }

    /// Value of a single-character digit token (`"0".."9"`), if it is one.
    pub fn digit_value(&self, id: u32) -> Option<u32> {
        let s = self.decode(id);
        if s.len() == 1 {
            s.chars().next().and_then(|c| c.to_digit(10))
        } else {
            None
        }
    }

    /// Encodes a whitespace-separated token string.
    pub fn encode_str(&self, s: &str) -> Result<Vec<u32>> {
        s.split_whitespace()
            .map(|piece| {
                self.id(piece)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown token {:?}", piece)))
            })
            .collect()
    }

    /// Whitespace-joined decoding, the inverse of [`encode_str`].
    ///
    /// [`encode_str`]: Vocabulary::encode_str
    pub fn decode_str(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.decode(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
