//! Versioned JSON checkpoint container.
//!
//! Values are serialized with shortest-roundtrip float formatting, so 64-bit
//! parameters survive a save/load cycle bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{PolicyConfig, PolicyParams};
use super::vocab::Vocabulary;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    vocab: Vec<String>,
    config: PolicyConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams, vocab: &Vocabulary) -> Result<()> {
    let names = params.tensor_names();
    let tensors = names
        .into_iter()
        .zip(params.tensors())
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        vocab: vocab.tokens().to_vec(),
        config: params.config.clone(),
        tensors,
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, Vocabulary)> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let vocab = Vocabulary::from_tokens(file.vocab)?;
    if vocab.len() != file.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocab length {} does not match config vocab_size {}",
            vocab.len(),
            file.config.vocab_size
        )));
    }
    let mut params = PolicyParams::init(file.config, 0);
    let names = params.tensor_names();
    if names.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            names.len(),
            file.tensors.len()
        )));
    }
    for ((name, slot), entry) in names.iter().zip(params.tensors_mut()).zip(&file.tensors) {
        if *name != entry.name {
            return Err(Error::Checkpoint(format!(
                "tensor name mismatch: expected {}, found {}",
                name, entry.name
            )));
        }
        if slot.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {} shape mismatch: {:?} vs {:?}",
                name,
                slot.shape(),
                entry.shape
            )));
        }
        *slot = Tensor::new(entry.shape.clone(), entry.data.clone());
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    Ok((params, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let vocab = Vocabulary::toy();
        let params = PolicyParams::init(PolicyConfig::new(vocab.len(), 8, 12, 2), 77);
        let dir = std::env::temp_dir().join("amirlab_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        save_checkpoint(&path, &params, &vocab).unwrap();
        let (loaded, vocab2) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.content_hash(), params.content_hash());
        assert_eq!(vocab2.tokens(), vocab.tokens());
        for (a, b) in loaded.tensors().iter().zip(params.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let vocab = Vocabulary::toy();
        let params = PolicyParams::init(PolicyConfig::new(vocab.len(), 8, 12, 1), 7);
        let dir = std::env::temp_dir().join("amirlab_ckpt_test2");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        save_checkpoint(&path, &params, &vocab).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"version\":1", "\"version\":9", 1)).unwrap();
        assert!(load_checkpoint(&path).is_err());
        fs::remove_file(&path).ok();
    }
}
