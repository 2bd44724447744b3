//! Tiny causal sequence policy: vocabulary, sampling, exact log-probability
//! evaluation, snapshots, and checkpoint serialization.
//!
//! Parameter snapshots are immutable and can be shared across rollout
//! workers; only the trainer thread mutates live parameters. Each worker
//! derives its own seeded RNG stream.

pub mod checkpoint;
pub mod model;
pub mod sample;
pub mod traced;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{length_normalized_logprob, sequence_logprob, PolicyConfig, PolicyParams};
pub use sample::{parse_answer, parse_confidence, sample_completion, Rollout};
pub use traced::TracedPolicy;
pub use vocab::Vocabulary;
