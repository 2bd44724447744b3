//! Synthetic verifiable tasks and the reward stack.

pub mod gen;
pub mod reward;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Vocabulary;

pub use gen::{generate_instances, TaskFamily, TaskInstance};
pub use reward::{
    calibration_reward, calibration_value, correctness_reward, format_reward, score_rollout,
    total_reward, RewardBreakdown, RewardWeights,
};

/// One line of a task dump: the query as whitespace-joined token strings.
#[derive(Serialize, Deserialize)]
struct TaskLine {
    query: String,
    answer: String,
    family: TaskFamily,
    difficulty: u32,
    seed: u64,
}

pub fn write_tasks_jsonl(path: &Path, tasks: &[TaskInstance], vocab: &Vocabulary, seed: u64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in tasks {
        let line = TaskLine {
            query: vocab.decode_str(&t.query),
            answer: t.answer.clone(),
            family: t.family,
            difficulty: t.difficulty,
            seed,
        };
        serde_json::to_writer(&mut f, &line)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks_jsonl(path: &Path, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TaskLine = serde_json::from_str(&line)
            .map_err(|e| Error::Task(format!("line {}: {}", ln + 1, e)))?;
        out.push(TaskInstance {
            query: vocab.encode_str(&parsed.query)?,
            answer: parsed.answer,
            family: parsed.family,
            difficulty: parsed.difficulty,
        });
    }
    if out.is_empty() {
        return Err(Error::Task(format!("no tasks in {}", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_preserves_queries() {
        let v = Vocabulary::toy();
        let tasks = generate_instances(&v, TaskFamily::AdditionChain, 30, 2, 9).unwrap();
        let dir = std::env::temp_dir().join("amirlab_tasks_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tasks.jsonl");
        write_tasks_jsonl(&path, &tasks, &v, 9).unwrap();
        let back = read_tasks_jsonl(&path, &v).unwrap();
        assert_eq!(back.len(), tasks.len());
        for (a, b) in tasks.iter().zip(&back) {
            assert_eq!(a.query, b.query);
            assert_eq!(a.answer, b.answer);
            assert_eq!(a.family, b.family);
        }
        std::fs::remove_file(&path).ok();
    }
}
