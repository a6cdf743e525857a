use crate::error::{Error, Result};

/// What the output head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Per-token BIO tagging over `types` entity types (`2 * types + 1` tags).
    Tagging { types: usize },
    /// Per-sequence multi-label classification over `labels` labels.
    Multilabel { labels: usize },
    /// Per-token masked-token prediction over the vocabulary.
    Mlm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub task: Task,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_blocks == 0 {
            return bad("model.n_blocks must be >= 1".into());
        }
        if self.n_heads == 0 {
            return bad("model.n_heads must be >= 1".into());
        }
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "model.n_heads ({}) must divide model.d_model ({})",
                self.n_heads, self.d_model
            ));
        }
        if self.vocab_size == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return bad("vocab_size, d_ff and max_seq_len must be positive".into());
        }
        match self.task {
            Task::Tagging { types: 0 } | Task::Multilabel { labels: 0 } => {
                bad("task needs at least one type/label".into())
            }
            _ => Ok(()),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the head output.
    pub fn n_outputs(&self) -> usize {
        match self.task {
            Task::Tagging { types } => 2 * types + 1,
            Task::Multilabel { labels } => labels,
            Task::Mlm => self.vocab_size,
        }
    }

    /// Layer id of the task head (`n_blocks + 1`).
    pub fn head_id(&self) -> usize {
        self.n_blocks + 1
    }

    /// All layer ids `0..=n_blocks + 1`.
    pub fn layer_ids(&self) -> impl Iterator<Item = usize> {
        0..=self.head_id()
    }

    pub fn with_task(&self, task: Task) -> Self {
        Self { task, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
            d_ff: 16,
            max_seq_len: 6,
            task: Task::Tagging { types: 2 },
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = cfg();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_zero_blocks() {
        let mut c = cfg();
        c.n_blocks = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_widths() {
        assert_eq!(cfg().n_outputs(), 5);
        assert_eq!(cfg().with_task(Task::Multilabel { labels: 3 }).n_outputs(), 3);
        assert_eq!(cfg().with_task(Task::Mlm).n_outputs(), 11);
    }
}
