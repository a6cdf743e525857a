//! A small generative grammar standing in for clinical text.
//!
//! Token ids `[k*m, (k+1)*m)` form the lexicon of entity type `k`; the rest
//! of `[0, V)` is filler. Each sequence draws a topic from the type weights.
//! Positions follow a two-state chain: after filler (or at the start) a span
//! opens with probability `span_rate`, inside a span the next token
//! continues it with probability 1/2, so span lengths are geometric with
//! mean 2 and every span is followed by filler. A span has the topic's type
//! with probability `topic_purity`, otherwise a uniform type.
//!
//! The first `m/2` ids of a lexicon open spans and the rest continue them,
//! like modifiers and head nouns of multiword terms.

use crate::error::{Error, Result};
use crate::nn::tensor::fnv1a64;
use crate::nn::{Sample, Target};
use crate::rng::{index, rng_from_seed, uniform, Rng};

/// Tag id of "outside".
pub const TAG_O: u32 = 0;

pub fn tag_begin(k: usize) -> u32 {
    2 * k as u32 + 1
}

pub fn tag_inside(k: usize) -> u32 {
    2 * k as u32 + 2
}

/// Entity type of a non-O tag.
pub fn tag_type(tag: u32) -> Option<usize> {
    (tag != TAG_O).then(|| (tag as usize - 1) / 2)
}

/// Probability that a span continues for one more token.
pub const SPAN_CONTINUE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarConfig {
    /// Size of the grammar vocabulary `V`.
    pub vocab_size: usize,
    pub n_types: usize,
    pub lexicon_size: usize,
    pub seq_len: usize,
    pub span_rate: f64,
    pub topic_purity: f64,
    /// Unnormalized topic weights, one per type.
    pub type_weights: Vec<f64>,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            vocab_size: 160,
            n_types: 3,
            lexicon_size: 32,
            seq_len: 16,
            span_rate: 0.3,
            topic_purity: 0.8,
            type_weights: vec![1.0; 3],
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_types == 0 || self.lexicon_size < 2 {
            return Err(Error::config("grammar.n_types must be >= 1 and grammar.lexicon_size >= 2"));
        }
        if self.vocab_size < self.n_types * self.lexicon_size + 1 {
            return Err(Error::config(format!(
                "grammar.vocab_size {} must be at least n_types * lexicon_size + 1 = {}",
                self.vocab_size,
                self.n_types * self.lexicon_size + 1
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::config("grammar.seq_len must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.span_rate) {
            return Err(Error::config("grammar.span_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.topic_purity) {
            return Err(Error::config("grammar.topic_purity must lie in [0, 1]"));
        }
        if self.type_weights.len() != self.n_types {
            return Err(Error::config(format!(
                "grammar.type_weights has {} entries, expected {}",
                self.type_weights.len(),
                self.n_types
            )));
        }
        if self.type_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.type_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::config("grammar.type_weights must be non-negative with a positive sum"));
        }
        Ok(())
    }

    /// Lexicon of a token, or `None` for filler.
    pub fn lexicon_of(&self, token: u32) -> Option<usize> {
        let k = token as usize / self.lexicon_size;
        (k < self.n_types).then_some(k)
    }

    pub fn filler_count(&self) -> usize {
        self.vocab_size - self.n_types * self.lexicon_size
    }

    /// Id reserved for the MLM mask, one past the grammar vocabulary.
    pub fn mask_id(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Vocabulary size a model needs: grammar tokens plus the mask.
    pub fn model_vocab(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn n_tags(&self) -> usize {
        2 * self.n_types + 1
    }

    /// Normalized topic distribution.
    pub fn topic_probs(&self) -> Vec<f64> {
        let s: f64 = self.type_weights.iter().sum();
        self.type_weights.iter().map(|w| w / s).collect()
    }

    /// Probability that a span in a sequence of topic `topic` has type `k`.
    pub fn span_type_prob(&self, topic: usize, k: usize) -> f64 {
        let base = (1.0 - self.topic_purity) / self.n_types as f64;
        if k == topic {
            self.topic_purity + base
        } else {
            base
        }
    }

    /// FNV-1a over a canonical text rendering of every field.
    pub fn hash(&self) -> u64 {
        let w: Vec<String> = self.type_weights.iter().map(|w| format!("{:016x}", w.to_bits())).collect();
        let s = format!(
            "V={};K={};m={};n={};p={:016x};rho={:016x};w={}",
            self.vocab_size,
            self.n_types,
            self.lexicon_size,
            self.seq_len,
            self.span_rate.to_bits(),
            self.topic_purity.to_bits(),
            w.join(",")
        );
        fnv1a64(s.as_bytes())
    }
}

/// One generated sequence with its BIO tags.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Generated {
    tokens: Vec<u32>,
    tags: Vec<u32>,
}

fn categorical(rng: &mut Rng, probs: &[f64]) -> usize {
    let u = uniform(rng);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum; take the last nonzero.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn generate(g: &GrammarConfig, rng: &mut Rng) -> Generated {
    let topic = categorical(rng, &g.topic_probs());
    let m = g.lexicon_size;
    let filler0 = g.n_types * m;
    let mut tokens = Vec::with_capacity(g.seq_len);
    let mut tags = Vec::with_capacity(g.seq_len);
    let mut current: Option<usize> = None;
    for _ in 0..g.seq_len {
        let prev = current;
        current = match current {
            None => (uniform(rng) < g.span_rate).then(|| {
                let k = if uniform(rng) < g.topic_purity { topic } else { index(rng, g.n_types) };
                tags.push(tag_begin(k));
                k
            }),
            Some(k) => (uniform(rng) < SPAN_CONTINUE).then(|| {
                tags.push(tag_inside(k));
                k
            }),
        };
        match current {
            Some(k) => {
                let h = m / 2;
                let off = if prev.is_some() { h + index(rng, m - h) } else { index(rng, h) };
                tokens.push((k * m + off) as u32)
            }
            None => {
                tags.push(TAG_O);
                tokens.push((filler0 + index(rng, g.filler_count())) as u32);
            }
        }
    }
    Generated { tokens, tags }
}

fn generate_many(seed: u64, n: usize, g: &GrammarConfig) -> Result<Vec<Generated>> {
    g.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| generate(g, &mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggingExample {
    pub tokens: Vec<u32>,
    pub tags: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultilabelExample {
    pub tokens: Vec<u32>,
    /// Label `k` is set iff some token comes from lexicon `k`.
    pub labels: Vec<bool>,
    /// Tokens from each lexicon.
    pub mentions: Vec<u32>,
}

impl TaggingExample {
    pub fn to_sample(&self) -> Sample {
        Sample { tokens: self.tokens.clone(), target: Target::PerToken(self.tags.iter().map(|&t| Some(t)).collect()) }
    }
}

impl MultilabelExample {
    pub fn to_sample(&self) -> Sample {
        Sample { tokens: self.tokens.clone(), target: Target::Labels(self.labels.clone()) }
    }

    pub fn from_tokens(tokens: Vec<u32>, g: &GrammarConfig) -> Self {
        let mut mentions = vec![0u32; g.n_types];
        for &t in &tokens {
            if let Some(k) = g.lexicon_of(t) {
                mentions[k] += 1;
            }
        }
        let labels = mentions.iter().map(|&c| c > 0).collect();
        Self { tokens, labels, mentions }
    }
}

/// Unlabeled sequences for pretraining.
pub fn gen_corpus(seed: u64, n_seqs: usize, g: &GrammarConfig) -> Result<Vec<Vec<u32>>> {
    Ok(generate_many(seed, n_seqs, g)?.into_iter().map(|s| s.tokens).collect())
}

pub fn gen_tagging(seed: u64, n_seqs: usize, g: &GrammarConfig) -> Result<Vec<TaggingExample>> {
    Ok(generate_many(seed, n_seqs, g)?.into_iter().map(|s| TaggingExample { tokens: s.tokens, tags: s.tags }).collect())
}

pub fn gen_multilabel(seed: u64, n_docs: usize, g: &GrammarConfig) -> Result<Vec<MultilabelExample>> {
    Ok(generate_many(seed, n_docs, g)?.into_iter().map(|s| MultilabelExample::from_tokens(s.tokens, g)).collect())
}

/// BIO validity: tags in range, and `I-k` only after `B-k` or `I-k`.
pub fn is_valid_bio(tags: &[u32], n_types: usize) -> bool {
    let mut prev = TAG_O;
    for &t in tags {
        if t as usize > 2 * n_types {
            return false;
        }
        if t != TAG_O && t % 2 == 0 && tag_type(prev) != tag_type(t) {
            return false;
        }
        prev = t;
    }
    true
}
