//! A complete desk-scale experiment: synthetic data, pretraining, and one
//! of the four training modes.

use crate::data::io::{decode_records, encode_records};
use crate::data::{gen_corpus, gen_multilabel, gen_tagging, partition_clients, type_histogram, GrammarConfig, MultilabelExample, TaggingExample};
use crate::error::{Error, Result};
use crate::fed::Strategy;
use crate::nn::{ModelConfig, ParamSet, Sample, Task};
use crate::orch::baselines::{run_centralized, run_local_only};
use crate::orch::config::FederationConfig;
use crate::orch::federation::run_federation;
use crate::orch::history::History;
use crate::orch::pretrain::{run_pretraining, PretrainConfig};
use crate::rng::{derive_seed, Role};
use crate::wire::comm_fraction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Tagging,
    Multilabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    LayerSkip,
    FedavgFull,
    Centralized,
    LocalOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::LayerSkip, Mode::FedavgFull, Mode::Centralized, Mode::LocalOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::LayerSkip => "layer_skip",
            Mode::FedavgFull => "fedavg_full",
            Mode::Centralized => "centralized",
            Mode::LocalOnly => "local_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?}; expected one of layer_skip, fedavg_full, centralized, local_only")))
    }
}

/// Every knob of an experiment. `fed.strategy` is set per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub grammar: GrammarConfig,
    pub n_pretrain: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub pretrain: PretrainConfig,
    /// Trainable blocks in layer-skip mode.
    pub top_k: usize,
    /// Partition of the centralized and local-only baselines.
    pub baseline_strategy: Strategy,
    pub fed: FederationConfig,
}

/// Desk defaults: a 4-block, 32-wide model on a 3-type grammar, 10 clients.
pub fn desk_config(seed: u64) -> ExperimentConfig {
    let grammar = GrammarConfig::default();
    let model = ModelConfig {
        vocab_size: grammar.model_vocab(),
        d_model: 32,
        n_heads: 4,
        n_blocks: 4,
        d_ff: 64,
        max_seq_len: grammar.seq_len,
        task: Task::Tagging { types: grammar.n_types },
    };
    let mut fed = FederationConfig::new(model, Strategy::TopK(1), 10, 100);
    fed.master_seed = seed;
    fed.train.local_epochs = 3;
    fed.train.batch_size = 8;
    fed.train.adamw.lr = 3e-3;
    ExperimentConfig {
        task: TaskKind::Tagging,
        pretrain: PretrainConfig {
            steps: 3000,
            batch_size: 16,
            adamw: crate::nn::AdamWConfig { lr: 3e-3, ..Default::default() },
            mask_id: grammar.mask_id(),
        },
        grammar,
        n_pretrain: 4000,
        n_train: 300,
        n_test: 300,
        alpha: 0.5,
        top_k: 1,
        baseline_strategy: Strategy::All,
        fed,
    }
}

impl ExperimentConfig {
    /// Model config of the downstream task.
    pub fn task_model(&self) -> ModelConfig {
        let task = match self.task {
            TaskKind::Tagging => Task::Tagging { types: self.grammar.n_types },
            TaskKind::Multilabel => Task::Multilabel { labels: self.grammar.n_types },
        };
        ModelConfig { vocab_size: self.grammar.model_vocab(), max_seq_len: self.grammar.seq_len, task, ..self.fed.model }
    }

    pub fn mlm_model(&self) -> ModelConfig {
        ModelConfig { task: Task::Mlm, ..self.task_model() }
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        self.task_model().validate()?;
        self.fed.validate()?;
        if self.top_k == 0 || self.top_k > self.fed.model.n_blocks {
            return Err(Error::config(format!("fed.top_k must lie in 1..={}", self.fed.model.n_blocks)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("data.alpha must be > 0"));
        }
        if self.n_test == 0 {
            return Err(Error::config("data.n_test must be >= 1"));
        }
        Ok(())
    }

    /// Federation settings for `mode`, with the model and strategy filled in.
    pub fn fed_for(&self, mode: Mode) -> FederationConfig {
        let strategy = match mode {
            Mode::LayerSkip => Strategy::TopK(self.top_k),
            Mode::FedavgFull => Strategy::All,
            Mode::Centralized | Mode::LocalOnly => self.baseline_strategy,
        };
        FederationConfig { model: self.task_model(), strategy, ..self.fed.clone() }
    }

    pub fn data_seed(&self, index: u64) -> u64 {
        derive_seed(self.fed.master_seed, Role::Data, index)
    }

    pub fn pretrain_seed(&self) -> u64 {
        derive_seed(self.fed.master_seed, Role::Init, 0)
    }
}

/// Examples of either task.
#[derive(Debug, Clone, PartialEq)]
pub enum Examples {
    Tagging(Vec<TaggingExample>),
    Multilabel(Vec<MultilabelExample>),
}

impl Examples {
    pub fn len(&self) -> usize {
        match self {
            Examples::Tagging(v) => v.len(),
            Examples::Multilabel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_samples(&self) -> Vec<Sample> {
        match self {
            Examples::Tagging(v) => v.iter().map(TaggingExample::to_sample).collect(),
            Examples::Multilabel(v) => v.iter().map(MultilabelExample::to_sample).collect(),
        }
    }

    pub fn histogram(&self, n_types: usize) -> Vec<usize> {
        match self {
            Examples::Tagging(v) => type_histogram(v, n_types),
            Examples::Multilabel(v) => type_histogram(v, n_types),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Examples::Tagging(v) => encode_records(v),
            Examples::Multilabel(v) => encode_records(v),
        }
    }

    pub fn decode(task: TaskKind, bytes: &[u8]) -> Result<Self> {
        Ok(match task {
            TaskKind::Tagging => Examples::Tagging(decode_records(bytes)?),
            TaskKind::Multilabel => Examples::Multilabel(decode_records(bytes)?),
        })
    }
}

/// Generated corpus, test set, and client partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub corpus: Vec<Vec<u32>>,
    pub test: Examples,
    pub clients: Vec<Examples>,
}

impl Datasets {
    pub fn client_samples(&self) -> Vec<Vec<Sample>> {
        self.clients.iter().map(Examples::to_samples).collect()
    }

    pub fn pooled_samples(&self) -> Vec<Sample> {
        self.clients.iter().flat_map(Examples::to_samples).collect()
    }
}

pub fn generate_datasets(ec: &ExperimentConfig) -> Result<Datasets> {
    ec.validate()?;
    let g = &ec.grammar;
    let corpus = gen_corpus(ec.data_seed(0), ec.n_pretrain, g)?;
    let (n, k, part_seed) = (ec.fed.n_clients, g.n_types, ec.data_seed(3));
    let (test, clients) = match ec.task {
        TaskKind::Tagging => {
            let train = gen_tagging(ec.data_seed(1), ec.n_train, g)?;
            let parts = partition_clients(&train, k, n, ec.alpha, part_seed)?;
            (
                Examples::Tagging(gen_tagging(ec.data_seed(2), ec.n_test, g)?),
                parts.into_iter().map(|c| Examples::Tagging(c.examples)).collect(),
            )
        }
        TaskKind::Multilabel => {
            let train = gen_multilabel(ec.data_seed(1), ec.n_train, g)?;
            let parts = partition_clients(&train, k, n, ec.alpha, part_seed)?;
            (
                Examples::Multilabel(gen_multilabel(ec.data_seed(2), ec.n_test, g)?),
                parts.into_iter().map(|c| Examples::Multilabel(c.examples)).collect(),
            )
        }
    };
    Ok(Datasets { corpus, test, clients })
}

pub fn pretrain_backbone(ec: &ExperimentConfig, corpus: &[Vec<u32>]) -> Result<ParamSet<f32>> {
    run_pretraining(&ec.mlm_model(), corpus, &ec.pretrain, ec.pretrain_seed())
}

/// Result of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: Mode,
    pub history: History,
    /// Analytic trainable-to-full byte ratio of the mode's partition.
    pub comm_fraction: f64,
}

pub fn run_mode(ec: &ExperimentConfig, mode: Mode, backbone: &ParamSet<f32>, data: &Datasets) -> Result<RunOutput> {
    ec.validate()?;
    let fc = ec.fed_for(mode);
    let test = data.test.to_samples();
    let partition = crate::fed::make_partition(&fc.model, fc.strategy)?;
    let (history, frac) = match mode {
        Mode::LayerSkip | Mode::FedavgFull => (
            run_federation(&fc, backbone, &data.client_samples(), &test)?,
            comm_fraction(&partition, &fc.model, fc.train.head_aggregation),
        ),
        Mode::Centralized => (run_centralized(&fc, backbone, &data.pooled_samples(), &test)?, 1.0),
        Mode::LocalOnly => (run_local_only(&fc, backbone, &data.client_samples(), &test)?.mean, 0.0),
    };
    Ok(RunOutput { mode, history, comm_fraction: frac })
}
