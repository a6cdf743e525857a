//! Experiment engine: pretraining, the federated round loop, baselines,
//! and metric histories.
//!
//! All randomness flows from `master_seed` through [`crate::rng::derive_seed`]:
//! client `i` in round `r` shuffles with role `Client` and index
//! `round_index(r, i)`, draws DP noise with role `Dp` and the same index,
//! and cohorts are sampled with role `Client` and `round_index(r, u32::MAX)`.

pub mod baselines;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod federation;
pub mod history;
pub mod pretrain;

pub use baselines::{run_centralized, run_local_only, LocalOnly};
pub use config::FederationConfig;
pub use eval::{evaluate_params, mean_metrics};
pub use federation::{run_federation, sample_cohort};
pub use history::{first_reaching, rounds_to_fraction, History, RoundMetrics, CSV_HEADER};
pub use pretrain::{mask_sequence, mlm_eval_loss, run_pretraining, run_pretraining_full, PretrainConfig, MASK_RATE};
pub use experiment::{desk_config, generate_datasets, pretrain_backbone, run_mode, Datasets, Examples, ExperimentConfig, Mode, RunOutput, TaskKind};
