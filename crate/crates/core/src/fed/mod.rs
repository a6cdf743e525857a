//! The layer-skipping FL protocol: partitioning, local training,
//! trainable-only aggregation, frozen merge, DP-SGD, and masked secure
//! aggregation.

pub mod aggregate;
pub mod client;
pub mod dp;
pub mod partition;
pub mod secagg;
pub mod update;

pub use aggregate::{aggregate, apply_update};
pub use client::{local_update, LocalContext, LocalResult, LocalSeeds, TrainConfig};
pub use dp::{calibrate_sigma, dp_privatize, DpConfig};
pub use partition::{make_partition, LayerPartition, Strategy};
pub use secagg::{mask_update, pair_mask, secure_aggregate, PairSeeds, DEFAULT_SCALE};
pub use update::{ClientUpdate, MaskedUpdate, Update};
