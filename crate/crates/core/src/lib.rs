//! Layer-skipping federated fine-tuning simulator.
//!
//! Clients fine-tune only the top blocks (plus the task head) of a small
//! pretrained transformer; the server averages just those layers. Optional
//! DP-SGD and pairwise-masked secure aggregation sit on top of the same
//! round loop, and a binary update codec gives exact byte accounting.

pub mod data;
pub mod error;
pub mod fed;
pub mod nn;
pub mod orch;
pub mod rng;
pub mod wire;

pub use error::{Error, Result};
