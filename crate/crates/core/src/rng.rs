//! Seed derivation and the random streams used throughout the simulator.
//!
//! Every stochastic component draws from its own [`Rng`] seeded through
//! [`derive_seed`], so results never depend on the order in which clients
//! or runs are scheduled.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used everywhere: xoshiro256++ expanded from a `u64` seed
/// with splitmix64.
pub type Rng = Xoshiro256PlusPlus;

pub fn rng_from_seed(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of splitmix64 starting from `state`: advances the state by the
/// golden gamma and returns the mixed output.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream roles for [`derive_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Client,
    Data,
    Init,
    Dp,
    Mask,
}

impl Role {
    /// Fixed role constants: the ASCII bytes of the role name, left aligned.
    pub const fn constant(self) -> u64 {
        match self {
            Role::Client => 0x636C_6965_6E74_0000, // "client"
            Role::Data => 0x6461_7461_0000_0000,   // "data"
            Role::Init => 0x696E_6974_0000_0000,   // "init"
            Role::Dp => 0x6470_0000_0000_0000,     // "dp"
            Role::Mask => 0x6D61_736B_0000_0000,   // "mask"
        }
    }
}

/// `splitmix64(master ^ role ^ index)`.
pub fn derive_seed(master: u64, role: Role, index: u64) -> u64 {
    splitmix64(master ^ role.constant() ^ index)
}

/// Packs a (round, member) pair into a single derivation index.
pub fn round_index(round: u32, member: u32) -> u64 {
    (u64::from(round) << 32) | u64::from(member)
}

/// Standard normal deviate via the Box–Muller transform.
///
/// Only the cosine branch is used, so every call consumes exactly two
/// uniforms.
pub fn standard_normal(rng: &mut Rng) -> f64 {
    // u1 in (0, 1] keeps ln finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform deviate in `[0, 1)`.
pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// Uniform index in `0..n`.
pub fn index(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    rng.random_range(0..n)
}

/// Fisher–Yates shuffle driven by our generator.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

pub fn next_u64(rng: &mut Rng) -> u64 {
    rng.next_u64()
}
