use crate::nn::LayerTensors;

/// One client's upload for a round: the post-training tensors of the
/// aggregated layers and the client's sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct Update<E> {
    pub round: u32,
    pub client_id: u32,
    /// `|D_i|`, the number of local training examples.
    pub weight: u64,
    pub params: LayerTensors<E>,
}

/// Plain (unmasked) update in the training dtype.
pub type ClientUpdate<T> = Update<T>;

/// Secure-aggregation payload: fixed-point values pre-scaled by the
/// client weight, plus pairwise masks, all modulo 2^64. The quantization
/// scale is a cohort-wide session parameter and is not carried here.
pub type MaskedUpdate = Update<u64>;
