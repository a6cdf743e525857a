//! Randomized round-trips through the update codec.

use fedskip::fed::Update;
use fedskip::nn::params::ALL_NAMES;
use fedskip::nn::{LayerTensors, Tensor};
use fedskip::wire::{decode_update, encode_update, frame_len_of};
use proptest::prelude::*;

fn tensors<E: Copy + std::fmt::Debug>(elem: impl Strategy<Value = E> + Clone) -> impl Strategy<Value = LayerTensors<E>> {
    let tensor = (1usize..4, 1usize..5)
        .prop_flat_map(move |(rank, dim)| {
            let shape = vec![dim; rank];
            let n = dim.pow(rank as u32);
            (Just(shape), proptest::collection::vec(elem.clone(), n))
        })
        .prop_map(|(s, d)| Tensor::from_vec(s, d).unwrap());
    proptest::collection::btree_map((0usize..40, 0usize..ALL_NAMES.len()), tensor, 0..6).prop_map(|m| {
        let mut p = LayerTensors::new();
        for ((l, n), t) in m {
            p.insert(l, ALL_NAMES[n], t);
        }
        p
    })
}

proptest! {
    #[test]
    fn f32_round_trip(params in tensors(any::<f32>().prop_filter("not nan", |v| !v.is_nan())), round: u32, client: u32, weight: u64) {
        let u = Update { round, client_id: client, weight, params };
        let bytes = encode_update(&u);
        prop_assert_eq!(bytes.len(), frame_len_of(&u.params, 4));
        prop_assert_eq!(decode_update::<f32>(&bytes).unwrap(), u);
    }

    #[test]
    fn u64_round_trip(params in tensors(any::<u64>()), round: u32) {
        let u = Update { round, client_id: 1, weight: 2, params };
        prop_assert_eq!(decode_update::<u64>(&encode_update(&u)).unwrap(), u);
    }

    #[test]
    fn f64_truncations_fail(params in tensors(-1e6f64..1e6), cut in 0usize..10_000) {
        let u = Update { round: 0, client_id: 0, weight: 1, params };
        let bytes = encode_update(&u);
        let cut = cut % bytes.len();
        prop_assert!(decode_update::<f64>(&bytes[..cut]).is_err());
    }
}
