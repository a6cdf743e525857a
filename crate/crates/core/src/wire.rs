//! Binary frames for partial model updates.
//!
//! All integers are little-endian. Layout, version 1:
//!
//! ```text
//! header   magic "FSKP" | version u16 | round u32 | client_id u32 | weight u64 | layer_count u16
//! layer    layer_id u16 | tensor_count u16
//! tensor   name_hash u64 | dtype u8 | rank u8 | dims u32 * rank | payload
//! ```
//!
//! Layers are written in ascending id order and tensors in ascending
//! FNV-1a-64 name-hash order, so equal updates always encode to equal
//! bytes. Payloads are IEEE-754 floats or fixed-point `u64` ring elements.

use crate::error::{Error, Result};
use crate::fed::{LayerPartition, Update};
use crate::nn::params::{shape_table, ALL_NAMES};
use crate::nn::tensor::fnv1a64;
use crate::nn::{Dtype, Element, LayerTensors, ModelConfig, Tensor};

pub const MAGIC: [u8; 4] = *b"FSKP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const LAYER_HEADER_LEN: usize = 4;
pub const TENSOR_HEADER_LEN: usize = 10;

pub fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 1,
        Dtype::F64 => 2,
        Dtype::U64 => 3,
    }
}

fn dtype_from_code(c: u8) -> Option<Dtype> {
    match c {
        1 => Some(Dtype::F32),
        2 => Some(Dtype::F64),
        3 => Some(Dtype::U64),
        _ => None,
    }
}

pub fn name_hash(name: &str) -> u64 {
    fnv1a64(name.as_bytes())
}

fn name_for_hash(h: u64) -> Option<&'static str> {
    ALL_NAMES.iter().copied().find(|n| name_hash(n) == h)
}

pub fn encode_update<E: Element>(u: &Update<E>) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame_len_of(&u.params, E::WIDTH));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u.round.to_le_bytes());
    out.extend_from_slice(&u.client_id.to_le_bytes());
    out.extend_from_slice(&u.weight.to_le_bytes());
    let groups = u.params.groups();
    out.extend_from_slice(&(groups.len() as u16).to_le_bytes());
    for (&layer, group) in groups {
        out.extend_from_slice(&(layer as u16).to_le_bytes());
        out.extend_from_slice(&(group.len() as u16).to_le_bytes());
        let mut tensors: Vec<(u64, &Tensor<E>)> = group.iter().map(|(n, t)| (name_hash(n), t)).collect();
        tensors.sort_by_key(|(h, _)| *h);
        for (h, t) in tensors {
            out.extend_from_slice(&h.to_le_bytes());
            out.push(dtype_code(E::DTYPE));
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                x.put_le(&mut out);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Decode { offset: self.pos, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated frame: need {n} more bytes, have {}", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Dtype of the first tensor in a frame, or `None` for a frame without
/// tensors.
pub fn frame_dtype(bytes: &[u8]) -> Result<Option<Dtype>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    read_header(&mut r)?;
    let layers = r.u16()?;
    if layers == 0 {
        return Ok(None);
    }
    r.take(LAYER_HEADER_LEN)?;
    r.take(8)?;
    let at = r.pos;
    let code = r.u8()?;
    dtype_from_code(code)
        .map(Some)
        .ok_or_else(|| Error::Decode { offset: at, reason: format!("unknown dtype code {code}") })
}

fn read_header(r: &mut Reader<'_>) -> Result<(u32, u32, u64)> {
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic"));
    }
    let v = r.u16()?;
    if v != VERSION {
        r.pos -= 2;
        return Err(r.err(format!("unsupported version {v}")));
    }
    Ok((r.u32()?, r.u32()?, r.u64()?))
}

/// Exact inverse of [`encode_update`]. Fails on anything that is not a
/// canonical frame of element type `E`; no partial value is returned.
pub fn decode_update<E: Element>(bytes: &[u8]) -> Result<Update<E>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (round, client_id, weight) = read_header(&mut r)?;
    let layer_count = r.u16()?;
    let mut params = LayerTensors::new();
    let mut prev_layer: Option<u16> = None;
    for _ in 0..layer_count {
        let at = r.pos;
        let layer = r.u16()?;
        if prev_layer.is_some_and(|p| p >= layer) {
            return Err(Error::Decode { offset: at, reason: format!("layer {layer} out of order") });
        }
        prev_layer = Some(layer);
        let tensor_count = r.u16()?;
        let mut prev_hash: Option<u64> = None;
        for _ in 0..tensor_count {
            let at = r.pos;
            let h = r.u64()?;
            if prev_hash.is_some_and(|p| p >= h) {
                return Err(Error::Decode { offset: at, reason: "tensors out of order".into() });
            }
            prev_hash = Some(h);
            let name = name_for_hash(h)
                .ok_or_else(|| Error::Decode { offset: at, reason: format!("unknown tensor name hash {h:#018x}") })?;
            let at = r.pos;
            let code = r.u8()?;
            if dtype_from_code(code) != Some(E::DTYPE) {
                return Err(Error::Decode {
                    offset: at,
                    reason: format!("dtype code {code} does not match expected {:?}", E::DTYPE),
                });
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes_needed = numel.and_then(|n| n.checked_mul(E::WIDTH)).ok_or_else(|| r.err("tensor too large"))?;
            let payload = r.take(bytes_needed)?;
            let data = payload.chunks_exact(E::WIDTH).map(E::get_le).collect();
            params.insert(layer as usize, name, Tensor::from_vec(shape, data)?);
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Update { round, client_id, weight, params })
}

/// Encoded length of a frame holding tensors with the given shapes.
pub fn frame_len<'a>(layers: impl IntoIterator<Item = (usize, Vec<&'a [usize]>)>, width: usize) -> usize {
    let mut n = HEADER_LEN;
    for (_, shapes) in layers {
        n += LAYER_HEADER_LEN;
        for s in shapes {
            n += TENSOR_HEADER_LEN + 4 * s.len() + width * s.iter().product::<usize>();
        }
    }
    n
}

pub fn frame_len_of<E: Copy>(t: &LayerTensors<E>, width: usize) -> usize {
    frame_len(
        t.groups().iter().map(|(&l, g)| (l, g.values().map(|t| t.shape()).collect())),
        width,
    )
}

/// Frame length of an update covering `ids` of a model with config `cfg`.
pub fn model_frame_len(cfg: &ModelConfig, ids: &std::collections::BTreeSet<usize>, width: usize) -> usize {
    let table = shape_table(cfg);
    let mut layers: std::collections::BTreeMap<usize, Vec<&[usize]>> = Default::default();
    for (l, _, s) in &table {
        if ids.contains(l) {
            layers.entry(*l).or_default().push(s.as_slice());
        }
    }
    frame_len(layers, width)
}

/// Uplink bytes of a trainable-only update divided by the bytes of a
/// full-model update, for elements `width` bytes wide. Without the head
/// the head group is dropped from both sides.
pub fn comm_fraction_for_width(partition: &LayerPartition, cfg: &ModelConfig, include_head: bool, width: usize) -> f64 {
    let head = cfg.head_id();
    let keep = |l: &usize| include_head || *l != head;
    let part: std::collections::BTreeSet<usize> = partition.trainable().iter().copied().filter(keep).collect();
    let full: std::collections::BTreeSet<usize> = cfg.layer_ids().filter(keep).collect();
    model_frame_len(cfg, &part, width) as f64 / model_frame_len(cfg, &full, width) as f64
}

/// [`comm_fraction_for_width`] for f32 payloads, the training dtype.
pub fn comm_fraction(partition: &LayerPartition, cfg: &ModelConfig, include_head: bool) -> f64 {
    comm_fraction_for_width(partition, cfg, include_head, 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::{make_partition, Strategy};
    use crate::nn::{init_params, Task};

    fn small_update() -> Update<f32> {
        let mut p = LayerTensors::new();
        p.insert(2, "wq", Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        p.insert(2, "attn_norm", Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap());
        p.insert(3, "w_out", Tensor::from_vec(vec![2, 3], vec![0.5; 6]).unwrap());
        Update { round: 7, client_id: 3, weight: 42, params: p }
    }

    #[test]
    fn length_by_hand() {
        let u = small_update();
        // header 24; layer 2: 4 + (10 + 8 + 16) + (10 + 4 + 8); layer 3: 4 + (10 + 8 + 24)
        let want = 24 + (4 + 34 + 22) + (4 + 42);
        assert_eq!(encode_update(&u).len(), want);
        assert_eq!(frame_len_of(&u.params, 4), want);
    }

    #[test]
    fn deterministic_and_local() {
        let u = small_update();
        assert_eq!(encode_update(&u), encode_update(&u));
        let mut v = u.clone();
        v.params.get_mut(2, "wq").data_mut()[1] = 9.0;
        let (a, b) = (encode_update(&u), encode_update(&v));
        let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert!(!diff.is_empty() && diff.len() <= 4);
        assert!(diff.last().unwrap() - diff[0] < 4);
    }

    #[test]
    fn round_trip_and_errors() {
        let u = small_update();
        let bytes = encode_update(&u);
        assert_eq!(decode_update::<f32>(&bytes).unwrap(), u);
        assert_eq!(frame_dtype(&bytes).unwrap(), Some(Dtype::F32));
        for cut in [0, 3, 10, 23, 30, bytes.len() - 1] {
            assert!(matches!(decode_update::<f32>(&bytes[..cut]), Err(Error::Decode { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        match decode_update::<f32>(&bad) {
            Err(Error::Decode { offset: 0, reason }) => assert_eq!(reason, "bad magic"),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_update::<f32>(&bad), Err(Error::Decode { offset: 4, .. })));
        assert!(matches!(decode_update::<f64>(&bytes), Err(Error::Decode { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(decode_update::<f32>(&long).is_err());
    }

    #[test]
    fn full_model_fraction_is_one() {
        let cfg = ModelConfig { vocab_size: 20, d_model: 8, n_heads: 2, n_blocks: 4, d_ff: 16, max_seq_len: 8, task: Task::Tagging { types: 2 } };
        let all = make_partition(&cfg, Strategy::All).unwrap();
        assert_eq!(comm_fraction(&all, &cfg, true), 1.0);
        assert_eq!(comm_fraction(&all, &cfg, false), 1.0);
        let full = init_params::<f32>(&cfg, 1).unwrap();
        let u = Update { round: 0, client_id: 0, weight: 1, params: full };
        assert_eq!(encode_update(&u).len(), model_frame_len(&cfg, &cfg.layer_ids().collect(), 4));
    }

    #[test]
    fn uniform_blocks_give_a_quarter() {
        let shape = [64usize, 64];
        let blocks = |ids: &[usize]| ids.iter().map(|&l| (l, vec![&shape[..]])).collect::<Vec<_>>();
        let f = frame_len(blocks(&[4]), 4) as f64 / frame_len(blocks(&[1, 2, 3, 4]), 4) as f64;
        assert!((f - 0.25).abs() < 0.0025, "{f}");
    }
}
