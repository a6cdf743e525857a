//! Dataset files: a short header followed by length-prefixed records.
//!
//! ```text
//! header  magic "FSKD" | version u16 | kind u8 | count u64
//! record  len u32 | body (len bytes)
//! ```
//!
//! Bodies are little-endian `u32` arrays: corpus `n | tokens`; tagging
//! `n | tokens | tags`; multilabel `n | tokens | k | mentions`.

use std::io::{Read, Write};

use crate::data::grammar::{MultilabelExample, TaggingExample};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FSKD";
pub const VERSION: u16 = 1;

/// A value storable in a dataset file.
pub trait Record: Sized {
    const KIND: u8;
    fn write_body(&self, out: &mut Vec<u8>);
    fn read_body(words: &[u32]) -> Option<Self>;
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_all(out: &mut Vec<u8>, vs: &[u32]) {
    put(out, vs.len() as u32);
    vs.iter().for_each(|&v| put(out, v));
}

/// Splits a length-prefixed array off the front of `words`.
fn take(words: &[u32]) -> Option<(&[u32], &[u32])> {
    let (&n, rest) = words.split_first()?;
    let n = n as usize;
    (rest.len() >= n).then(|| rest.split_at(n))
}

impl Record for Vec<u32> {
    const KIND: u8 = 1;

    fn write_body(&self, out: &mut Vec<u8>) {
        put_all(out, self);
    }

    fn read_body(words: &[u32]) -> Option<Self> {
        let (t, rest) = take(words)?;
        rest.is_empty().then(|| t.to_vec())
    }
}

impl Record for TaggingExample {
    const KIND: u8 = 2;

    fn write_body(&self, out: &mut Vec<u8>) {
        put(out, self.tokens.len() as u32);
        self.tokens.iter().chain(&self.tags).for_each(|&v| put(out, v));
    }

    fn read_body(words: &[u32]) -> Option<Self> {
        let (&n, rest) = words.split_first()?;
        let n = n as usize;
        (rest.len() == 2 * n).then(|| TaggingExample { tokens: rest[..n].to_vec(), tags: rest[n..].to_vec() })
    }
}

impl Record for MultilabelExample {
    const KIND: u8 = 3;

    fn write_body(&self, out: &mut Vec<u8>) {
        put_all(out, &self.tokens);
        put_all(out, &self.mentions);
    }

    fn read_body(words: &[u32]) -> Option<Self> {
        let (tokens, rest) = take(words)?;
        let (mentions, rest) = take(rest)?;
        if !rest.is_empty() {
            return None;
        }
        let labels = mentions.iter().map(|&c| c > 0).collect();
        Some(MultilabelExample { tokens: tokens.to_vec(), labels, mentions: mentions.to_vec() })
    }
}

pub fn encode_records<R: Record>(records: &[R]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(R::KIND);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    let mut body = Vec::new();
    for r in records {
        body.clear();
        r.write_body(&mut body);
        put(&mut out, body.len() as u32);
        out.extend_from_slice(&body);
    }
    out
}

pub fn decode_records<R: Record>(bytes: &[u8]) -> Result<Vec<R>> {
    let err = |offset: usize, reason: &str| Error::Decode { offset, reason: reason.to_string() };
    if bytes.len() < 15 {
        return Err(err(0, "truncated dataset header"));
    }
    if bytes[..4] != MAGIC {
        return Err(err(0, "bad magic"));
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != VERSION {
        return Err(err(4, "unsupported version"));
    }
    if bytes[6] != R::KIND {
        return Err(err(6, "unexpected record kind"));
    }
    let count = u64::from_le_bytes(bytes[7..15].try_into().expect("8 bytes"));
    let mut pos = 15;
    let mut out = Vec::new();
    for _ in 0..count {
        if bytes.len() - pos < 4 {
            return Err(err(pos, "truncated record length"));
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let at = pos;
        pos += 4;
        if len % 4 != 0 || bytes.len() - pos < len {
            return Err(err(at, "truncated or misaligned record"));
        }
        let words: Vec<u32> =
            bytes[pos..pos + len].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push(R::read_body(&words).ok_or_else(|| err(at, "malformed record body"))?);
        pos += len;
    }
    if pos != bytes.len() {
        return Err(err(pos, "trailing bytes"));
    }
    Ok(out)
}

pub fn write_records<R: Record>(w: &mut impl Write, records: &[R]) -> Result<()> {
    w.write_all(&encode_records(records))?;
    Ok(())
}

pub fn read_records<R: Record>(r: &mut impl Read) -> Result<Vec<R>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_records(&buf)
}
