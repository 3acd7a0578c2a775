//! Toeplitz hashing over GF(2), used both for privacy amplification and for
//! the key-confirmation tag.
//!
//! For an `l x n` matrix the seed has `l + n - 1` bits and
//! `T[i][j] = seed[j - i + l - 1]`, so row `i` is the seed window starting at
//! `l - 1 - i`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PostprocError;
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaSeed {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<u8>,
}

impl PaSeed {
    pub fn expected_len(rows: usize, cols: usize) -> usize {
        (rows + cols).saturating_sub(1)
    }

    pub fn random(rows: usize, cols: usize, rng: &mut SimRng) -> Self {
        let bits = (0..Self::expected_len(rows, cols))
            .map(|_| u8::from(rng.random::<bool>()))
            .collect();
        Self { rows, cols, bits }
    }

    pub fn validate(&self) -> Result<(), PostprocError> {
        let expected = Self::expected_len(self.rows, self.cols);
        if self.bits.len() != expected {
            return Err(PostprocError::SeedLength {
                expected,
                actual: self.bits.len(),
            });
        }
        Ok(())
    }
}

fn pack(bits: &[u8], extra_words: usize) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64) + extra_words];
    for (i, &b) in bits.iter().enumerate() {
        words[i / 64] |= u64::from(b & 1) << (i % 64);
    }
    words
}

/// `T(seed) * key` over GF(2) with `rows` output bits.
fn toeplitz_hash(key: &[u8], rows: usize, seed: &[u8]) -> Vec<u8> {
    let n = key.len();
    if n == 0 {
        return vec![0; rows];
    }
    let key_words = pack(key, 0);
    let seed_words = pack(seed, 2);
    let row = |i: usize| -> u8 {
        let offset = rows - 1 - i;
        let (base, shift) = (offset / 64, offset % 64);
        let mut acc = 0u64;
        for (w, &k) in key_words.iter().enumerate() {
            let lo = seed_words[base + w] >> shift;
            let window = if shift == 0 { lo } else { lo | (seed_words[base + w + 1] << (64 - shift)) };
            acc ^= window & k;
        }
        (acc.count_ones() & 1) as u8
    };
    if rows * key_words.len() >= 1 << 16 {
        (0..rows).into_par_iter().map(row).collect()
    } else {
        (0..rows).map(row).collect()
    }
}

/// Compresses `key` to exactly `l` bits with the Toeplitz matrix of `seed`.
pub fn privacy_amplify(key: &[u8], l: usize, seed: &PaSeed) -> Result<Vec<u8>, PostprocError> {
    if l > key.len() {
        return Err(PostprocError::KeyTooShort {
            requested: l,
            available: key.len(),
        });
    }
    if seed.rows != l || seed.cols != key.len() {
        return Err(PostprocError::SeedLength {
            expected: PaSeed::expected_len(l, key.len()),
            actual: seed.bits.len(),
        });
    }
    seed.validate()?;
    if l == 0 {
        return Ok(Vec::new());
    }
    Ok(toeplitz_hash(key, l, &seed.bits))
}

/// Universal-hash tag of `tag_bits` bits; the Toeplitz seed is expanded from
/// `seed` on the confirmation stream. Distinct keys collide with probability
/// `2^-tag_bits` over the seed.
pub fn confirmation_tag(key: &[u8], tag_bits: u32, seed: u64) -> Vec<u8> {
    let rows = tag_bits as usize;
    let mut rng = stream_rng(seed, Stream::Confirmation);
    let bits = PaSeed::random(rows, key.len(), &mut rng).bits;
    toeplitz_hash(key, rows, &bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfirmOutcome {
    Match,
    Mismatch,
}

pub fn confirm(key_a: &[u8], key_b: &[u8], tag_bits: u32, seed: u64) -> ConfirmOutcome {
    if key_a.len() == key_b.len() && confirmation_tag(key_a, tag_bits, seed) == confirmation_tag(key_b, tag_bits, seed) {
        ConfirmOutcome::Match
    } else {
        ConfirmOutcome::Mismatch
    }
}
