//! SHA-512 conditioning at a fixed compression ratio.
//!
//! Input is cut into consecutive `in_block_bits` blocks; each block is packed
//! MSB-first into bytes (zero-filling the last byte if the block is not a
//! whole number of bytes), hashed, and the leading `out_block_bits` of the
//! digest are emitted. A trailing partial block is dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};

use crate::bits::{BitSource, BitStream, BitWriter};
use crate::error::{Error, Result};

pub const DIGEST_BITS: usize = 512;
/// Input block sizes chosen by [`choose_ratio`] are rounded up to this many bits.
pub const BLOCK_GRANULE: usize = 64;

const BLOCKS_PER_TASK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockGeometry {
    pub in_block_bits: usize,
    pub out_block_bits: usize,
}

impl BlockGeometry {
    /// 1280 → 512: 0.4 output bits per raw bit, i.e. 3.2 bits per 8-bit sample.
    pub const STANDARD: BlockGeometry = BlockGeometry {
        in_block_bits: 1280,
        out_block_bits: 512,
    };

    pub fn validate(&self) -> Result<()> {
        if self.out_block_bits == 0 || self.out_block_bits > DIGEST_BITS {
            return Err(Error::Config(format!(
                "out_block_bits must be in 1..={DIGEST_BITS}, got {}",
                self.out_block_bits
            )));
        }
        if self.in_block_bits < self.out_block_bits {
            return Err(Error::Config(format!(
                "in_block_bits ({}) must be at least out_block_bits ({})",
                self.in_block_bits, self.out_block_bits
            )));
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        self.out_block_bits as f64 / self.in_block_bits as f64
    }

    /// Exact output length for `input_bits` of input.
    pub fn output_len(&self, input_bits: usize) -> usize {
        input_bits / self.in_block_bits * self.out_block_bits
    }
}

impl Default for BlockGeometry {
    fn default() -> Self {
        Self::STANDARD
    }
}

fn hash_block(bits: &BitStream, start: usize, geometry: BlockGeometry, scratch: &mut Vec<u8>, out: &mut BitWriter) {
    let n = geometry.in_block_bits;
    let digest = if start.is_multiple_of(8) && n.is_multiple_of(8) {
        Sha512::digest(&bits.as_bytes()[start / 8..(start + n) / 8])
    } else {
        scratch.clear();
        let mut w = BitWriter::with_capacity(n);
        let mut pos = start;
        while pos + 64 <= start + n {
            w.push_word(bits.word_at(pos), 64);
            pos += 64;
        }
        if pos < start + n {
            let rem = (start + n - pos) as u32;
            w.push_word(bits.word_at(pos) >> (64 - rem), rem);
        }
        scratch.extend_from_slice(w.finish(BitSource::External, 1).as_bytes());
        Sha512::digest(&scratch[..])
    };
    let m = geometry.out_block_bits;
    out.push_bytes(&digest[..m / 8]);
    if !m.is_multiple_of(8) {
        let rem = (m % 8) as u32;
        out.push_bits(u64::from(digest[m / 8] >> (8 - rem)), rem);
    }
}

/// Hashes consecutive input blocks into the conditioned output stream.
pub fn condition(bits: &BitStream, geometry: BlockGeometry) -> Result<BitStream> {
    geometry.validate()?;
    if bits.len() < geometry.in_block_bits {
        return Err(Error::Sizing(format!(
            "{} input bits is less than one {}-bit block",
            bits.len(),
            geometry.in_block_bits
        )));
    }
    let blocks = bits.len() / geometry.in_block_bits;
    let pieces: Vec<BitStream> = (0..blocks.div_ceil(BLOCKS_PER_TASK))
        .into_par_iter()
        .map(|task| {
            let first = task * BLOCKS_PER_TASK;
            let last = (first + BLOCKS_PER_TASK).min(blocks);
            let mut out = BitWriter::with_capacity((last - first) * geometry.out_block_bits);
            let mut scratch = Vec::new();
            for b in first..last {
                hash_block(bits, b * geometry.in_block_bits, geometry, &mut scratch, &mut out);
            }
            out.finish(BitSource::Conditioned, 1)
        })
        .collect();
    let mut out = BitWriter::with_capacity(blocks * geometry.out_block_bits);
    for p in &pieces {
        out.append(p);
    }
    Ok(out.finish(BitSource::Conditioned, 1))
}

/// Block geometry with `out/in <= safety · h_effective / n_bits` and a full
/// 512-bit output block. The input block is rounded up to [`BLOCK_GRANULE`].
pub fn choose_ratio(h_effective: f64, n_bits: u32, safety: f64) -> Result<BlockGeometry> {
    if !(h_effective > 0.0) {
        return Err(Error::Config(format!(
            "effective entropy must be positive, got {h_effective}"
        )));
    }
    if n_bits == 0 || h_effective > f64::from(n_bits) + 1e-9 {
        return Err(Error::Config(format!(
            "effective entropy {h_effective} exceeds the {n_bits} extracted bits"
        )));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Config(format!("safety factor must lie in (0, 1], got {safety}")));
    }
    let max_ratio = (safety * h_effective / f64::from(n_bits)).min(1.0);
    let min_in = DIGEST_BITS as f64 / max_ratio;
    // Absorb rounding so exact ratios like 0.1 give 5120 rather than 5184.
    let granules = ((min_in - 1e-9) / BLOCK_GRANULE as f64).ceil() as usize;
    Ok(BlockGeometry {
        in_block_bits: (granules * BLOCK_GRANULE).max(DIGEST_BITS),
        out_block_bits: DIGEST_BITS,
    })
}
