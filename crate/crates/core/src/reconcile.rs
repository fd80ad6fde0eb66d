//! Common-bit post-selection between the probe and conjugate bit streams.
//!
//! Both parties keep the positions where their streams agree. The mask of
//! kept positions is what gets exchanged; each side applies it to its own
//! stream and obtains the same string. No leakage accounting is done here.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bits::{BitSource, BitStream, BitWriter};
use crate::error::{Error, Result};
use crate::waveform::{stream_rng, BivariateSampler, CHUNK_LEN};

/// Bits per parallel work unit; a multiple of 64 so chunks stay word-aligned.
const WORK_BITS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Keep every bit position where the two streams agree.
    #[default]
    Bit,
    /// Keep whole samples whose symbols agree in every bit.
    Symbol,
}

/// Kept positions as a bitmap over the input streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    map: BitStream,
    kept: usize,
}

impl Mask {
    pub fn from_positions(positions: &[u64], len: usize) -> Result<Self> {
        let mut bytes = vec![0u8; len.div_ceil(8)];
        let mut prev: Option<u64> = None;
        for &p in positions {
            if prev.is_some_and(|q| q >= p) {
                return Err(Error::Structural(format!(
                    "mask indices not strictly increasing at {p}"
                )));
            }
            if p as usize >= len {
                return Err(Error::Structural(format!("mask index {p} beyond stream length {len}")));
            }
            bytes[p as usize / 8] |= 0x80 >> (p % 8);
            prev = Some(p);
        }
        Ok(Self {
            map: BitStream::from_packed(bytes, len, BitSource::External, 1)?,
            kept: positions.len(),
        })
    }

    /// Length of the streams this mask applies to.
    pub fn stream_len(&self) -> usize {
        self.map.len()
    }

    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn contains(&self, index: usize) -> bool {
        self.map.get(index)
    }

    /// Kept indices in increasing order.
    pub fn positions(&self) -> impl Iterator<Item = u64> + '_ {
        let words = self.map.len().div_ceil(64);
        (0..words).flat_map(move |w| {
            let mut word = self.map.word_at(w * 64);
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let lz = word.leading_zeros();
                word &= !(1u64 << (63 - lz));
                Some((w * 64) as u64 + u64::from(lz))
            })
        })
    }

    /// Selects the masked positions of `stream`.
    pub fn apply(&self, stream: &BitStream) -> Result<BitStream> {
        if stream.len() != self.map.len() {
            return Err(Error::Structural(format!(
                "mask covers {} bits, stream has {}",
                self.map.len(),
                stream.len()
            )));
        }
        Ok(compact(stream, &self.map, self.kept).with_source(BitSource::Reconciled))
    }

    /// Writes the kept indices as little-endian u64 values, ascending.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        let mut buf = Vec::with_capacity(8 * 4096);
        let mut positions = self.positions().peekable();
        while positions.peek().is_some() {
            buf.clear();
            for p in positions.by_ref().take(4096) {
                buf.extend_from_slice(&p.to_le_bytes());
            }
            out.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads an index file written by [`Mask::write`] for streams of `len` bits.
    pub fn read(path: &Path, len: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut raw = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(path, e))?;
        if raw.len() % 8 != 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: format!("byte {}", raw.len() / 8 * 8),
                message: "trailing partial index".into(),
            });
        }
        let positions: Vec<u64> = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_positions(&positions, len)
    }
}

/// Outcome of common-bit selection.
#[derive(Debug, Clone)]
pub struct Reconciled {
    pub kept: BitStream,
    pub mask: Mask,
    pub agreement_rate: f64,
}

/// Appends the bits of `word` (MSB-first) selected by `select`.
#[inline]
fn push_selected(w: &mut BitWriter, word: u64, mut select: u64) {
    let mut consumed = 0u32;
    while select != 0 {
        let skip = select.leading_zeros();
        select <<= skip;
        consumed += skip;
        let run = (!select).leading_zeros();
        let bits = (word << consumed) >> (64 - run);
        w.push_word(bits, run);
        consumed += run;
        select = if run == 64 { 0 } else { select << run };
    }
}

fn compact(stream: &BitStream, select: &BitStream, kept_hint: usize) -> BitStream {
    let len = stream.len();
    let pieces: Vec<BitStream> = (0..len.div_ceil(WORK_BITS))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * WORK_BITS;
            let end = (start + WORK_BITS).min(len);
            let mut w = BitWriter::with_capacity((end - start) * 3 / 4);
            let mut pos = start;
            while pos < end {
                let n = (end - pos).min(64);
                let tail = if n == 64 { !0 } else { !0u64 << (64 - n) };
                push_selected(&mut w, stream.word_at(pos), select.word_at(pos) & tail);
                pos += 64;
            }
            w.finish(stream.source(), 1)
        })
        .collect();
    let mut w = BitWriter::with_capacity(kept_hint);
    for p in &pieces {
        w.append(p);
    }
    w.finish(stream.source(), 1)
}

fn check_pair(a: &BitStream, b: &BitStream) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Structural(format!(
            "cannot reconcile streams of {} and {} bits",
            a.len(),
            b.len()
        )));
    }
    if a.bits_per_sample() != b.bits_per_sample() {
        return Err(Error::Structural(format!(
            "streams use {} and {} bits per sample",
            a.bits_per_sample(),
            b.bits_per_sample()
        )));
    }
    Ok(())
}

/// Agreement bitmap: 1 where `a` and `b` agree.
fn agreement_map(a: &BitStream, b: &BitStream, granularity: Granularity) -> BitStream {
    let len = a.len();
    let mut bytes: Vec<u8> = a
        .as_bytes()
        .par_iter()
        .zip(b.as_bytes().par_iter())
        .map(|(x, y)| !(x ^ y))
        .collect();
    if granularity == Granularity::Symbol {
        let width = a.bits_per_sample().max(1) as usize;
        let map = BitStream::from_packed(bytes, len, BitSource::External, 1).unwrap();
        let mut w = BitWriter::with_capacity(len);
        let full = (1u64 << width) - 1;
        for s in 0..len / width {
            let start = s * width;
            let chunk = map.word_at(start) >> (64 - width);
            w.push_bits(if chunk == full { full } else { 0 }, width as u32);
        }
        w.push_bits(0, (len % width) as u32);
        return w.finish(BitSource::External, 1);
    }
    if !len.is_multiple_of(8) {
        let last = bytes.len() - 1;
        bytes[last] &= 0xFFu8 << (8 - len % 8);
    }
    BitStream::from_packed(bytes, len, BitSource::External, 1).unwrap()
}

/// Keeps `a[i]` wherever `a[i] == b[i]`.
pub fn common_bits(a: &BitStream, b: &BitStream) -> Result<Reconciled> {
    common_bits_with(a, b, Granularity::Bit)
}

pub fn common_bits_with(a: &BitStream, b: &BitStream, granularity: Granularity) -> Result<Reconciled> {
    check_pair(a, b)?;
    if granularity == Granularity::Symbol && a.bits_per_sample() > 56 {
        return Err(Error::Config(
            "symbol granularity supports at most 56 bits per sample".into(),
        ));
    }
    let map = agreement_map(a, b, granularity);
    let kept_count = map.count_ones();
    let kept = compact(a, &map, kept_count).with_source(BitSource::Reconciled);
    let agreement_rate = if a.is_empty() {
        0.0
    } else {
        kept_count as f64 / a.len() as f64
    };
    Ok(Reconciled {
        kept,
        mask: Mask { map, kept: kept_count },
        agreement_rate,
    })
}

/// Monte-Carlo per-bit agreement of two `rho`-correlated standard normals,
/// each binned into `2^n_bits` equal-probability intervals and bit-expanded.
pub fn expected_agreement(rho: f64, n_bits: u32, n_pairs: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("correlation must lie in [0, 1], got {rho}")));
    }
    if !(1..=16).contains(&n_bits) || n_pairs == 0 {
        return Err(Error::Config("need 1..=16 bits and at least one pair".into()));
    }
    let bins = 1usize << n_bits;
    let normal = Normal::standard();
    let edges: Vec<f64> = (1..bins).map(|k| normal.inverse_cdf(k as f64 / bins as f64)).collect();
    let bin = |x: f64| edges.partition_point(|&e| e <= x) as u32;
    let sampler = BivariateSampler::new([[1.0, rho], [rho, 1.0]])?;
    let disagreements: u64 = (0..n_pairs.div_ceil(CHUNK_LEN))
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream_rng(seed, chunk as u64);
            let count = CHUNK_LEN.min(n_pairs - chunk * CHUNK_LEN);
            (0..count)
                .map(|_| {
                    let (x, y) = sampler.sample(&mut rng);
                    u64::from((bin(x) ^ bin(y)).count_ones())
                })
                .sum::<u64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let total = n_pairs as f64 * f64::from(n_bits);
    Ok(1.0 - disagreements as f64 / total)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn bits(s: &str) -> BitStream {
        BitStream::from_ascii(s, BitSource::Probe).unwrap()
    }

    #[test]
    fn identical_streams_keep_everything() {
        let a = bits("1011001110");
        let r = common_bits(&a, &a).unwrap();
        assert_eq!(r.kept.to_ascii(), a.to_ascii());
        assert_eq!(r.agreement_rate, 1.0);
    }

    #[test]
    fn complementary_streams_keep_nothing() {
        let r = common_bits(&bits("10110"), &bits("01001")).unwrap();
        assert!(r.kept.is_empty());
        assert_eq!(r.agreement_rate, 0.0);
        assert_eq!(r.mask.positions().count(), 0);
    }

    #[test]
    fn hand_enumerated_example() {
        let a = bits("10110");
        let b = bits("10011");
        let r = common_bits(&a, &b).unwrap();
        assert_eq!(r.kept.to_ascii(), "101");
        assert_eq!(r.mask.positions().collect::<Vec<_>>(), vec![0, 1, 3]);
        assert!((r.agreement_rate - 0.6).abs() < 1e-12);
        assert_eq!(r.mask.apply(&b).unwrap().to_ascii(), "101");
        assert_eq!(r.kept.source(), BitSource::Reconciled);
    }

    #[test]
    fn symbol_granularity_keeps_whole_samples() {
        let mut w = BitWriter::new();
        for s in [0b1010u64, 0b1111, 0b0001] {
            w.push_bits(s, 4);
        }
        let a = w.finish(BitSource::Probe, 4);
        let mut w = BitWriter::new();
        for s in [0b1010u64, 0b1110, 0b0001] {
            w.push_bits(s, 4);
        }
        let b = w.finish(BitSource::Conjugate, 4);
        let bitwise = common_bits(&a, &b).unwrap();
        assert_eq!(bitwise.kept.len(), 11);
        let symbolic = common_bits_with(&a, &b, Granularity::Symbol).unwrap();
        assert_eq!(symbolic.kept.to_ascii(), "10100001");
        assert_eq!(symbolic.mask.apply(&b).unwrap(), symbolic.kept);
    }

    #[test]
    fn mismatched_streams_rejected() {
        assert!(matches!(
            common_bits(&bits("101"), &bits("10")),
            Err(Error::Structural(_))
        ));
        let a = BitStream::from_packed(vec![0], 8, BitSource::Probe, 8).unwrap();
        let b = BitStream::from_packed(vec![0], 8, BitSource::Probe, 4).unwrap();
        assert!(common_bits(&a, &b).is_err());
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = BitStream::from_bools((0..1000).map(|i| i % 7 < 3), BitSource::Probe);
        let b = BitStream::from_bools((0..1000).map(|i| i % 5 < 2), BitSource::Conjugate);
        let r = common_bits(&a, &b).unwrap();
        let path = dir.path().join("mask.bin");
        r.mask.write(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * r.mask.kept() as u64);
        let back = Mask::read(&path, 1000).unwrap();
        assert_eq!(back, r.mask);
        assert_eq!(back.apply(&b).unwrap(), r.kept);
        assert!(Mask::from_positions(&[3, 2], 10).is_err());
        assert!(Mask::from_positions(&[10], 10).is_err());
    }

    #[test]
    fn agreement_of_independent_streams_is_half() {
        let e = expected_agreement(0.0, 8, 200_000, 1).unwrap();
        // 1.6e6 bit comparisons: standard error ~4e-4.
        assert!((e - 0.5).abs() < 0.002, "{e}");
    }

    #[test]
    fn agreement_tends_to_one() {
        assert_eq!(expected_agreement(1.0, 8, 10_000, 2).unwrap(), 1.0);
        assert!(expected_agreement(0.999_999, 8, 100_000, 3).unwrap() > 0.95);
    }

    #[test]
    fn agreement_at_twin_beam_correlation() {
        // Reference 0.605088 from numerical quadrature over the bivariate normal.
        let e = expected_agreement(0.957, 8, 1_000_000, 4).unwrap();
        assert!((e - 0.605088).abs() < 0.0015, "{e}");
        let one_bit = expected_agreement(0.957, 1, 1_000_000, 5).unwrap();
        // P(same sign) = 1 - arccos(ρ)/π.
        let exact = 1.0 - 0.957f64.acos() / std::f64::consts::PI;
        assert!((one_bit - exact).abs() < 0.0015, "{one_bit} vs {exact}");
    }

    #[test]
    fn agreement_non_decreasing_in_rho() {
        let rhos = [0.0, 0.3, 0.6, 0.8, 0.9, 0.957, 0.99];
        let vals: Vec<f64> = rhos
            .iter()
            .map(|&r| expected_agreement(r, 8, 200_000, 6).unwrap())
            .collect();
        for w in vals.windows(2) {
            // MC resolution ~1e-3.
            assert!(w[1] >= w[0] - 2e-3, "{vals:?}");
        }
    }

    proptest! {
        #[test]
        fn reconciliation_invariants(a in prop::collection::vec(any::<bool>(), 0..600), flips in prop::collection::vec(any::<bool>(), 0..600)) {
            let b_bits: Vec<bool> = a.iter().zip(flips.iter().chain(std::iter::repeat(&false))).map(|(x, f)| x ^ f).collect();
            let a = BitStream::from_bools(a, BitSource::Probe);
            let b = BitStream::from_bools(b_bits, BitSource::Conjugate);
            let ab = common_bits(&a, &b).unwrap();
            let ba = common_bits(&b, &a).unwrap();
            prop_assert_eq!(ab.kept.as_bytes(), ba.kept.as_bytes());
            let applied = ab.mask.apply(&b).unwrap();
            prop_assert_eq!(applied.as_bytes(), ab.kept.as_bytes());
            let again = common_bits(&ab.kept, &ab.kept).unwrap();
            if !ab.kept.is_empty() {
                prop_assert_eq!(again.agreement_rate, 1.0);
            }
            // Reference: position-by-position selection.
            let expected: Vec<bool> = a.iter().zip(b.iter()).filter(|(x, y)| x == y).map(|(x, _)| x).collect();
            prop_assert!(ab.kept.iter().eq(expected.into_iter()));
            let pos: Vec<u64> = ab.mask.positions().collect();
            let expected_pos: Vec<u64> = a.iter().zip(b.iter()).enumerate().filter(|(_, (x, y))| x == y).map(|(i, _)| i as u64).collect();
            prop_assert_eq!(pos, expected_pos);
        }
    }
}
