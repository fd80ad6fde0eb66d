//! Equal-frequency binning of real samples into `2^n` symbols.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitSource, BitStream, BitWriter};
use crate::error::{Error, Result};

pub const MAX_BITS: u32 = 16;
/// Minimum samples per bin for a default fit.
pub const MIN_SAMPLES_PER_BIN: usize = 16;
/// Default calibration prefix length used by the pipeline.
pub const DEFAULT_FIT_SIZE: usize = 1_000_000;

const ENCODE_CHUNK: usize = 1 << 16;

/// Frozen quantile edges mapping the real line onto `2^n_bits` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningScheme {
    pub n_bits: u32,
    pub edges: Vec<f64>,
    pub fit_size: usize,
}

impl BinningScheme {
    /// Checks the structural invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        check_bits(self.n_bits)?;
        let expected = (1usize << self.n_bits) - 1;
        if self.edges.len() != expected {
            return Err(Error::Structural(format!(
                "{} edges for {} bits, expected {expected}",
                self.edges.len(),
                self.n_bits
            )));
        }
        if let Some(k) = self.edges.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::DegenerateBins {
                rank: k + 2,
                bins: 1 << self.n_bits,
                value: self.edges[k + 1],
            });
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        1 << self.n_bits
    }

    /// Bin index: the number of edges `<= x`. Ties go to the upper bin;
    /// values beyond the outer edges land in the end bins.
    #[inline]
    pub fn bin(&self, x: f64) -> u16 {
        self.edges.partition_point(|&e| e <= x) as u16
    }

    pub fn symbols(&self, samples: &[f64]) -> Vec<u16> {
        let mut out = vec![0u16; samples.len()];
        out.par_chunks_mut(ENCODE_CHUNK)
            .zip(samples.par_chunks(ENCODE_CHUNK))
            .for_each(|(o, s)| {
                for (o, &x) in o.iter_mut().zip(s) {
                    *o = self.bin(x);
                }
            });
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scheme: Self = serde_json::from_str(text)?;
        scheme.validate()?;
        Ok(scheme)
    }
}

fn check_bits(n_bits: u32) -> Result<()> {
    if !(1..=MAX_BITS).contains(&n_bits) {
        return Err(Error::Config(format!("n_bits must be in 1..={MAX_BITS}, got {n_bits}")));
    }
    Ok(())
}

/// Fits edges requiring at least [`MIN_SAMPLES_PER_BIN`] samples per bin.
pub fn fit_bins(samples: &[f64], n_bits: u32) -> Result<BinningScheme> {
    fit_bins_with_min(samples, n_bits, MIN_SAMPLES_PER_BIN)
}

/// Fits equal-frequency edges at ranks `k/2^n` of the empirical distribution.
pub fn fit_bins_with_min(samples: &[f64], n_bits: u32, min_per_bin: usize) -> Result<BinningScheme> {
    check_bits(n_bits)?;
    let bins = 1usize << n_bits;
    let needed = bins * min_per_bin.max(1);
    if samples.len() < needed {
        return Err(Error::Sizing(format!(
            "{} samples cannot fit {bins} bins (need at least {needed})",
            samples.len()
        )));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::Structural(format!("non-finite sample at index {i}")));
    }
    let mut sorted = samples.to_vec();
    sorted.par_sort_unstable_by(f64::total_cmp);
    fit_sorted(&sorted, n_bits)
}

/// Fit from already sorted samples; lets callers reuse one sort for many bit depths.
pub fn fit_sorted(sorted: &[f64], n_bits: u32) -> Result<BinningScheme> {
    check_bits(n_bits)?;
    let bins = 1usize << n_bits;
    if sorted.len() < bins {
        return Err(Error::Sizing(format!(
            "{} samples cannot fit {bins} bins",
            sorted.len()
        )));
    }
    let last = (sorted.len() - 1) as f64;
    let mut edges = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        // Position (N-1)·k/2^n, linear interpolation between order statistics.
        let h = last * k as f64 / bins as f64;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let edge = if frac == 0.0 || lo + 1 >= sorted.len() {
            sorted[lo]
        } else {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        };
        if let Some(&prev) = edges.last() {
            if !(edge > prev) {
                return Err(Error::DegenerateBins {
                    rank: k,
                    bins,
                    value: edge,
                });
            }
        }
        edges.push(edge);
    }
    Ok(BinningScheme {
        n_bits,
        edges,
        fit_size: sorted.len(),
    })
}

/// Bit-expands symbol indices, most significant bit first.
pub fn symbols_to_bits(symbols: &[u16], n_bits: u32, source: BitSource) -> BitStream {
    // Chunks of 8 symbols end on byte boundaries, so the parallel pieces concatenate cheaply.
    let pieces: Vec<BitStream> = symbols
        .par_chunks(ENCODE_CHUNK)
        .map(|chunk| {
            let mut w = BitWriter::with_capacity(chunk.len() * n_bits as usize);
            for &s in chunk {
                w.push_bits(u64::from(s), n_bits);
            }
            w.finish(source, n_bits)
        })
        .collect();
    let mut w = BitWriter::with_capacity(symbols.len() * n_bits as usize);
    for p in &pieces {
        w.append(p);
    }
    w.finish(source, n_bits)
}

/// Maps samples to their bins and emits each index as `n_bits` bits.
pub fn encode(samples: &[f64], scheme: &BinningScheme, source: BitSource) -> BitStream {
    symbols_to_bits(&scheme.symbols(samples), scheme.n_bits, source)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::entropy::shannon_entropy;
    use crate::waveform::stream_rng;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn median_of_four_points() {
        let s = fit_bins_with_min(&[4.0, 1.0, 3.0, 2.0], 1, 1).unwrap();
        assert_eq!(s.edges, vec![2.5]);
    }

    #[test]
    fn eight_values_three_bits_one_per_bin() {
        let xs: Vec<f64> = (0..8).map(|i| f64::from(i) * 1.5 - 3.0).collect();
        let s = fit_bins_with_min(&xs, 3, 1).unwrap();
        assert_eq!(s.edges.len(), 7);
        let syms = s.symbols(&xs);
        assert_eq!(syms, (0..8).collect::<Vec<u16>>());
    }

    #[test]
    fn normal_median_edge_near_zero() {
        let xs = normals(1_000_000, 1);
        let s = fit_bins(&xs, 8).unwrap();
        assert!(s.edges[127].abs() < 0.005, "{}", s.edges[127]);
    }

    #[test]
    fn encode_examples() {
        let s = BinningScheme {
            n_bits: 1,
            edges: vec![0.0],
            fit_size: 0,
        };
        assert_eq!(encode(&[-1.0, 1.0, 0.0], &s, BitSource::Probe).to_ascii(), "011");
        let s = BinningScheme {
            n_bits: 2,
            edges: vec![-1.0, 0.0, 1.0],
            fit_size: 0,
        };
        assert_eq!(encode(&[0.5], &s, BitSource::Probe).to_ascii(), "10");
        assert_eq!(encode(&[-9.0, 9.0, 1.0], &s, BitSource::Probe).to_ascii(), "001111");
    }

    #[test]
    fn fit_set_occupancy_is_flat() {
        let xs = normals(1_000_003, 2);
        let s = fit_bins(&xs, 8).unwrap();
        let mut counts = vec![0usize; 256];
        for sym in s.symbols(&xs) {
            counts[sym as usize] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{lo}..{hi}");
        let h = shannon_entropy(&s.symbols(&xs), 256).unwrap();
        assert!((h - 8.0).abs() < 1e-3);
    }

    #[test]
    fn sizing_and_degeneracy_errors() {
        assert!(matches!(fit_bins(&[1.0; 100], 8), Err(Error::Sizing(_))));
        let mut xs = vec![0.0; 600];
        xs.extend((0..600).map(f64::from));
        match fit_bins(&xs, 2) {
            Err(Error::DegenerateBins { rank, bins, .. }) => assert_eq!((rank, bins), (2, 4)),
            other => panic!("expected degeneracy, got {other:?}"),
        }
        assert!(matches!(fit_bins(&xs, 0), Err(Error::Config(_))));
        assert!(matches!(fit_bins(&xs, 17), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_validates() {
        let s = fit_bins_with_min(&[1.0, 2.0, 3.0, 4.0], 2, 1).unwrap();
        let back = BinningScheme::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"n_bits":2,"edges":[0.0,0.0,1.0],"fit_size":4}"#;
        assert!(BinningScheme::from_json(bad).is_err());
        let short = r#"{"n_bits":2,"edges":[0.0,1.0],"fit_size":4}"#;
        assert!(matches!(BinningScheme::from_json(short), Err(Error::Structural(_))));
    }

    #[test]
    fn parallel_encode_matches_serial() {
        let xs = normals(300_001, 3);
        let s = fit_bins(&xs, 5).unwrap();
        let fast = encode(&xs, &s, BitSource::Probe);
        let mut w = BitWriter::new();
        for &x in &xs {
            w.push_bits(u64::from(s.bin(x)), 5);
        }
        assert_eq!(fast, w.finish(BitSource::Probe, 5));
        assert_eq!(fast.len(), 5 * xs.len());
    }

    proptest! {
        #[test]
        fn bin_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let s = BinningScheme { n_bits: 3, edges: vec![-3.0, -1.0, -0.5, 0.0, 0.2, 1.0, 4.0], fit_size: 0 };
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.bin(x) <= s.bin(y));
        }
    }
}
