//! Plug-in Shannon entropy and effective (quantum-attributable) entropy.
//!
//! The effective entropy of a channel is the symbol entropy of the signal
//! minus the symbol entropy of the classical (electronic) noise, both
//! measured with the same bin edges.

use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{fit_sorted, BinningScheme, MIN_SAMPLES_PER_BIN};

/// Which sample set the bin edges are fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    /// Edges from the signal; classical noise is binned on the signal's grid.
    #[default]
    Signal,
    /// Each set gets its own equal-frequency edges.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub n_bits: u32,
    pub h_signal: f64,
    pub h_classical: f64,
    pub h_effective: f64,
    pub sample_count: usize,
}

/// Empirical-frequency entropy in bits per symbol.
pub fn shannon_entropy(symbols: &[u16], alphabet_size: usize) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::Sizing("entropy of an empty symbol stream".into()));
    }
    let counts = histogram(symbols, alphabet_size)?;
    Ok(entropy_from_counts(&counts))
}

pub fn histogram(symbols: &[u16], alphabet_size: usize) -> Result<Vec<u64>> {
    let counts = symbols
        .par_chunks(1 << 16)
        .map(|chunk| {
            let mut c = vec![0u64; alphabet_size];
            for &s in chunk {
                if let Some(slot) = c.get_mut(s as usize) {
                    *slot += 1;
                } else {
                    return Err(s);
                }
            }
            Ok(c)
        })
        .try_reduce(
            || vec![0u64; alphabet_size],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )
        .map_err(|s| Error::Structural(format!("symbol {s} outside alphabet of size {alphabet_size}")))?;
    Ok(counts)
}

pub fn entropy_from_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // Single-symbol streams give -0.0.
    h.max(0.0)
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::Structural(format!("non-finite sample at index {i}")));
    }
    let mut v = samples.to_vec();
    v.par_sort_unstable_by(f64::total_cmp);
    Ok(v)
}

fn check_sets(signal: &[f64], classical: &[f64]) -> Result<()> {
    if signal.is_empty() || classical.is_empty() {
        return Err(Error::Sizing(
            "effective entropy needs non-empty signal and classical sets".into(),
        ));
    }
    if signal.len() != classical.len() {
        warn!(
            "signal ({}) and classical ({}) sample counts differ",
            signal.len(),
            classical.len()
        );
    }
    Ok(())
}

fn fit_checked(sorted: &[f64], n_bits: u32) -> Result<BinningScheme> {
    let needed = (1usize << n_bits.min(crate::extract::MAX_BITS)) * MIN_SAMPLES_PER_BIN;
    if sorted.len() < needed {
        return Err(Error::Sizing(format!(
            "{} samples cannot fit {} bins (need at least {needed})",
            sorted.len(),
            1usize << n_bits.min(crate::extract::MAX_BITS)
        )));
    }
    fit_sorted(sorted, n_bits)
}

struct Prepared {
    signal_sorted: Vec<f64>,
    classical_sorted: Option<Vec<f64>>,
}

fn report_for(
    signal: &[f64],
    classical: &[f64],
    prepared: &Prepared,
    n_bits: u32,
    edges: EdgeSource,
) -> Result<EntropyReport> {
    let bins = 1usize << n_bits;
    let scheme = fit_checked(&prepared.signal_sorted, n_bits)?;
    let h_signal = shannon_entropy(&scheme.symbols(signal), bins)?;
    let classical_scheme = match (edges, &prepared.classical_sorted) {
        (EdgeSource::Classical, Some(sorted)) => match fit_sorted(sorted, n_bits) {
            Ok(s) => s,
            // Noise with fewer distinct levels than bins: fall back to the signal grid.
            Err(Error::DegenerateBins { .. }) => scheme.clone(),
            Err(e) => return Err(e),
        },
        _ => scheme.clone(),
    };
    let h_classical = shannon_entropy(&classical_scheme.symbols(classical), bins)?;
    let mut h_effective = h_signal - h_classical;
    if h_effective < 0.0 {
        warn!("negative effective entropy {h_effective:.4} at {n_bits} bits clipped to 0");
        h_effective = 0.0;
    }
    Ok(EntropyReport {
        n_bits,
        h_signal,
        h_classical,
        h_effective,
        sample_count: signal.len(),
    })
}

/// Entropy of the signal and of the classical noise on signal-fitted edges.
pub fn effective_entropy(signal: &[f64], classical: &[f64], n_bits: u32) -> Result<EntropyReport> {
    effective_entropy_with(signal, classical, n_bits, EdgeSource::Signal)
}

pub fn effective_entropy_with(
    signal: &[f64],
    classical: &[f64],
    n_bits: u32,
    edges: EdgeSource,
) -> Result<EntropyReport> {
    Ok(entropy_curve_with(signal, classical, &[n_bits], edges)?.remove(0))
}

/// One report per requested bit depth, sharing a single sort of each set.
pub fn entropy_curve(signal: &[f64], classical: &[f64], n_bits_range: &[u32]) -> Result<Vec<EntropyReport>> {
    entropy_curve_with(signal, classical, n_bits_range, EdgeSource::Signal)
}

pub fn entropy_curve_with(
    signal: &[f64],
    classical: &[f64],
    n_bits_range: &[u32],
    edges: EdgeSource,
) -> Result<Vec<EntropyReport>> {
    check_sets(signal, classical)?;
    if let Some(&n) = n_bits_range.iter().find(|&&n| !(1..=12).contains(&n)) {
        return Err(Error::Config(format!("entropy curve bit depth {n} outside 1..=12")));
    }
    let prepared = Prepared {
        signal_sorted: sorted_copy(signal)?,
        classical_sorted: match edges {
            EdgeSource::Classical => Some(sorted_copy(classical)?),
            EdgeSource::Signal => None,
        },
    };
    n_bits_range
        .iter()
        .map(|&n| report_for(signal, classical, &prepared, n, edges))
        .collect()
}

/// Writes `n_bits,h_signal,h_classical,h_effective,sample_count` rows.
pub fn write_curve_csv(reports: &[EntropyReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "n_bits,h_signal,h_classical,h_effective,sample_count").unwrap();
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n_bits, r.h_signal, r.h_classical, r.h_effective, r.sample_count
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
