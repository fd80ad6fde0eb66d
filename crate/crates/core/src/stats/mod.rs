//! Correlation diagnostics and a native randomness battery.

mod corr;
pub mod nist;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{Error, Result};

pub use corr::{bit_autocorrelation, cross_correlation, CorrelationProfile, MIN_AUTOCORR_BITS};

pub const ALPHA: f64 = 0.01;
/// Uniformity p-values below this fail.
pub const UNIFORMITY_THRESHOLD: f64 = 1e-4;
pub const MIN_SEQ_LEN: usize = 100_000;
const UNIFORMITY_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub block_frequency_m: usize,
    pub approximate_entropy_m: u32,
    pub serial_m: u32,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            block_frequency_m: 128,
            approximate_entropy_m: 2,
            serial_m: 3,
        }
    }
}

impl BatteryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_frequency_m < 20 {
            return Err(Error::Config("block_frequency_m must be at least 20".into()));
        }
        if !(1..=16).contains(&self.approximate_entropy_m) {
            return Err(Error::Config("approximate_entropy_m must be in 1..=16".into()));
        }
        if !(2..=16).contains(&self.serial_m) {
            return Err(Error::Config("serial_m must be in 2..=16".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_name: String,
    pub p_values: Vec<f64>,
    pub proportion_passed: f64,
    pub uniformity_p: f64,
}

impl TestOutcome {
    pub fn from_p_values(test_name: impl Into<String>, p_values: Vec<f64>) -> Self {
        let k = p_values.len().max(1) as f64;
        let proportion_passed = p_values.iter().filter(|&&p| p >= ALPHA).count() as f64 / k;
        let uniformity_p = uniformity(&p_values);
        Self {
            test_name: test_name.into(),
            p_values,
            proportion_passed,
            uniformity_p,
        }
    }

    /// Three-sigma proportion band and the uniformity threshold.
    pub fn passed(&self) -> bool {
        self.passes(proportion_threshold(self.p_values.len()), UNIFORMITY_THRESHOLD)
    }

    pub fn passes(&self, min_proportion: f64, min_uniformity: f64) -> bool {
        self.proportion_passed >= min_proportion && self.uniformity_p >= min_uniformity
    }
}

/// Lower edge of the band `(1-α) ± 3·sqrt(α(1-α)/k)`.
pub fn proportion_threshold(n_sequences: usize) -> f64 {
    let p = 1.0 - ALPHA;
    p - 3.0 * (p * ALPHA / n_sequences.max(1) as f64).sqrt()
}

/// Chi-square goodness of fit of the p-values against 10 equal bins.
pub fn uniformity(p_values: &[f64]) -> f64 {
    let k = p_values.len();
    if k == 0 {
        return 0.0;
    }
    let mut counts = [0usize; UNIFORMITY_BINS];
    for &p in p_values {
        let bin = ((p * UNIFORMITY_BINS as f64) as usize).min(UNIFORMITY_BINS - 1);
        counts[bin] += 1;
    }
    let expected = k as f64 / UNIFORMITY_BINS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    nist::igamc((UNIFORMITY_BINS - 1) as f64 / 2.0, chi2 / 2.0)
}

/// Test names in report order. CumulativeSums and Serial contribute two rows each.
pub const TEST_NAMES: [&str; 10] = [
    "Frequency",
    "BlockFrequency",
    "CumulativeSums-Forward",
    "CumulativeSums-Reverse",
    "Runs",
    "LongestRun",
    "FFT",
    "ApproximateEntropy",
    "Serial-1",
    "Serial-2",
];

fn sequence_p_values(seq: &BitStream, cfg: &BatteryConfig) -> Result<[f64; 10]> {
    let (s1, s2) = nist::serial(seq, cfg.serial_m)?;
    Ok([
        nist::frequency(seq)?,
        nist::block_frequency(seq, cfg.block_frequency_m)?,
        nist::cumulative_sums(seq, nist::CusumMode::Forward)?,
        nist::cumulative_sums(seq, nist::CusumMode::Reverse)?,
        nist::runs(seq)?,
        nist::longest_run(seq)?,
        nist::spectral(seq)?,
        nist::approximate_entropy(seq, cfg.approximate_entropy_m)?,
        s1,
        s2,
    ])
}

pub fn run_battery(bits: &BitStream, seq_len: usize, n_sequences: usize) -> Result<Vec<TestOutcome>> {
    run_battery_with(bits, seq_len, n_sequences, &BatteryConfig::default())
}

/// Splits the leading `seq_len · n_sequences` bits into sequences and runs every test on each.
pub fn run_battery_with(
    bits: &BitStream,
    seq_len: usize,
    n_sequences: usize,
    cfg: &BatteryConfig,
) -> Result<Vec<TestOutcome>> {
    cfg.validate()?;
    if seq_len < MIN_SEQ_LEN {
        return Err(Error::Config(format!(
            "seq_len must be at least {MIN_SEQ_LEN}, got {seq_len}"
        )));
    }
    if n_sequences == 0 {
        return Err(Error::Config("n_sequences must be positive".into()));
    }
    let needed = seq_len
        .checked_mul(n_sequences)
        .ok_or_else(|| Error::Config("seq_len × n_sequences overflows".into()))?;
    if bits.len() < needed {
        return Err(Error::Config(format!(
            "battery needs {needed} bits ({n_sequences} × {seq_len}), stream has {}",
            bits.len()
        )));
    }
    let per_seq: Vec<[f64; 10]> = (0..n_sequences)
        .into_par_iter()
        .map(|i| sequence_p_values(&bits.slice(i * seq_len, seq_len), cfg))
        .collect::<Result<_>>()?;
    Ok(TEST_NAMES
        .iter()
        .enumerate()
        .map(|(t, name)| TestOutcome::from_p_values(*name, per_seq.iter().map(|ps| ps[t]).collect()))
        .collect())
}

pub fn write_battery_json(outcomes: &[TestOutcome], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(outcomes)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_battery_csv(outcomes: &[TestOutcome], path: &Path) -> Result<()> {
    let mut text = String::from("test,proportion,uniformity_p\n");
    for o in outcomes {
        text.push_str(&format!("{},{},{}\n", o.test_name, o.proportion_passed, o.uniformity_p));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
