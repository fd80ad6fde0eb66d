use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{Error, Result};

pub const MIN_AUTOCORR_BITS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub lags: Vec<i64>,
    pub coefficients: Vec<f64>,
}

impl CorrelationProfile {
    pub fn at(&self, lag: i64) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|i| self.coefficients[i])
    }

    /// Largest |r| over lags other than zero.
    pub fn max_abs_off_zero(&self) -> f64 {
        self.lags
            .iter()
            .zip(&self.coefficients)
            .filter(|(&l, _)| l != 0)
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["lag", "coefficient"]).map_err(|e| csv_err(path, e))?;
        for (l, c) in self.lags.iter().zip(&self.coefficients) {
            w.write_record([l.to_string(), c.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &std::path::Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Pearson coefficient of `a[i]` against `b[i + lag]` over the overlap, for
/// every lag in `-max_lag..=max_lag`.
pub fn cross_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<CorrelationProfile> {
    if a.len() != b.len() {
        return Err(Error::Structural(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n <= 10 * max_lag || n < 2 {
        return Err(Error::Sizing(format!(
            "{n} samples is too short for lags up to {max_lag} (need more than {})",
            (10 * max_lag).max(1)
        )));
    }
    let lags: Vec<i64> = (-(max_lag as i64)..=max_lag as i64).collect();
    let coefficients = lags
        .par_iter()
        .map(|&lag| {
            let k = lag.unsigned_abs() as usize;
            let (xs, ys) = if lag >= 0 {
                (&a[..n - k], &b[k..])
            } else {
                (&a[k..], &b[..n - k])
            };
            pearson(xs, ys).ok_or_else(|| Error::Diagnostic(format!("zero variance over the overlap at lag {lag}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationProfile { lags, coefficients })
}

/// Number of positions in `0..len` where `bits[i] != bits[i + lag]`.
fn mismatches(bits: &BitStream, lag: usize, len: usize) -> u64 {
    let mut total = 0u64;
    let mut pos = 0;
    while pos < len {
        let span = (len - pos).min(64);
        let mask = if span == 64 { !0 } else { !0u64 << (64 - span) };
        total += u64::from(((bits.word_at(pos) ^ bits.word_at(pos + lag)) & mask).count_ones());
        pos += 64;
    }
    total
}

fn ones_in(bits: &BitStream, start: usize, end: usize) -> u64 {
    (start..end).filter(|&i| bits.get(i)).count() as u64
}

/// Autocorrelation of the ±1 image of `bits` at lags `1..=max_lag`.
pub fn bit_autocorrelation(bits: &BitStream, max_lag: usize) -> Result<CorrelationProfile> {
    let n = bits.len();
    if n < MIN_AUTOCORR_BITS || max_lag == 0 || max_lag >= n / 2 {
        return Err(Error::Sizing(format!(
            "bit autocorrelation needs at least {MIN_AUTOCORR_BITS} bits and 0 < max_lag < n/2 (n = {n}, max_lag = {max_lag})"
        )));
    }
    let total = bits.count_ones() as u64;
    if total == 0 || total == n as u64 {
        return Err(Error::Diagnostic("constant bit stream has no autocorrelation".into()));
    }
    let lags: Vec<i64> = (1..=max_lag as i64).collect();
    let coefficients = lags
        .par_iter()
        .map(|&lag| {
            let l = lag as usize;
            let m = n - l;
            let mf = m as f64;
            let ones_head = total - ones_in(bits, m, n);
            let ones_tail = total - ones_in(bits, 0, l);
            let sx = (2.0 * ones_head as f64 - mf) / mf;
            let sy = (2.0 * ones_tail as f64 - mf) / mf;
            let sxy = (mf - 2.0 * mismatches(bits, l, m) as f64) / mf;
            let (vx, vy) = (1.0 - sx * sx, 1.0 - sy * sy);
            if vx <= 0.0 || vy <= 0.0 {
                return Err(Error::Diagnostic(format!("constant overlap at lag {lag}")));
            }
            Ok((sxy - sx * sy) / (vx * vy).sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationProfile { lags, coefficients })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, RngCore};
    use rand_distr::StandardNormal;

    use super::*;
    use crate::bits::BitSource;
    use crate::waveform::stream_rng;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn identical_series_peak_at_zero() {
        let a = normals(10_000, 1);
        let p = cross_correlation(&a, &a, 5).unwrap();
        assert!((p.at(0).unwrap() - 1.0).abs() < 1e-12);
        assert!(p.max_abs_off_zero() < 5.0 / 100.0);
        assert_eq!(p.lags.len(), 11);
    }

    #[test]
    fn shifted_copy_peaks_at_shift() {
        let a = normals(10_000, 2);
        let mut b = vec![0.0; 3];
        b.extend_from_slice(&a[..a.len() - 3]);
        let p = cross_correlation(&a, &b, 10).unwrap();
        assert!((p.at(3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_correlation_errors() {
        let a = normals(100, 3);
        assert!(matches!(cross_correlation(&a, &a, 10), Err(Error::Sizing(_))));
        assert!(matches!(cross_correlation(&a, &a[..99], 1), Err(Error::Structural(_))));
        assert!(matches!(
            cross_correlation(&a, &[1.0; 100], 1),
            Err(Error::Diagnostic(_))
        ));
    }

    #[test]
    fn lag_symmetry() {
        let a = normals(5_000, 4);
        let b = normals(5_000, 5);
        let ab = cross_correlation(&a, &b, 20).unwrap();
        let ba = cross_correlation(&b, &a, 20).unwrap();
        for l in -20..=20 {
            assert!((ab.at(l).unwrap() - ba.at(-l).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_bits_anticorrelate() {
        let s = BitStream::from_bools((0..20_000).map(|i| i % 2 == 1), BitSource::External);
        let p = bit_autocorrelation(&s, 4).unwrap();
        assert!((p.at(1).unwrap() + 1.0).abs() < 1e-12);
        assert!((p.at(2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_bits_are_white() {
        let mut bytes = vec![0u8; 125_000];
        stream_rng(6, 0).fill_bytes(&mut bytes);
        let s = BitStream::from_packed(bytes, 1_000_000, BitSource::External, 1).unwrap();
        let p = bit_autocorrelation(&s, 100).unwrap();
        assert!(p.max_abs_off_zero() < 5e-3, "{}", p.max_abs_off_zero());
        // Word-level count agrees with a direct ±1 Pearson at a few lags.
        let xs: Vec<f64> = s.iter().map(|b| if b { 1.0 } else { -1.0 }).collect();
        for l in [1usize, 37, 64, 100] {
            let direct = pearson(&xs[..xs.len() - l], &xs[l..]).unwrap();
            assert!((direct - p.at(l as i64).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn autocorrelation_errors() {
        let short = BitStream::from_bools((0..9_999).map(|i| i % 3 == 0), BitSource::External);
        assert!(matches!(bit_autocorrelation(&short, 10), Err(Error::Sizing(_))));
        let flat = BitStream::from_bools(std::iter::repeat_n(true, 20_000), BitSource::External);
        assert!(matches!(bit_autocorrelation(&flat, 10), Err(Error::Diagnostic(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn affine_invariance(scale in 0.01f64..100.0, shift in -50.0f64..50.0, seed in 0u64..1000) {
            let a = normals(2_000, seed);
            let b = normals(2_000, seed + 1);
            let a2: Vec<f64> = a.iter().map(|x| x * scale + shift).collect();
            let p = cross_correlation(&a, &b, 5).unwrap();
            let q = cross_correlation(&a2, &b, 5).unwrap();
            for (x, y) in p.coefficients.iter().zip(&q.coefficients) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
