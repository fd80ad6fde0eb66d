//! Single-sequence randomness tests following the SP 800-22 definitions.
//!
//! Every function takes one sequence and returns its p-value(s).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::bits::BitStream;
use crate::error::{Error, Result};

/// Upper regularized incomplete gamma `Q(a, x)`.
pub(crate) fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(a, x).clamp(0.0, 1.0)
}

fn require(bits: &BitStream, min: usize, test: &str) -> Result<usize> {
    let n = bits.len();
    if n < min {
        return Err(Error::Sizing(format!("{test} needs at least {min} bits, got {n}")));
    }
    Ok(n)
}

/// Monobit frequency test.
pub fn frequency(bits: &BitStream) -> Result<f64> {
    let n = require(bits, 1, "Frequency")?;
    let s = 2.0 * bits.count_ones() as f64 - n as f64;
    let s_obs = s.abs() / (n as f64).sqrt();
    Ok(erfc(s_obs / std::f64::consts::SQRT_2))
}

/// Frequency within non-overlapping blocks of `block_len` bits.
pub fn block_frequency(bits: &BitStream, block_len: usize) -> Result<f64> {
    let n = require(bits, block_len.max(1), "BlockFrequency")?;
    let blocks = n / block_len;
    let bytes_aligned = block_len.is_multiple_of(8);
    let chi2: f64 = (0..blocks)
        .map(|b| {
            let ones = if bytes_aligned {
                bits.as_bytes()[b * block_len / 8..(b + 1) * block_len / 8]
                    .iter()
                    .map(|x| x.count_ones() as usize)
                    .sum::<usize>()
            } else {
                (b * block_len..(b + 1) * block_len).filter(|&i| bits.get(i)).count()
            };
            let pi = ones as f64 / block_len as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * block_len as f64;
    Ok(igamc(blocks as f64 / 2.0, chi2 / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CusumMode {
    Forward,
    Reverse,
}

/// Maximal excursion of the ±1 random walk.
pub fn cumulative_sums(bits: &BitStream, mode: CusumMode) -> Result<f64> {
    let n = require(bits, 1, "CumulativeSums")?;
    let mut sum = 0i64;
    let mut z = 0i64;
    let step = |b: bool| if b { 1 } else { -1 };
    match mode {
        CusumMode::Forward => {
            for b in bits.iter() {
                sum += step(b);
                z = z.max(sum.abs());
            }
        }
        CusumMode::Reverse => {
            for i in (0..n).rev() {
                sum += step(bits.get(i));
                z = z.max(sum.abs());
            }
        }
    }
    let n = n as i64;
    let normal = Normal::standard();
    let phi = |x: f64| normal.cdf(x);
    let zf = z as f64;
    let sqrt_n = (n as f64).sqrt();
    let mut p = 1.0;
    let mut k = (-n / z + 1) / 4;
    while k <= (n / z - 1) / 4 {
        let kf = k as f64;
        p -= phi((4.0 * kf + 1.0) * zf / sqrt_n) - phi((4.0 * kf - 1.0) * zf / sqrt_n);
        k += 1;
    }
    let mut k = (-n / z - 3) / 4;
    while k <= (n / z - 1) / 4 {
        let kf = k as f64;
        p += phi((4.0 * kf + 3.0) * zf / sqrt_n) - phi((4.0 * kf + 1.0) * zf / sqrt_n);
        k += 1;
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Number of runs of identical bits.
pub fn runs(bits: &BitStream) -> Result<f64> {
    let n = require(bits, 2, "Runs")?;
    let nf = n as f64;
    let pi = bits.count_ones() as f64 / nf;
    if (pi - 0.5).abs() >= 2.0 / nf.sqrt() {
        // Frequency prerequisite failed.
        return Ok(0.0);
    }
    let mut transitions = 0u64;
    let mut pos = 0;
    while pos + 1 < n {
        let span = (n - 1 - pos).min(64);
        let x = bits.word_at(pos) ^ bits.word_at(pos + 1);
        let mask = if span == 64 { !0 } else { !0u64 << (64 - span) };
        transitions += u64::from((x & mask).count_ones());
        pos += 64;
    }
    let v_obs = transitions as f64 + 1.0;
    let num = (v_obs - 2.0 * nf * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * nf).sqrt() * pi * (1.0 - pi);
    Ok(erfc(num / den))
}

/// Longest run of ones within blocks; block size follows the sequence length.
pub fn longest_run(bits: &BitStream) -> Result<f64> {
    let n = require(bits, 128, "LongestRun")?;
    let (m, lo, probs): (usize, usize, &[f64]) = if n < 6272 {
        (8, 1, &[0.21484375, 0.3671875, 0.23046875, 0.1875])
    } else if n < 750_000 {
        (
            128,
            4,
            &[
                0.1174035788,
                0.242955959,
                0.249363483,
                0.17517706,
                0.102701071,
                0.112398847,
            ],
        )
    } else {
        (10_000, 10, &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    };
    let classes = probs.len();
    let blocks = n / m;
    let mut nu = vec![0u64; classes];
    for b in 0..blocks {
        let (mut run, mut best) = (0usize, 0usize);
        for i in b * m..(b + 1) * m {
            if bits.get(i) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        let class = best.clamp(lo, lo + classes - 1) - lo;
        nu[class] += 1;
    }
    let nb = blocks as f64;
    let chi2: f64 = nu
        .iter()
        .zip(probs)
        .map(|(&v, &p)| (v as f64 - nb * p).powi(2) / (nb * p))
        .sum();
    Ok(igamc((classes - 1) as f64 / 2.0, chi2 / 2.0))
}

/// Discrete Fourier transform peak-count test.
pub fn spectral(bits: &BitStream) -> Result<f64> {
    let n = require(bits, 2, "FFT")?;
    let mut buf: Vec<Complex<f64>> = bits
        .iter()
        .map(|b| Complex::new(if b { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    let threshold = ((1.0f64 / 0.05).ln() * nf).sqrt();
    let n0 = 0.95 * nf / 2.0;
    let n1 = buf[..n / 2].iter().filter(|c| c.norm() < threshold).count() as f64;
    let d = (n1 - n0) / (nf * 0.95 * 0.05 / 4.0).sqrt();
    Ok(erfc(d.abs() / std::f64::consts::SQRT_2))
}

/// Counts of every overlapping `width`-bit pattern with wrap-around.
fn pattern_counts(bits: &BitStream, width: u32) -> Vec<u64> {
    let n = bits.len();
    let mut counts = vec![0u64; 1 << width];
    let mask = (1usize << width) - 1;
    let mut window = 0usize;
    for i in 0..width as usize - 1 {
        window = (window << 1) | usize::from(bits.get(i % n));
    }
    for i in 0..n {
        window = ((window << 1) | usize::from(bits.get((i + width as usize - 1) % n))) & mask;
        counts[window] += 1;
    }
    counts
}

/// Counts for a shorter pattern width derived from the widest counts.
fn fold_counts(counts: &[u64], from: u32, to: u32) -> Vec<u64> {
    let mut out = vec![0u64; 1 << to];
    for (p, &c) in counts.iter().enumerate() {
        out[p >> (from - to)] += c;
    }
    out
}

/// Approximate entropy with template length `m`.
pub fn approximate_entropy(bits: &BitStream, m: u32) -> Result<f64> {
    let n = require(bits, m as usize + 1, "ApproximateEntropy")?;
    let wide = pattern_counts(bits, m + 1);
    let narrow = fold_counts(&wide, m + 1, m);
    let nf = n as f64;
    let phi = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                p * p.ln()
            })
            .sum()
    };
    let ap_en = phi(&narrow) - phi(&wide);
    let chi2 = 2.0 * nf * (std::f64::consts::LN_2 - ap_en);
    Ok(igamc(f64::from(1u32 << (m - 1)), chi2 / 2.0))
}

/// Serial test with pattern length `m`; returns both p-values.
pub fn serial(bits: &BitStream, m: u32) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::Config("serial test needs m >= 2".into()));
    }
    let n = require(bits, 1 << m, "Serial")?;
    let nf = n as f64;
    let wide = pattern_counts(bits, m);
    let psi = |width: u32| -> f64 {
        if width == 0 {
            return 0.0;
        }
        let counts = fold_counts(&wide, m, width);
        let sum: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
        sum * f64::from(1u32 << width) / nf - nf
    };
    let (p_m, p_m1, p_m2) = (psi(m), psi(m - 1), psi(m - 2));
    let del1 = p_m - p_m1;
    let del2 = p_m - 2.0 * p_m1 + p_m2;
    Ok((
        igamc(f64::from(1u32 << (m - 1)) / 2.0, del1 / 2.0),
        igamc(f64::from(1u32 << (m - 2)) / 2.0, del2 / 2.0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitSource;

    fn bits(s: &str) -> BitStream {
        BitStream::from_ascii(s, BitSource::External).unwrap()
    }

    // Published SP 800-22 worked examples.
    const EPS_100: &str =
        "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";

    #[test]
    fn frequency_examples() {
        let p = frequency(&bits("1011010101")).unwrap();
        assert!((p - 0.527089).abs() < 1e-6);
        // S = 2 over ten bits.
        let p = frequency(&bits("1101101001")).unwrap();
        assert!((p - erfc(2.0 / 20f64.sqrt())).abs() < 1e-15);
        assert!((p - 0.527).abs() < 5e-4);
        assert!((frequency(&bits(EPS_100)).unwrap() - 0.109599).abs() < 1e-6);
    }

    #[test]
    fn block_frequency_example() {
        let p = block_frequency(&bits("0110011010"), 3).unwrap();
        assert!((p - 0.801252).abs() < 1e-6);
        let p = block_frequency(&bits(EPS_100), 10).unwrap();
        assert!((p - 0.706438).abs() < 1e-6);
    }

    #[test]
    fn cusum_example() {
        let p = cumulative_sums(&bits("1011010111"), CusumMode::Forward).unwrap();
        assert!((p - 0.4116588).abs() < 1e-6);
        let f = cumulative_sums(&bits(EPS_100), CusumMode::Forward).unwrap();
        let r = cumulative_sums(&bits(EPS_100), CusumMode::Reverse).unwrap();
        assert!((f - 0.219194).abs() < 1e-6);
        assert!((r - 0.114866).abs() < 1e-6);
    }

    #[test]
    fn runs_example() {
        assert!((runs(&bits("1001101011")).unwrap() - 0.147232).abs() < 1e-6);
        assert!((runs(&bits(EPS_100)).unwrap() - 0.500798).abs() < 1e-6);
    }

    #[test]
    fn longest_run_example() {
        let eps = "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";
        let p = longest_run(&bits(eps)).unwrap();
        assert!((p - 0.180609).abs() < 1e-6, "{p}");
    }

    #[test]
    fn spectral_example() {
        // Values from a numpy FFT of the same inputs; the worked examples in
        // the SP 800-22 text predate its current threshold and disagree.
        let p = spectral(&bits("1001010011")).unwrap();
        assert!((p - 0.468160).abs() < 1e-6, "{p}");
        let p = spectral(&bits(EPS_100)).unwrap();
        assert!((p - 0.646355).abs() < 1e-6, "{p}");
    }

    #[test]
    fn approximate_entropy_example() {
        let p = approximate_entropy(&bits("0100110101"), 3).unwrap();
        assert!((p - 0.261961).abs() < 1e-6, "{p}");
        let p = approximate_entropy(&bits(EPS_100), 2).unwrap();
        assert!((p - 0.235301).abs() < 1e-6, "{p}");
    }

    #[test]
    fn serial_example() {
        let (p1, p2) = serial(&bits("0011011101"), 3).unwrap();
        assert!((p1 - 0.808792).abs() < 1e-6, "{p1}");
        assert!((p2 - 0.670320).abs() < 1e-6, "{p2}");
    }

    #[test]
    fn degenerate_inputs() {
        let zeros = BitStream::from_packed(vec![0; 12_500], 100_000, BitSource::External, 1).unwrap();
        assert!(frequency(&zeros).unwrap() < 1e-10);
        assert_eq!(runs(&zeros).unwrap(), 0.0);
        assert!(longest_run(&bits("1010")).is_err());
    }
}
