use crate::error::{Error, Result};

use super::AcquisitionConfig;

/// Pole of the single-pole IF low-pass, `exp(-2π f_c / f_s)`.
pub fn if_filter_pole(cfg: &AcquisitionConfig) -> Result<f64> {
    if !(cfg.sample_rate > 0.0) {
        return Err(Error::Config(format!(
            "sample_rate must be positive, got {}",
            cfg.sample_rate
        )));
    }
    if !(cfg.if_bandwidth > 0.0) || cfg.if_bandwidth >= cfg.sample_rate / 2.0 {
        return Err(Error::Config(format!(
            "IF bandwidth {} Hz must lie in (0, sample_rate/2 = {} Hz)",
            cfg.if_bandwidth,
            cfg.sample_rate / 2.0
        )));
    }
    Ok((-2.0 * std::f64::consts::PI * cfg.if_bandwidth / cfg.sample_rate).exp())
}

/// `y[i] = a·y[i-1] + (1-a)·x[i]` with `y[-1] = 0`.
pub fn apply_if_filter(samples: &[f64], cfg: &AcquisitionConfig) -> Result<Vec<f64>> {
    let a = if_filter_pole(cfg)?;
    let b = 1.0 - a;
    let mut state = 0.0;
    Ok(samples
        .iter()
        .map(|&x| {
            state = a * state + b * x;
            state
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::waveform::sampler::stream_rng;

    fn cfg() -> AcquisitionConfig {
        AcquisitionConfig {
            sample_rate: 10e6,
            if_bandwidth: 1e6,
            filter_enabled: true,
            ..AcquisitionConfig::default()
        }
    }

    #[test]
    fn zeros_stay_zero() {
        assert!(apply_if_filter(&[0.0; 64], &cfg()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_decays_geometrically() {
        let mut x = vec![0.0; 50];
        x[0] = 1.0;
        let y = apply_if_filter(&x, &cfg()).unwrap();
        let pole = (-2.0 * std::f64::consts::PI * 0.1f64).exp();
        for w in y.windows(2) {
            assert!((w[1] / w[0] - pole).abs() < 1e-12);
        }
        assert!((y[0] - (1.0 - pole)).abs() < 1e-15);
    }

    #[test]
    fn white_noise_gets_ar1_lag_one_correlation() {
        let mut rng = stream_rng(5, 0);
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let y = apply_if_filter(&x, &cfg()).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let lag1 = y.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        let pole = if_filter_pole(&cfg()).unwrap();
        assert!((lag1 / var - pole).abs() < 0.01);
    }

    #[test]
    fn rejects_bandwidth_above_nyquist() {
        let bad = AcquisitionConfig {
            filter_enabled: true,
            ..AcquisitionConfig::default()
        };
        assert!(matches!(apply_if_filter(&[1.0], &bad), Err(Error::Config(_))));
    }
}
