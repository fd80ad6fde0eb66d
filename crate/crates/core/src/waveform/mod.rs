//! Correlated probe/conjugate waveform synthesis and waveform files.
//!
//! Samples are in shot-noise-normalized units: `shot_ref` has unit variance,
//! `elec_ref` has the electronic noise variance, and each signal pair is drawn
//! from the joint covariance given by [`crate::model::covariance_matrix`].
//! Generation runs in fixed chunks of [`CHUNK_LEN`] samples, each with its
//! own RNG stream, so the output does not depend on the worker count.

mod filter;
mod io;
mod sampler;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{covariance_matrix, SqueezeParams};

pub use filter::{apply_if_filter, if_filter_pole};
pub use io::{ingest_waveform, sidecar_path, write_waveform, WaveFormat};
pub use sampler::{stream_rng, BivariateSampler, CHUNK_LEN};

/// Acquisition settings of the emulated spectrum-analyzer capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub n_samples: usize,
    /// Hz. Only used by the IF filter.
    pub sample_rate: f64,
    /// Hz, informational.
    pub analysis_freq: f64,
    /// Hz.
    pub if_bandwidth: f64,
    pub rng_seed: u64,
    pub filter_enabled: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_samples: 1_000_000,
            sample_rate: 1.25e6,
            analysis_freq: 2e6,
            if_bandwidth: 1e6,
            rng_seed: 0,
            filter_enabled: false,
        }
    }
}

impl AcquisitionConfig {
    pub fn new(n_samples: usize, rng_seed: u64) -> Self {
        Self {
            n_samples,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Sizing("n_samples must be at least 1".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.filter_enabled {
            if_filter_pole(self)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Synthesized,
    External,
}

/// Provenance carried alongside the sample arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformMeta {
    pub origin: Origin,
    pub params: Option<SqueezeParams>,
    pub acquisition: Option<AcquisitionConfig>,
    /// Channels already have their sample mean removed.
    #[serde(default)]
    pub dc_removed: bool,
    /// SHA-256 of the file the waveform was read from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_digest: Option<String>,
}

/// Paired probe/conjugate fluctuations plus the two reference channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinWaveform {
    pub probe: Vec<f64>,
    pub conjugate: Vec<f64>,
    pub shot_ref: Vec<f64>,
    pub elec_ref: Vec<f64>,
    pub meta: WaveformMeta,
}

impl TwinWaveform {
    pub fn new(
        probe: Vec<f64>,
        conjugate: Vec<f64>,
        shot_ref: Vec<f64>,
        elec_ref: Vec<f64>,
        meta: WaveformMeta,
    ) -> Result<Self> {
        let n = probe.len();
        for (name, len) in [
            ("conjugate", conjugate.len()),
            ("shot_ref", shot_ref.len()),
            ("elec_ref", elec_ref.len()),
        ] {
            if len != n {
                return Err(Error::Structural(format!(
                    "channel {name} has {len} samples, probe has {n}"
                )));
            }
        }
        Ok(Self {
            probe,
            conjugate,
            shot_ref,
            elec_ref,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.probe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probe.is_empty()
    }

    pub fn channels(&self) -> [&[f64]; 4] {
        [&self.probe, &self.conjugate, &self.shot_ref, &self.elec_ref]
    }

    fn channels_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.probe,
            &mut self.conjugate,
            &mut self.shot_ref,
            &mut self.elec_ref,
        ]
    }

    /// Subtracts each channel's sample mean.
    pub fn remove_dc(&mut self) {
        for ch in self.channels_mut() {
            remove_mean(ch);
        }
        self.meta.dc_removed = true;
    }
}

/// Mean computed chunk-wise in a fixed order so the result is thread-count independent.
pub(crate) fn stable_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let partial: Vec<f64> = xs.par_chunks(CHUNK_LEN).map(|c| c.iter().sum::<f64>()).collect();
    partial.iter().sum::<f64>() / xs.len() as f64
}

fn remove_mean(xs: &mut [f64]) {
    let mean = stable_mean(xs);
    xs.par_iter_mut().for_each(|v| *v -= mean);
}

// RNG stream ids within a chunk.
const STREAM_PAIRS: u64 = 0;
const STREAM_SHOT: u64 = 1;
const STREAM_ELEC: u64 = 2;

/// Draws a twin waveform for the given source and acquisition settings.
pub fn synthesize(p: &SqueezeParams, cfg: &AcquisitionConfig) -> Result<TwinWaveform> {
    cfg.validate()?;
    let model = covariance_matrix(p)?;
    let sampler = BivariateSampler::new(model.cov)?;
    let elec_sd = p.electronic_var.sqrt();
    let n = cfg.n_samples;
    let seed = cfg.rng_seed;

    let mut probe = vec![0.0; n];
    let mut conjugate = vec![0.0; n];
    let mut shot_ref = vec![0.0; n];
    let mut elec_ref = vec![0.0; n];

    probe
        .par_chunks_mut(CHUNK_LEN)
        .zip(conjugate.par_chunks_mut(CHUNK_LEN))
        .zip(shot_ref.par_chunks_mut(CHUNK_LEN))
        .zip(elec_ref.par_chunks_mut(CHUNK_LEN))
        .enumerate()
        .for_each(|(chunk, (((pr, cj), sh), el))| {
            let base = (chunk as u64) << 2;
            sampler.fill(&mut stream_rng(seed, base | STREAM_PAIRS), pr, cj);
            let mut rng = stream_rng(seed, base | STREAM_SHOT);
            sh.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let mut rng = stream_rng(seed, base | STREAM_ELEC);
            el.iter_mut()
                .for_each(|v| *v = elec_sd * rng.sample::<f64, _>(StandardNormal));
        });

    let meta = WaveformMeta {
        origin: Origin::Synthesized,
        params: Some(*p),
        acquisition: Some(*cfg),
        dc_removed: false,
        source_digest: None,
    };
    let mut wave = TwinWaveform::new(probe, conjugate, shot_ref, elec_ref, meta)?;
    if cfg.filter_enabled {
        for ch in wave.channels_mut() {
            *ch = apply_if_filter(ch, cfg)?;
        }
    }
    wave.remove_dc();
    Ok(wave)
}
