//! End-to-end run: synthesis or ingest, extraction, entropy, reconciliation,
//! conditioning and testing, with every intermediate persisted.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::bits::{BitSource, BitStream};
use crate::condition::{choose_ratio, condition, BlockGeometry};
use crate::entropy::{entropy_curve_with, histogram, write_curve_csv, EdgeSource, EntropyReport};
use crate::error::{Error, Result};
use crate::extract::{encode, fit_bins, BinningScheme, DEFAULT_FIT_SIZE};
use crate::model::SqueezeParams;
use crate::reconcile::{common_bits_with, Granularity};
use crate::stats::{
    bit_autocorrelation, cross_correlation, run_battery_with, write_battery_csv, write_battery_json, BatteryConfig,
    CorrelationProfile, TestOutcome, MIN_AUTOCORR_BITS,
};
use crate::waveform::{ingest_waveform, synthesize, write_waveform, AcquisitionConfig, TwinWaveform, WaveFormat};

pub const SCHEMA_VERSION: u32 = 1;
/// Name of the marker left in the output directory when a run aborts.
pub const STALE_MARKER: &str = "STALE";

/// Source defaults for pipeline runs: the electronic noise sets the classical
/// histogram width, the excess noise brings the combined classical variance
/// to 0.53 so the twin correlation stays near 0.957.
pub fn default_squeeze() -> SqueezeParams {
    SqueezeParams::default().with_classical_noise(0.0036, 0.5264)
}

fn default_acquisition() -> AcquisitionConfig {
    AcquisitionConfig::new(10_000_000, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub format: WaveFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSettings {
    pub n_bits: u32,
    /// Leading samples of each channel used to fit the bin edges.
    pub fit_size: usize,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            n_bits: 8,
            fit_size: DEFAULT_FIT_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySettings {
    pub edges: EdgeSource,
    pub curve_bits: Vec<u32>,
}

impl Default for EntropySettings {
    fn default() -> Self {
        Self {
            edges: EdgeSource::Signal,
            curve_bits: (1..=12).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Conditioning {
    Fixed {
        in_block_bits: usize,
        out_block_bits: usize,
    },
    Auto {
        safety: f64,
    },
}

impl Default for Conditioning {
    fn default() -> Self {
        let g = BlockGeometry::STANDARD;
        Conditioning::Fixed {
            in_block_bits: g.in_block_bits,
            out_block_bits: g.out_block_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatterySettings {
    pub seq_len: usize,
    /// `None` runs as many whole sequences as the output holds, up to 40.
    pub n_sequences: Option<usize>,
    pub tests: BatteryConfig,
}

impl Default for BatterySettings {
    fn default() -> Self {
        Self {
            seq_len: 1_000_000,
            n_sequences: None,
            tests: BatteryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSettings {
    pub cross_max_lag: usize,
    pub auto_max_lag: usize,
}

impl Default for CorrelationSettings {
    fn default() -> Self {
        Self {
            cross_max_lag: 100,
            auto_max_lag: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Required. Overrides `acquisition.rng_seed`.
    pub seed: u64,
    #[serde(default = "default_squeeze")]
    pub squeeze: SqueezeParams,
    #[serde(default = "default_acquisition")]
    pub acquisition: AcquisitionConfig,
    /// Read this waveform instead of synthesizing one.
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub extraction: ExtractionSettings,
    #[serde(default)]
    pub entropy: EntropySettings,
    #[serde(default)]
    pub reconcile: Granularity,
    #[serde(default)]
    pub conditioning: Conditioning,
    #[serde(default)]
    pub battery: BatterySettings,
    #[serde(default)]
    pub correlation: CorrelationSettings,
    /// Also store the raw waveform (32 bytes per sample).
    #[serde(default = "yes")]
    pub persist_waveform: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn yes() -> bool {
    true
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

impl PipelineConfig {
    pub fn new(seed: u64, n_samples: usize, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            squeeze: default_squeeze(),
            acquisition: AcquisitionConfig::new(n_samples, seed),
            input: None,
            extraction: ExtractionSettings::default(),
            entropy: EntropySettings::default(),
            reconcile: Granularity::Bit,
            conditioning: Conditioning::default(),
            battery: BatterySettings::default(),
            correlation: CorrelationSettings::default(),
            persist_waveform: true,
            out_dir: out_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.input.is_none() {
            self.squeeze.validate()?;
            let mut acq = self.acquisition;
            acq.rng_seed = self.seed;
            if acq.n_samples > 0 {
                acq.validate()?;
            }
        }
        if !(1..=crate::extract::MAX_BITS).contains(&self.extraction.n_bits) {
            return Err(Error::Config(format!(
                "extraction.n_bits {} out of range",
                self.extraction.n_bits
            )));
        }
        if self.extraction.fit_size == 0 {
            return Err(Error::Config("extraction.fit_size must be positive".into()));
        }
        if let Conditioning::Fixed {
            in_block_bits,
            out_block_bits,
        } = self.conditioning
        {
            BlockGeometry {
                in_block_bits,
                out_block_bits,
            }
            .validate()?;
        }
        if let Conditioning::Auto { safety } = self.conditioning {
            if !(safety > 0.0 && safety <= 1.0) {
                return Err(Error::Config(format!(
                    "conditioning.safety must lie in (0, 1], got {safety}"
                )));
            }
        }
        self.battery.tests.validate()?;
        if self.battery.seq_len < crate::stats::MIN_SEQ_LEN {
            return Err(Error::Config(format!(
                "battery.seq_len must be at least {}",
                crate::stats::MIN_SEQ_LEN
            )));
        }
        Ok(())
    }
}

/// Everything in the report that must repeat exactly for the same config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_digest: Option<String>,
    pub n_bits: u32,
    pub correlation_lag0: f64,
    pub max_abs_correlation_off_zero: f64,
    pub entropy: EntropyReport,
    pub h_effective: f64,
    pub raw_bits: usize,
    pub kept_bits: usize,
    pub agreement_rate: f64,
    pub geometry: BlockGeometry,
    pub conditioned_bits: usize,
    /// Conditioned bits per input sample.
    pub end_to_end_yield: f64,
    pub yield_accounting_ok: bool,
    pub battery_sequences: usize,
    pub outcomes: Vec<TestOutcome>,
    pub all_tests_passed: bool,
    pub raw_autocorr_max_abs: Option<f64>,
    pub conditioned_autocorr_max_abs: Option<f64>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub out_dir: PathBuf,
    pub threads: usize,
    pub stage_seconds: Vec<(String, f64)>,
    /// Seconds spent in extract, reconcile, condition and persisting their outputs.
    pub core_seconds: f64,
    /// Conditioned bits per second over `core_seconds`.
    pub throughput_bits_per_s: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub deterministic: DeterministicReport,
    pub run: RunInfo,
}

struct Recorder {
    dir: PathBuf,
    written: Vec<String>,
    stages: Vec<(String, f64)>,
}

impl Recorder {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn timed<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        info!("stage {stage}");
        let out = f(self).map_err(|e| e.in_stage(stage))?;
        self.stages.push((stage.to_string(), t.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn seconds(&self, stages: &[&str]) -> f64 {
        self.stages
            .iter()
            .filter(|(s, _)| stages.contains(&s.as_str()))
            .map(|(_, t)| t)
            .sum()
    }
}

/// Runs the full pipeline and writes `report.json` into `config.out_dir`.
///
/// On failure a `STALE` marker listing the artifacts already written is left
/// behind and the error names the failing stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e).in_stage("config"))?;
    let marker = dir.join(STALE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e).in_stage("config"))?;
    }
    let mut rec = Recorder {
        dir: dir.clone(),
        written: Vec::new(),
        stages: Vec::new(),
    };
    let start = Instant::now();
    match execute(config, &mut rec) {
        Ok(mut det) => {
            det.artifacts = rec.written.clone();
            let core_seconds = rec.seconds(&["extract", "reconcile", "condition"]);
            let run = RunInfo {
                out_dir: dir.clone(),
                threads: rayon::current_num_threads(),
                stage_seconds: rec.stages.clone(),
                core_seconds,
                throughput_bits_per_s: det.conditioned_bits as f64 / core_seconds.max(1e-9),
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            let report = RunReport {
                deterministic: det,
                run,
            };
            let path = dir.join("report.json");
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::from(e).in_stage("report"))?;
            fs::write(&path, text).map_err(|e| Error::io(&path, e).in_stage("report"))?;
            Ok(report)
        }
        Err(e) => {
            let mut note = format!("run aborted: {e}\npartial artifacts:\n");
            for a in &rec.written {
                note.push_str(a);
                note.push('\n');
            }
            if let Err(io) = fs::write(&marker, note) {
                warn!("could not write {}: {io}", marker.display());
            }
            Err(e)
        }
    }
}

fn bins_json(scheme: &BinningScheme, path: &Path) -> Result<()> {
    fs::write(path, scheme.to_json()?).map_err(|e| Error::io(path, e))
}

fn histogram_csv(signal: &[u64], classical: &[u64], path: &Path) -> Result<()> {
    let mut text = String::from("bin,signal,classical\n");
    for (i, (s, c)) in signal.iter().zip(classical).enumerate() {
        text.push_str(&format!("{i},{s},{c}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn autocorr(bits: &BitStream, max_lag: usize) -> Option<CorrelationProfile> {
    if bits.len() < MIN_AUTOCORR_BITS || max_lag == 0 || max_lag >= bits.len() / 2 {
        return None;
    }
    match bit_autocorrelation(bits, max_lag) {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("autocorrelation skipped: {e}");
            None
        }
    }
}

fn execute(config: &PipelineConfig, rec: &mut Recorder) -> Result<DeterministicReport> {
    let wave = match &config.input {
        Some(input) => rec.timed("ingest", |_| ingest_waveform(&input.path, input.format))?,
        None => rec.timed("synthesize", |rec| {
            let mut acq = config.acquisition;
            acq.rng_seed = config.seed;
            let wave = synthesize(&config.squeeze, &acq)?;
            if config.persist_waveform {
                write_waveform(&wave, &rec.path("waveform.bin"), WaveFormat::Binary)?;
                rec.written.push("waveform.meta.json".into());
            }
            Ok(wave)
        })?,
    };
    let TwinWaveform {
        probe,
        conjugate,
        elec_ref,
        meta,
        ..
    } = &wave;
    let n = probe.len();
    let n_bits = config.extraction.n_bits;

    let (probe_bits, conj_bits) = rec.timed("extract", |rec| {
        let fit = config.extraction.fit_size.min(n);
        let bp = fit_bins(&probe[..fit], n_bits)?;
        let bc = fit_bins(&conjugate[..fit], n_bits)?;
        let a = encode(probe, &bp, BitSource::Probe);
        let b = encode(conjugate, &bc, BitSource::Conjugate);
        bins_json(&bp, &rec.path("bins_probe.json"))?;
        bins_json(&bc, &rec.path("bins_conjugate.json"))?;
        a.write_binary(&rec.path("probe.bits"))?;
        b.write_binary(&rec.path("conjugate.bits"))?;
        Ok((a, b))
    })?;

    let curve = rec.timed("entropy", |rec| {
        let curve = entropy_curve_with(probe, elec_ref, &config.entropy.curve_bits, config.entropy.edges)?;
        write_curve_csv(&curve, &rec.path("entropy_curve.csv"))?;
        let at_depth = crate::entropy::effective_entropy_with(probe, elec_ref, n_bits.min(12), config.entropy.edges)?;
        // Histogram on the signal-fitted grid, as used for the entropy estimate.
        let scheme = crate::extract::fit_bins_with_min(probe, n_bits.min(12), 1)?;
        let hs = histogram(&scheme.symbols(probe), scheme.bins())?;
        let hc = histogram(&scheme.symbols(elec_ref), scheme.bins())?;
        histogram_csv(&hs, &hc, &rec.path("histogram.csv"))?;
        Ok(at_depth)
    })?;

    let reconciled = rec.timed("reconcile", |rec| {
        let r = common_bits_with(&probe_bits, &conj_bits, config.reconcile)?;
        r.mask.write(&rec.path("mask.bin"))?;
        r.kept.write_binary(&rec.path("kept.bits"))?;
        Ok(r)
    })?;

    let geometry = match config.conditioning {
        Conditioning::Fixed {
            in_block_bits,
            out_block_bits,
        } => BlockGeometry {
            in_block_bits,
            out_block_bits,
        },
        Conditioning::Auto { safety } => {
            choose_ratio(curve.h_effective, n_bits, safety).map_err(|e| e.in_stage("condition"))?
        }
    };
    let conditioned = rec.timed("condition", |rec| {
        let out = condition(&reconciled.kept, geometry)?;
        out.write_binary(&rec.path("conditioned.bits"))?;
        Ok(out)
    })?;
    rec.timed("export", |rec| conditioned.write_ascii(&rec.path("conditioned.txt")))?;

    let (battery_sequences, outcomes) = rec.timed("battery", |rec| {
        let seq_len = config.battery.seq_len;
        let k = match config.battery.n_sequences {
            Some(k) => k,
            None => (conditioned.len() / seq_len).min(40),
        };
        if k == 0 {
            return Err(Error::Config(format!(
                "{} conditioned bits is less than one {seq_len}-bit test sequence",
                conditioned.len()
            )));
        }
        let outcomes = run_battery_with(&conditioned, seq_len, k, &config.battery.tests)?;
        write_battery_json(&outcomes, &rec.path("battery.json"))?;
        write_battery_csv(&outcomes, &rec.path("battery.csv"))?;
        Ok((k, outcomes))
    })?;

    let (xcorr, raw_ac, cond_ac) = rec.timed("correlation", |rec| {
        let x = cross_correlation(probe, conjugate, config.correlation.cross_max_lag)?;
        x.write_csv(&rec.path("cross_correlation.csv"))?;
        let lag = config.correlation.auto_max_lag;
        let raw = autocorr(&probe_bits, lag);
        let cond = autocorr(&conditioned, lag);
        if let Some(p) = &raw {
            p.write_csv(&rec.path("autocorr_raw.csv"))?;
        }
        if let Some(p) = &cond {
            p.write_csv(&rec.path("autocorr_conditioned.csv"))?;
        }
        Ok((x, raw, cond))
    })?;

    let kept_bits = reconciled.kept.len();
    let conditioned_bits = conditioned.len();
    Ok(DeterministicReport {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        n_samples: n,
        source_digest: meta.source_digest.clone(),
        n_bits,
        correlation_lag0: xcorr.at(0).unwrap_or(f64::NAN),
        max_abs_correlation_off_zero: xcorr.max_abs_off_zero(),
        entropy: curve,
        h_effective: curve.h_effective,
        raw_bits: probe_bits.len(),
        kept_bits,
        agreement_rate: reconciled.agreement_rate,
        geometry,
        conditioned_bits,
        end_to_end_yield: conditioned_bits as f64 / n as f64,
        yield_accounting_ok: conditioned_bits == kept_bits / geometry.in_block_bits * geometry.out_block_bits,
        battery_sequences,
        all_tests_passed: outcomes.iter().all(TestOutcome::passed),
        outcomes,
        raw_autocorr_max_abs: raw_ac.map(|p| p.max_abs_off_zero()),
        conditioned_autocorr_max_abs: cond_ac.map(|p| p.max_abs_off_zero()),
        artifacts: Vec::new(),
    })
}
