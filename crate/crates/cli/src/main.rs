use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use twinqrng_core::entropy::{entropy_curve_with, write_curve_csv, EdgeSource};
use twinqrng_core::error::{Error, ErrorClass, Result};
use twinqrng_core::extract::{encode, fit_bins};
use twinqrng_core::pipeline::{run_pipeline, PipelineConfig};
use twinqrng_core::reconcile::{common_bits_with, Granularity};
use twinqrng_core::stats::{
    bit_autocorrelation, cross_correlation, run_battery, write_battery_csv, write_battery_json, TestOutcome,
};
use twinqrng_core::waveform::{ingest_waveform, synthesize, write_waveform, TwinWaveform, WaveFormat};
use twinqrng_core::{choose_ratio, condition, BitSource, BitStream, BlockGeometry};

#[derive(Parser)]
#[command(
    name = "twinqrng",
    version,
    about = "Correlated random bits from twin-beam intensity noise"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Output format: csv or bin for waveforms, bin or ascii for bit streams.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Exit with status 4 if any statistical test fails.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Bin,
    Ascii,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a twin waveform.
    Simulate {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Read a recorded waveform, report its digest and store it as binary.
    Ingest { input: PathBuf },
    /// Fit bin edges and encode both channels.
    Extract {
        waveform: PathBuf,
        #[arg(long)]
        n_bits: Option<u32>,
        #[arg(long)]
        fit_size: Option<usize>,
    },
    /// Entropy curve of the probe channel against the electronic reference.
    Entropy {
        waveform: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10,11,12")]
        bits: Vec<u32>,
        #[arg(long)]
        classical_edges: bool,
    },
    /// Keep the bits on which two streams agree.
    Reconcile {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        symbol: bool,
    },
    /// Hash a bit stream block by block.
    Condition {
        input: PathBuf,
        #[arg(long, default_value_t = 1280)]
        in_block: usize,
        #[arg(long, default_value_t = 512)]
        out_block: usize,
        /// Choose the geometry from this effective entropy per sample instead.
        #[arg(long)]
        auto_entropy: Option<f64>,
        #[arg(long, default_value_t = 8)]
        n_bits: u32,
        #[arg(long, default_value_t = 0.6)]
        safety: f64,
    },
    /// Run the native test battery.
    Test {
        input: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        seq_len: usize,
        #[arg(long, default_value_t = 40)]
        n_sequences: usize,
    },
    /// Cross-correlation of a waveform, or autocorrelation of a bit stream with --bits.
    Corr {
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_lag: usize,
        #[arg(long)]
        bits: bool,
    },
    /// Run every stage from one configuration.
    Pipeline,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
            })
        }
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let seed = c
                .seed
                .ok_or_else(|| Error::Config("a seed is required: pass --seed or --config".into()))?;
            PipelineConfig::new(seed, 10_000_000, &c.out)
        }
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.out_dir = c.out.clone();
    Ok(cfg)
}

fn wave_format(c: &Common, path: &Path) -> Result<WaveFormat> {
    match c.format {
        None => Ok(WaveFormat::from_path(path)),
        Some(Format::Csv) => Ok(WaveFormat::Csv),
        Some(Format::Bin) => Ok(WaveFormat::Binary),
        Some(Format::Ascii) => Err(Error::Config("waveforms are csv or bin".into())),
    }
}

/// Binary streams are recognised by their magic; anything else is read as ASCII.
fn read_bits(path: &Path) -> Result<BitStream> {
    let mut magic = [0u8; 4];
    let is_binary = fs::File::open(path)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut magic))
        .is_ok()
        && &magic == b"TWBS";
    if is_binary {
        BitStream::read_binary(path)
    } else {
        BitStream::read_ascii(path, BitSource::External)
    }
}

fn write_bits(c: &Common, bits: &BitStream, stem: &str) -> Result<PathBuf> {
    let path = if c.format == Some(Format::Ascii) {
        let p = c.out.join(format!("{stem}.txt"));
        bits.write_ascii(&p)?;
        p
    } else {
        let p = c.out.join(format!("{stem}.bits"));
        bits.write_binary(&p)?;
        p
    };
    info!("wrote {} bits to {}", bits.len(), path.display());
    Ok(path)
}

fn read_wave(c: &Common, path: &Path) -> Result<TwinWaveform> {
    ingest_waveform(path, wave_format(c, path)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn report_outcomes(outcomes: &[TestOutcome]) -> bool {
    let mut ok = true;
    for o in outcomes {
        let pass = o.passed();
        ok &= pass;
        println!(
            "{:<24} proportion {:.4}  uniformity {:.6}  {}",
            o.test_name,
            o.proportion_passed,
            o.uniformity_p,
            if pass { "pass" } else { "FAIL" }
        );
    }
    ok
}

/// `Ok(false)` signals a failed test under `--strict`.
fn run(cli: &Cli) -> Result<bool> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate { samples } => {
            let mut cfg = load_config(c)?;
            if let Some(n) = samples {
                cfg.acquisition.n_samples = *n;
            }
            cfg.acquisition.rng_seed = cfg.seed;
            let wave = synthesize(&cfg.squeeze, &cfg.acquisition)?;
            mkdir(&c.out)?;
            let (fmt, name) = match c.format {
                Some(Format::Csv) => (WaveFormat::Csv, "waveform.csv"),
                Some(Format::Ascii) => return Err(Error::Config("waveforms are csv or bin".into())),
                _ => (WaveFormat::Binary, "waveform.bin"),
            };
            write_waveform(&wave, &c.out.join(name), fmt)?;
            info!("wrote {} samples to {}", wave.len(), c.out.join(name).display());
        }
        Command::Ingest { input } => {
            let wave = read_wave(c, input)?;
            mkdir(&c.out)?;
            write_waveform(&wave, &c.out.join("waveform.bin"), WaveFormat::Binary)?;
            print_json(&serde_json::json!({
                "samples": wave.len(),
                "sha256": wave.meta.source_digest,
            }))?;
        }
        Command::Extract {
            waveform,
            n_bits,
            fit_size,
        } => {
            let defaults = c.config.as_ref().map(|p| PipelineConfig::load(p)).transpose()?;
            let settings = defaults.map(|d| d.extraction).unwrap_or_default();
            let n_bits = n_bits.unwrap_or(settings.n_bits);
            let fit = fit_size.unwrap_or(settings.fit_size);
            let wave = ingest_waveform(waveform, WaveFormat::from_path(waveform))?;
            let fit = fit.min(wave.len());
            mkdir(&c.out)?;
            for (name, samples, source) in [
                ("probe", &wave.probe, BitSource::Probe),
                ("conjugate", &wave.conjugate, BitSource::Conjugate),
            ] {
                let scheme = fit_bins(&samples[..fit], n_bits)?;
                let path = c.out.join(format!("bins_{name}.json"));
                fs::write(&path, scheme.to_json()?).map_err(|e| Error::io(&path, e))?;
                write_bits(c, &encode(samples, &scheme, source), name)?;
            }
        }
        Command::Entropy {
            waveform,
            bits,
            classical_edges,
        } => {
            let wave = ingest_waveform(waveform, WaveFormat::from_path(waveform))?;
            let edges = if *classical_edges {
                EdgeSource::Classical
            } else {
                EdgeSource::Signal
            };
            let curve = entropy_curve_with(&wave.probe, &wave.elec_ref, bits, edges)?;
            mkdir(&c.out)?;
            write_curve_csv(&curve, &c.out.join("entropy_curve.csv"))?;
            print_json(&curve)?;
        }
        Command::Reconcile { a, b, symbol } => {
            let (a, b) = (read_bits(a)?, read_bits(b)?);
            let g = if *symbol { Granularity::Symbol } else { Granularity::Bit };
            let r = common_bits_with(&a, &b, g)?;
            mkdir(&c.out)?;
            r.mask.write(&c.out.join("mask.bin"))?;
            write_bits(c, &r.kept, "kept")?;
            print_json(&serde_json::json!({
                "input_bits": a.len(),
                "kept_bits": r.kept.len(),
                "agreement_rate": r.agreement_rate,
            }))?;
        }
        Command::Condition {
            input,
            in_block,
            out_block,
            auto_entropy,
            n_bits,
            safety,
        } => {
            let bits = read_bits(input)?;
            let g = match auto_entropy {
                Some(h) => choose_ratio(*h, *n_bits, *safety)?,
                None => BlockGeometry {
                    in_block_bits: *in_block,
                    out_block_bits: *out_block,
                },
            };
            let out = condition(&bits, g)?;
            mkdir(&c.out)?;
            write_bits(c, &out, "conditioned")?;
            print_json(&serde_json::json!({ "geometry": g, "output_bits": out.len() }))?;
        }
        Command::Test {
            input,
            seq_len,
            n_sequences,
        } => {
            let bits = read_bits(input)?;
            let outcomes = run_battery(&bits, *seq_len, *n_sequences)?;
            mkdir(&c.out)?;
            write_battery_json(&outcomes, &c.out.join("battery.json"))?;
            write_battery_csv(&outcomes, &c.out.join("battery.csv"))?;
            let ok = report_outcomes(&outcomes);
            return Ok(ok || !c.strict);
        }
        Command::Corr { input, max_lag, bits } => {
            let profile = if *bits {
                bit_autocorrelation(&read_bits(input)?, *max_lag)?
            } else {
                let wave = read_wave(c, input)?;
                cross_correlation(&wave.probe, &wave.conjugate, *max_lag)?
            };
            mkdir(&c.out)?;
            let name = if *bits { "autocorr.csv" } else { "cross_correlation.csv" };
            profile.write_csv(&c.out.join(name))?;
            print_json(&serde_json::json!({
                "lag0": profile.at(0),
                "max_abs_off_zero": profile.max_abs_off_zero(),
            }))?;
        }
        Command::Pipeline => {
            let cfg = load_config(c)?;
            let report = run_pipeline(&cfg)?;
            let d = &report.deterministic;
            println!("correlation      {:.4}", d.correlation_lag0);
            println!("h_effective      {:.3} bits/sample", d.h_effective);
            println!("agreement        {:.4}", d.agreement_rate);
            println!("conditioned bits {}", d.conditioned_bits);
            println!("yield            {:.3} bits/sample", d.end_to_end_yield);
            println!("throughput       {:.2} Mbit/s", report.run.throughput_bits_per_s / 1e6);
            let ok = report_outcomes(&d.outcomes);
            return Ok(ok || !c.strict);
        }
    }
    Ok(true)
}
