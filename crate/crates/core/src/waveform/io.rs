//! Waveform files.
//!
//! CSV: header `probe,conjugate,shot_ref,elec_ref`, one decimal float per column.
//!
//! Binary: `TWQR`, version byte `0x01`, sample count as u64 LE, then f64 LE
//! samples interleaved (probe, conjugate, shot_ref, elec_ref).
//!
//! Either format may carry a `<name>.meta.json` sidecar with the
//! [`WaveformMeta`] of the writer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{Origin, TwinWaveform, WaveformMeta};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TWQR";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 13;
const CSV_HEADER: [&str; 4] = ["probe", "conjugate", "shot_ref", "elec_ref"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveFormat {
    Csv,
    #[serde(alias = "bin")]
    Binary,
}

impl WaveFormat {
    /// Guess from the file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => WaveFormat::Csv,
            _ => WaveFormat::Binary,
        }
    }
}

impl FromStr for WaveFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(WaveFormat::Csv),
            "bin" | "binary" => Ok(WaveFormat::Binary),
            other => Err(Error::Config(format!("unknown waveform format `{other}`"))),
        }
    }
}

/// `wave.bin` → `wave.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write_waveform(wave: &TwinWaveform, path: &Path, format: WaveFormat) -> Result<()> {
    match format {
        WaveFormat::Csv => write_csv(wave, path)?,
        WaveFormat::Binary => write_binary(wave, path)?,
    }
    let sidecar = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&wave.meta)?;
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

fn write_csv(wave: &TwinWaveform, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(out, "{}", CSV_HEADER.join(",")).map_err(io_err)?;
    for i in 0..wave.len() {
        writeln!(
            out,
            "{},{},{},{}",
            wave.probe[i], wave.conjugate[i], wave.shot_ref[i], wave.elec_ref[i]
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn write_binary(wave: &TwinWaveform, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let io_err = |e| Error::io(path, e);
    out.write_all(MAGIC).map_err(io_err)?;
    out.write_all(&[VERSION]).map_err(io_err)?;
    out.write_all(&(wave.len() as u64).to_le_bytes()).map_err(io_err)?;
    let mut row = [0u8; 32];
    for i in 0..wave.len() {
        for (k, ch) in wave.channels().iter().enumerate() {
            row[k * 8..k * 8 + 8].copy_from_slice(&ch[i].to_le_bytes());
        }
        out.write_all(&row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Loads a recorded or previously written waveform.
///
/// Channels are mean-subtracted unless a sidecar declares them DC-free
/// already. The returned metadata is always marked external and carries the
/// SHA-256 of the data file.
pub fn ingest_waveform(path: &Path, format: WaveFormat) -> Result<TwinWaveform> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = hex::encode(Sha256::digest(&raw));
    let channels = match format {
        WaveFormat::Csv => parse_csv(path, &raw)?,
        WaveFormat::Binary => parse_binary(path, &raw)?,
    };
    let sidecar = sidecar_path(path);
    let prior: Option<WaveformMeta> = if sidecar.exists() {
        let text = std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        Some(serde_json::from_slice(&text).map_err(|e| Error::Parse {
            path: sidecar.clone(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?)
    } else {
        None
    };
    let meta = WaveformMeta {
        origin: Origin::External,
        params: prior.as_ref().and_then(|m| m.params),
        acquisition: prior.as_ref().and_then(|m| m.acquisition),
        dc_removed: prior.as_ref().is_some_and(|m| m.dc_removed),
        source_digest: Some(digest),
    };
    let [probe, conjugate, shot_ref, elec_ref] = channels;
    let mut wave = TwinWaveform::new(probe, conjugate, shot_ref, elec_ref, meta)?;
    if !wave.meta.dc_removed {
        wave.remove_dc();
    }
    Ok(wave)
}

fn parse_csv(path: &Path, raw: &[u8]) -> Result<[Vec<f64>; 4]> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let parse_err = |location: String, message: String| Error::Parse {
        path: path.to_path_buf(),
        location,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err("line 1".into(), e.to_string()))?;
    if headers.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(parse_err(
            "line 1".into(),
            format!("expected header `{}`", CSV_HEADER.join(",")),
        ));
    }
    let mut out: [Vec<f64>; 4] = Default::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } => {
                    Error::Structural(format!("{}: line {line}: channel count mismatch ({e})", path.display()))
                }
                _ => parse_err(format!("line {line}"), e.to_string()),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (k, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    format!("line {line}, column {}", k + 1),
                    format!("not a number: `{field}`"),
                )
            })?;
            if !value.is_finite() {
                return Err(parse_err(
                    format!("line {line}, column {}", k + 1),
                    format!("non-finite sample `{field}`"),
                ));
            }
            out[k].push(value);
        }
    }
    Ok(out)
}

fn parse_binary(path: &Path, raw: &[u8]) -> Result<[Vec<f64>; 4]> {
    let parse_err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message,
    };
    if raw.len() < HEADER_LEN {
        return Err(parse_err(raw.len(), "truncated header".into()));
    }
    if &raw[..4] != MAGIC {
        return Err(parse_err(0, "bad magic, expected TWQR".into()));
    }
    if raw[4] != VERSION {
        return Err(parse_err(4, format!("unsupported version {}", raw[4])));
    }
    let count = u64::from_le_bytes(raw[5..13].try_into().unwrap()) as usize;
    let payload = &raw[HEADER_LEN..];
    if !payload.len().is_multiple_of(8) {
        return Err(parse_err(
            HEADER_LEN + payload.len() / 8 * 8,
            "payload is not a whole number of float64 values".into(),
        ));
    }
    if payload.len() != count * 32 {
        return Err(Error::Structural(format!(
            "{}: header declares {count} samples × 4 channels, payload holds {} values",
            path.display(),
            payload.len() / 8
        )));
    }
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(count));
    for (i, value) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(value.try_into().unwrap());
        if !v.is_finite() {
            return Err(parse_err(HEADER_LEN + i * 8, "non-finite sample".into()));
        }
        out[i % 4].push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SqueezeParams;
    use crate::waveform::{synthesize, AcquisitionConfig};

    #[test]
    fn csv_with_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, "probe,conjugate,shot_ref,elec_ref\n1,2,3,4\n2,3,4,5\n3,4,5,6\n").unwrap();
        let w = ingest_waveform(&p, WaveFormat::Csv).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.probe, vec![-1.0, 0.0, 1.0]);
        assert_eq!(w.meta.origin, Origin::External);
        assert!(w.meta.source_digest.is_some());
    }

    #[test]
    fn binary_of_32_values_gives_8_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let mut raw = b"TWQR\x01".to_vec();
        raw.extend_from_slice(&8u64.to_le_bytes());
        for v in 0..32 {
            raw.extend_from_slice(&f64::from(v).to_le_bytes());
        }
        std::fs::write(&p, raw).unwrap();
        let w = ingest_waveform(&p, WaveFormat::Binary).unwrap();
        assert_eq!(w.len(), 8);
        // Channel k holds k, k+4, ..., mean-subtracted.
        assert_eq!(w.conjugate[0], 1.0 - 15.0);
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = SqueezeParams::default().with_classical_noise(0.53, 0.1);
        let wave = synthesize(&p, &AcquisitionConfig::new(5000, 9)).unwrap();
        for (name, fmt) in [("w.csv", WaveFormat::Csv), ("w.bin", WaveFormat::Binary)] {
            let path = dir.path().join(name);
            write_waveform(&wave, &path, fmt).unwrap();
            let back = ingest_waveform(&path, fmt).unwrap();
            assert_eq!(back.channels(), wave.channels(), "{name}");
            assert_eq!(back.meta.params, Some(p));
        }
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, "probe,conjugate,shot_ref,elec_ref\n1,2,3,4\n1,x,3,4\n").unwrap();
        let err = ingest_waveform(&p, WaveFormat::Csv).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.contains("line 3"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "probe,conjugate,shot_ref,elec_ref\n1,2,3,4\n1,2,3\n").unwrap();
        assert!(matches!(
            ingest_waveform(&p, WaveFormat::Csv),
            Err(Error::Structural(_))
        ));
        std::fs::write(&p, "a,b,c,d\n1,2,3,4\n").unwrap();
        assert!(matches!(ingest_waveform(&p, WaveFormat::Csv), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_binary_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        std::fs::write(&p, b"TWQX\x01\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(
            ingest_waveform(&p, WaveFormat::Binary),
            Err(Error::Parse { .. })
        ));
        let mut raw = b"TWQR\x01".to_vec();
        raw.extend_from_slice(&2u64.to_le_bytes());
        raw.extend_from_slice(&[0u8; 8 * 7]);
        std::fs::write(&p, raw).unwrap();
        assert!(matches!(
            ingest_waveform(&p, WaveFormat::Binary),
            Err(Error::Structural(_))
        ));
    }
}
