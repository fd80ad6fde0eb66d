//! Packed bit sequences.
//!
//! Bits are stored MSB-first within bytes; unused bits of the final byte are
//! always zero. The same packing feeds the hash conditioner and the on-disk
//! formats, so the layout is fixed.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TWBS";
const VERSION: u8 = 1;

/// Where a bit stream came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitSource {
    Probe,
    Conjugate,
    Reconciled,
    Conditioned,
    External,
}

impl BitSource {
    fn code(self) -> u8 {
        match self {
            BitSource::Probe => 0,
            BitSource::Conjugate => 1,
            BitSource::Reconciled => 2,
            BitSource::Conditioned => 3,
            BitSource::External => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => BitSource::Probe,
            1 => BitSource::Conjugate,
            2 => BitSource::Reconciled,
            3 => BitSource::Conditioned,
            4 => BitSource::External,
            _ => return None,
        })
    }
}

impl fmt::Display for BitSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BitSource::Probe => "probe",
            BitSource::Conjugate => "conjugate",
            BitSource::Reconciled => "reconciled",
            BitSource::Conditioned => "conditioned",
            BitSource::External => "external",
        };
        f.write_str(name)
    }
}

/// Ordered binary sequence with provenance.
#[derive(Clone, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
    len: usize,
    bits_per_sample: u32,
    source: BitSource,
}

impl fmt::Debug for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BitStream")
            .field("len", &self.len)
            .field("bits_per_sample", &self.bits_per_sample)
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

impl BitStream {
    pub fn new(source: BitSource, bits_per_sample: u32) -> Self {
        Self {
            bytes: Vec::new(),
            len: 0,
            bits_per_sample,
            source,
        }
    }

    /// Wraps MSB-first packed bytes holding `len` bits.
    pub fn from_packed(mut bytes: Vec<u8>, len: usize, source: BitSource, bits_per_sample: u32) -> Result<Self> {
        let needed = len.div_ceil(8);
        if bytes.len() < needed {
            return Err(Error::Structural(format!(
                "{} bytes cannot hold {len} bits",
                bytes.len()
            )));
        }
        bytes.truncate(needed);
        if !len.is_multiple_of(8) {
            let keep = 0xFFu8 << (8 - len % 8);
            bytes[needed - 1] &= keep;
        }
        Ok(Self {
            bytes,
            len,
            bits_per_sample,
            source,
        })
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>, source: BitSource) -> Self {
        let mut w = BitWriter::new();
        for b in bits {
            w.push_bit(b);
        }
        w.finish(source, 1)
    }

    /// Parses a string of `0`/`1` characters; whitespace is ignored.
    pub fn from_ascii(text: &str, source: BitSource) -> Result<Self> {
        let mut w = BitWriter::with_capacity(text.len());
        for (offset, c) in text.char_indices() {
            match c {
                '0' => w.push_bit(false),
                '1' => w.push_bit(true),
                c if c.is_whitespace() => {}
                other => {
                    return Err(Error::Structural(format!(
                        "unexpected character {other:?} at byte offset {offset} in bit text"
                    )))
                }
            }
        }
        Ok(w.finish(source, 1))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits_per_sample(&self) -> u32 {
        self.bits_per_sample
    }

    pub fn source(&self) -> BitSource {
        self.source
    }

    pub fn with_source(mut self, source: BitSource) -> Self {
        self.source = source;
        self
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        assert!(index < self.len, "bit index {index} out of range {}", self.len);
        (self.bytes[index / 8] >> (7 - index % 8)) & 1 == 1
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.bytes[i / 8] >> (7 - i % 8)) & 1 == 1)
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// 64 bits starting at `offset`, MSB-first; positions past the end read as zero.
    #[inline]
    pub fn word_at(&self, offset: usize) -> u64 {
        let byte = offset / 8;
        let shift = (offset % 8) as u32;
        let mut buf = [0u8; 9];
        let avail = self.bytes.len().saturating_sub(byte).min(9);
        buf[..avail].copy_from_slice(&self.bytes[byte..byte + avail]);
        let hi = u64::from_be_bytes(buf[..8].try_into().unwrap());
        if shift == 0 {
            hi
        } else {
            (hi << shift) | (u64::from(buf[8]) >> (8 - shift))
        }
    }

    /// Copy of bits `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> BitStream {
        assert!(start + len <= self.len, "slice out of range");
        let mut w = BitWriter::with_capacity(len);
        let mut pos = start;
        let end = start + len;
        while pos + 64 <= end {
            w.push_word(self.word_at(pos), 64);
            pos += 64;
        }
        if pos < end {
            let n = (end - pos) as u32;
            w.push_word(self.word_at(pos) >> (64 - n), n);
        }
        w.finish(self.source, self.bits_per_sample)
    }

    pub fn to_ascii(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// Writes one `0`/`1` character per bit, no separators.
    pub fn write_ascii(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut line = Vec::with_capacity(8192);
        for chunk in self.bytes.chunks(1024) {
            line.clear();
            for &byte in chunk {
                for k in (0..8).rev() {
                    line.push(b'0' + ((byte >> k) & 1));
                }
            }
            out.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        drop(out);
        // Trim the zero padding of the last byte.
        let file = std::fs::OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.set_len(self.len as u64).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_ascii(path: &Path, source: BitSource) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ascii(&text, source).map_err(|e| match e {
            Error::Structural(message) => Error::Parse {
                path: path.to_path_buf(),
                location: "bit text".into(),
                message,
            },
            other => other,
        })
    }

    /// Binary layout: `TWBS`, version byte, source byte, bits-per-sample
    /// byte, bit count as u64 LE, then the packed bytes.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = Vec::with_capacity(15);
        header.extend_from_slice(MAGIC);
        header.push(VERSION);
        header.push(self.source.code());
        header.push(self.bits_per_sample as u8);
        header.extend_from_slice(&(self.len as u64).to_le_bytes());
        out.write_all(&header)
            .and_then(|_| out.write_all(&self.bytes))
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let parse = |offset: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            location: format!("byte {offset}"),
            message,
        };
        let mut header = [0u8; 15];
        input
            .read_exact(&mut header)
            .map_err(|_| parse(0, "truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(parse(0, "bad magic, expected TWBS".into()));
        }
        if header[4] != VERSION {
            return Err(parse(4, format!("unsupported version {}", header[4])));
        }
        let source =
            BitSource::from_code(header[5]).ok_or_else(|| parse(5, format!("unknown source code {}", header[5])))?;
        let bits_per_sample = u32::from(header[6]);
        let len = u64::from_le_bytes(header[7..15].try_into().unwrap()) as usize;
        let mut bytes = Vec::with_capacity(len.div_ceil(8));
        input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(parse(
                15 + bytes.len(),
                format!("payload holds {} bytes, header promises {len} bits", bytes.len()),
            ));
        }
        Self::from_packed(bytes, len, source, bits_per_sample)
    }
}

impl FromStr for BitStream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_ascii(s, BitSource::External)
    }
}

/// Append-only builder for [`BitStream`].
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    pending: u32,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn push_bit(&mut self, bit: bool) {
        self.push_bits(u64::from(bit), 1);
    }

    /// Appends the low `n` bits of `value`, most significant first; `n <= 56`.
    #[inline]
    pub fn push_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 56);
        if n == 0 {
            return;
        }
        self.acc = (self.acc << n) | (value & ((1u64 << n) - 1));
        self.pending += n;
        self.len += n as usize;
        while self.pending >= 8 {
            self.pending -= 8;
            self.bytes.push((self.acc >> self.pending) as u8);
        }
    }

    /// Appends the low `n` bits of `word` (`n <= 64`).
    #[inline]
    pub fn push_word(&mut self, word: u64, n: u32) {
        if n > 32 {
            self.push_bits(word >> 32, n - 32);
            self.push_bits(word & 0xFFFF_FFFF, 32);
        } else {
            self.push_bits(word, n);
        }
    }

    /// Appends whole bytes; fast path when the writer is byte-aligned.
    pub fn push_bytes(&mut self, bytes: &[u8]) {
        if self.pending == 0 {
            self.bytes.extend_from_slice(bytes);
            self.len += bytes.len() * 8;
        } else {
            for &b in bytes {
                self.push_bits(u64::from(b), 8);
            }
        }
    }

    pub fn append(&mut self, other: &BitStream) {
        if self.pending == 0 && other.len.is_multiple_of(8) {
            self.push_bytes(other.as_bytes());
            return;
        }
        let mut pos = 0;
        while pos + 64 <= other.len {
            self.push_word(other.word_at(pos), 64);
            pos += 64;
        }
        if pos < other.len {
            let n = (other.len - pos) as u32;
            self.push_word(other.word_at(pos) >> (64 - n), n);
        }
    }

    pub fn finish(mut self, source: BitSource, bits_per_sample: u32) -> BitStream {
        if self.pending > 0 {
            self.bytes.push((self.acc << (8 - self.pending)) as u8);
        }
        BitStream {
            bytes: self.bytes,
            len: self.len,
            bits_per_sample,
            source,
        }
    }
}
