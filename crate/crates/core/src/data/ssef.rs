//! Reading and writing the SSEF single-channel EEG container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SSEF"
//! 4       2     format version (currently 1)
//! 6       4     sampling_rate_hz (u32)
//! 10      2     epoch_len_s (u16)
//! 12      4     n_epochs (u32)
//! 16      16    reserved, must be zero
//! 32      n     labels, one byte per epoch
//! 32+n    ...   samples, n_epochs * rate * len f32 values
//! ```
//!
//! Rhythm annotations travel in an optional plain-text sidecar next to the
//! signal file (same path with extension `.ann`), one span per line:
//! `epoch_index,start_sample,end_sample,tag`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::data::recording::{Recording, RhythmSpan};
use crate::data::stage::Label;
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"SSEF";
const VERSION: u16 = 1;
const HEADER_LEN: u64 = 32;

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

/// Tracks the byte offset so short reads can name the position they failed at.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner
            .read_exact(buf)
            .map_err(|e| format_err(at, format!("truncated while reading {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Path of the annotation sidecar belonging to `signal_path`.
pub fn sidecar_path(signal_path: &Path) -> PathBuf {
    signal_path.with_extension("ann")
}

/// Writes `rec` to `path`, plus an `.ann` sidecar when it carries
/// annotations. The recording is validated first; nothing is written on
/// failure.
pub fn write_ssef(rec: &Recording, path: &Path) -> Result<()> {
    rec.validate()?;
    let n_epochs = u32::try_from(rec.n_epochs())
        .map_err(|_| Error::Validation("epoch count exceeds u32".into()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&rec.sampling_rate_hz.to_le_bytes())?;
    w.write_all(&rec.epoch_len_s.to_le_bytes())?;
    w.write_all(&n_epochs.to_le_bytes())?;
    w.write_all(&[0u8; 16])?;
    for label in &rec.labels {
        w.write_all(&[label.as_byte()])?;
    }
    for epoch in &rec.epochs {
        for &v in epoch {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;

    if rec.annotations.iter().any(|s| !s.is_empty()) {
        let mut a = BufWriter::new(File::create(sidecar_path(path))?);
        for (i, spans) in rec.annotations.iter().enumerate() {
            for s in spans {
                writeln!(a, "{i},{},{},{}", s.start_sample, s.end_sample, s.tag)?;
            }
        }
        a.flush()?;
    }
    Ok(())
}

/// Reads a recording from `path`, picking up the `.ann` sidecar when present.
pub fn read_ssef(path: &Path) -> Result<Recording> {
    let file = File::open(path)?;
    let mut c = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    c.fill(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:02x?}, expected \"SSEF\"")));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let sampling_rate_hz = c.u32("sampling rate")?;
    let epoch_len_s = c.u16("epoch length")?;
    let n_epochs = c.u32("epoch count")? as usize;
    let mut reserved = [0u8; 16];
    c.fill(&mut reserved, "reserved bytes")?;
    if reserved != [0u8; 16] {
        return Err(format_err(16, "reserved bytes must be zero"));
    }
    if sampling_rate_hz == 0 || epoch_len_s == 0 {
        return Err(format_err(6, "sampling rate and epoch length must be positive"));
    }

    let mut labels = Vec::with_capacity(n_epochs);
    for i in 0..n_epochs {
        let at = c.offset;
        let mut b = [0u8];
        c.fill(&mut b, "labels")?;
        let label = Label::from_byte(b[0])
            .ok_or_else(|| format_err(at, format!("invalid stage byte {} for epoch {i}", b[0])))?;
        labels.push(label);
    }

    let epoch_samples = sampling_rate_hz as usize * epoch_len_s as usize;
    let mut epochs = Vec::with_capacity(n_epochs);
    let mut raw = vec![0u8; epoch_samples * 4];
    for i in 0..n_epochs {
        let at = c.offset;
        c.fill(&mut raw, "samples")?;
        let epoch: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(j) = epoch.iter().position(|v| !v.is_finite()) {
            return Err(format_err(
                at + 4 * j as u64,
                format!("non-finite sample in epoch {i}"),
            ));
        }
        epochs.push(epoch);
    }
    // Trailing garbage would silently change meaning on a future version
    // bump, so reject it.
    let mut probe = [0u8];
    if c.inner.read(&mut probe)? != 0 {
        return Err(format_err(c.offset, "trailing bytes after sample payload"));
    }

    let annotations = match read_sidecar(&sidecar_path(path), n_epochs, epoch_samples)? {
        Some(a) => a,
        None => vec![Vec::new(); n_epochs],
    };

    let rec = Recording {
        sampling_rate_hz,
        epoch_len_s,
        epochs,
        labels,
        annotations,
    };
    rec.validate()?;
    Ok(rec)
}

/// Exact on-disk size of a recording with these dimensions.
pub fn encoded_len(n_epochs: usize, epoch_samples: usize) -> u64 {
    HEADER_LEN + n_epochs as u64 + (n_epochs * epoch_samples) as u64 * 4
}

fn read_sidecar(
    path: &Path,
    n_epochs: usize,
    epoch_samples: usize,
) -> Result<Option<Vec<Vec<RhythmSpan>>>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut spans = vec![Vec::new(); n_epochs];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ',');
        let mut field = |name: &str| {
            parts.next().map(str::trim).ok_or_else(|| {
                Error::Validation(format!(
                    "annotation line {}: missing {name}",
                    lineno + 1
                ))
            })
        };
        let bad_num = |name: &str| {
            Error::Validation(format!("annotation line {}: invalid {name}", lineno + 1))
        };
        let epoch: usize = field("epoch index")?.parse().map_err(|_| bad_num("epoch index"))?;
        let start: u32 = field("start sample")?.parse().map_err(|_| bad_num("start sample"))?;
        let end: u32 = field("end sample")?.parse().map_err(|_| bad_num("end sample"))?;
        let tag = field("tag")?.to_string();
        if epoch >= n_epochs {
            return Err(Error::Validation(format!(
                "annotation line {}: epoch {epoch} out of range 0..{n_epochs}",
                lineno + 1
            )));
        }
        if start >= end || end as usize > epoch_samples {
            return Err(Error::Validation(format!(
                "annotation line {}: span {start}..{end} outside 0..{epoch_samples}",
                lineno + 1
            )));
        }
        spans[epoch].push(RhythmSpan::new(start, end, tag));
    }
    Ok(Some(spans))
}
