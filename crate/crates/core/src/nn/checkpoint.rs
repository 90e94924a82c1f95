//! The SNWT tensor checkpoint container.
//!
//! Layout (integers little-endian, payloads `f32`):
//!
//! ```text
//! magic "SNWT" | version u16 | count u32
//! then per tensor, sorted by name (lexicographic, byte order):
//!   name_len u16 | name utf-8 | rank u8 | dims u32 * rank | data f32 * prod(dims)
//! ```
//!
//! Writing sorts entries itself, so any two checkpoints of the same state
//! are byte-identical. Buffers (running statistics) are stored like weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

const MAGIC: [u8; 4] = *b"SNWT";
const VERSION: u16 = 1;

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

/// Writes named tensors to `path`; entries are sorted by name first.
pub fn write_snwt(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut sorted: Vec<&(String, Tensor<f32>)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Validation(format!(
                "duplicate tensor name {:?}",
                pair[0].0
            )));
        }
    }
    let count = u32::try_from(sorted.len())
        .map_err(|_| Error::Validation("too many tensors for one checkpoint".into()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for (name, tensor) in sorted {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Validation(format!("tensor name too long: {name:?}")))?;
        let rank = u8::try_from(tensor.rank())
            .map_err(|_| Error::Validation(format!("tensor rank too large for {name:?}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[rank])?;
        for &d in tensor.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Validation(format!("dimension too large in {name:?}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every tensor from an SNWT file, in stored (name) order.
pub fn read_snwt(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Counted {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.fill(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:02x?}, expected \"SNWT\"")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("tensor count")? as usize;

    let mut out = Vec::with_capacity(count);
    let mut prev_name: Option<String> = None;
    for _ in 0..count {
        let at_name = r.offset;
        let name_len = r.u16("name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.fill(&mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| format_err(at_name + 2, "tensor name is not utf-8"))?;
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(format_err(
                    at_name,
                    format!("tensor names out of order: {prev:?} before {name:?}"),
                ));
            }
        }
        let mut rank = [0u8];
        r.fill(&mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        let mut len = 1usize;
        for _ in 0..rank[0] {
            let d = r.u32("dimension")? as usize;
            len = len.checked_mul(d).ok_or_else(|| {
                format_err(r.offset, format!("dimension overflow in {name:?}"))
            })?;
            shape.push(d);
        }
        let mut raw = vec![0u8; len * 4];
        r.fill(&mut raw, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        prev_name = Some(name.clone());
        out.push((name, Tensor::new(shape, data)));
    }
    let mut probe = [0u8];
    if r.inner.read(&mut probe)? != 0 {
        return Err(format_err(r.offset, "trailing bytes after last tensor"));
    }
    Ok(out)
}

struct Counted<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counted<R> {
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
