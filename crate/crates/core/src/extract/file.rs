//! Feature-file container (`CVFX`) and CSV interchange.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "CVFX" | u32 version | u32 n | u32 d | u16 len + UTF-8 extractor name
//! n x ( u16 len + UTF-8 id | u8 label | d x f32 )
//! ```

use std::io::Write;
use std::path::Path;

use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};

pub const FEATURE_FILE_MAGIC: &[u8; 4] = b"CVFX";
pub const FEATURE_FILE_VERSION: u32 = 1;

const WHAT: &str = "feature file";

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::invalid(format!("string of {} bytes exceeds u16 prefix", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn features_write(m: &FeatureMatrix) -> Result<Vec<u8>> {
    m.validate()?;
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(16 + m.n * (m.d * 4 + 16));
    out.extend_from_slice(FEATURE_FILE_MAGIC);
    out.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(m.n, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(m.d, "dimension")?.to_le_bytes());
    put_str(&mut out, &m.extractor_name)?;
    for i in 0..m.n {
        put_str(&mut out, &m.sample_ids[i])?;
        out.push(m.labels[i] as u8);
        for v in m.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Format {
                what: WHAT,
                message: format!("truncated at offset {} (needed {len} more bytes)", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format {
            what: WHAT,
            message: format!("invalid UTF-8 at offset {at}"),
        })
    }
}

pub fn features_read(buf: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != FEATURE_FILE_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            message: "bad magic (expected CVFX)".into(),
        });
    }
    let version = r.u32()?;
    if version != FEATURE_FILE_VERSION {
        return Err(Error::Version {
            what: "feature-file",
            found: version,
            expected: FEATURE_FILE_VERSION,
        });
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let extractor_name = r.string()?;
    let mut values = Vec::with_capacity(n.saturating_mul(d).min(buf.len() / 4));
    let mut labels = Vec::with_capacity(n.min(buf.len()));
    let mut ids = Vec::with_capacity(n.min(buf.len()));
    for _ in 0..n {
        ids.push(r.string()?);
        let at = r.pos;
        let tag = r.take(1)?[0];
        labels.push(Label::from_u8(tag).ok_or_else(|| Error::Format {
            what: WHAT,
            message: format!("label byte {tag} at offset {at}"),
        })?);
        for chunk in r.take(d * 4)?.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            what: WHAT,
            message: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    FeatureMatrix::new(d, values, labels, ids, extractor_name)
}

pub fn features_save(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let bytes = features_write(m)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn features_load(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    features_read(&bytes)
}

/// `id,label,f0..f{d-1}`; floats use the shortest round-tripping form.
pub fn features_to_csv(m: &FeatureMatrix, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "id,label")?;
    for j in 0..m.d {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for i in 0..m.n {
        write!(w, "{},{}", m.sample_ids[i], m.labels[i])?;
        for v in m.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the CSV export format, e.g. features produced by an external
/// pipeline.
pub fn features_from_csv(text: &str, extractor_name: &str) -> Result<FeatureMatrix> {
    let bad = |row: usize, message: String| Error::Format {
        what: "feature CSV",
        message: format!("line {row}: {message}"),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").trim_end().split(',').collect();
    if header.len() < 3 || header[0] != "id" || header[1] != "label" {
        return Err(bad(1, "expected header `id,label,f0,...`".into()));
    }
    let d = header.len() - 2;
    let (mut values, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let row = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(bad(row, format!("expected {} fields, found {}", d + 2, fields.len())));
        }
        ids.push(fields[0].to_string());
        labels.push(
            Label::parse_token(fields[1]).ok_or_else(|| bad(row, format!("label `{}`", fields[1])))?,
        );
        for f in &fields[2..] {
            values.push(
                f.trim()
                    .parse::<f32>()
                    .map_err(|_| bad(row, format!("number `{f}`")))?,
            );
        }
    }
    FeatureMatrix::new(d, values, labels, ids, extractor_name)
}
