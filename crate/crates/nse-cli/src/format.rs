// SPDX-License-Identifier: MIT OR Apache-2.0

//! Matrix and projector file formats.
//!
//! NSM1 layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `NSM1` |
//! | 2 | version `u16` = 1 |
//! | 2 | flags `u16` = 0 |
//! | 8 | rows `u64` |
//! | 8 | cols `u64` |
//! | 8·rows·cols | `f64` payload, row-major |
//!
//! NSP1 stores `d`, the null rank `r`, the cutoff, all `d` eigenvalues in
//! descending order and `u_null` (`d × r`, row-major). The projector is
//! rebuilt from `u_null` on load.

use std::io::Write;
use std::path::Path;

use nse_nullspace::NullProjector;
use nse_tensor::Matrix;

use crate::{CliError, Result};

pub const NSM1_MAGIC: &[u8; 4] = b"NSM1";
pub const NSP1_MAGIC: &[u8; 4] = b"NSP1";
pub const FORMAT_VERSION: u16 = 1;

const NSM1_HEADER: usize = 4 + 2 + 2 + 8 + 8;
const NSP1_HEADER: usize = 4 + 2 + 8 + 8 + 8;

fn malformed(what: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Format(format!("{what}: {msg}"))
}

/// Little-endian cursor that refuses to read past the end.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(self.what, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(f64::from_le_bytes(a))
    }

    fn finite_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| malformed(self.what, "payload size overflows"))?;
        let raw = self.take(bytes)?;
        let mut out = Vec::with_capacity(n);
        for c in raw.chunks_exact(8) {
            let mut a = [0u8; 8];
            a.copy_from_slice(c);
            let x = f64::from_le_bytes(a);
            if !x.is_finite() {
                return Err(malformed(self.what, "non-finite value in payload"));
            }
            out.push(x);
        }
        Ok(out)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        if self.take(4)? != want {
            return Err(malformed(self.what, "bad magic"));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u16()?;
        if v != FORMAT_VERSION {
            return Err(malformed(self.what, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| malformed(self.what, format!("dimension {v} too large")))
    }

    fn finish(self) -> Result<()> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(malformed(self.what, format!("{rest} trailing bytes")));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_nsm1(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(NSM1_HEADER + 8 * m.data().len());
    out.extend_from_slice(NSM1_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    put_f64s(&mut out, m.data());
    out
}

/// # Errors
///
/// [`CliError::Format`] on bad magic, version or flags, truncation, trailing
/// bytes or non-finite payload values.
pub fn decode_nsm1(buf: &[u8]) -> Result<Matrix> {
    let mut r = Reader::new(buf, "NSM1");
    r.magic(NSM1_MAGIC)?;
    r.version()?;
    let flags = r.u16()?;
    if flags != 0 {
        return Err(malformed("NSM1", format!("unknown flags {flags:#06x}")));
    }
    let rows = r.dim()?;
    let cols = r.dim()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| malformed("NSM1", "rows × cols overflows"))?;
    let data = r.finite_f64s(n)?;
    r.finish()?;
    Ok(Matrix::new(rows, cols, data)?)
}

pub fn encode_nsp1(p: &NullProjector) -> Vec<u8> {
    let d = p.dim();
    let r = p.null_rank();
    let mut out = Vec::with_capacity(NSP1_HEADER + 8 * d * (1 + r));
    out.extend_from_slice(NSP1_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&(r as u64).to_le_bytes());
    out.extend_from_slice(&p.cutoff().to_le_bytes());
    put_f64s(&mut out, p.eigenvalues());
    put_f64s(&mut out, p.u_null().data());
    out
}

/// # Errors
///
/// [`CliError::Format`] for structural problems, including `r > d` and
/// eigenvalues out of order; projector errors for an invalid cutoff.
pub fn decode_nsp1(buf: &[u8]) -> Result<NullProjector> {
    let mut rd = Reader::new(buf, "NSP1");
    rd.magic(NSP1_MAGIC)?;
    rd.version()?;
    let d = rd.dim()?;
    let r = rd.dim()?;
    if r > d {
        return Err(malformed(
            "NSP1",
            format!("null rank {r} exceeds dimension {d}"),
        ));
    }
    let cutoff = rd.f64()?;
    if !cutoff.is_finite() {
        return Err(malformed("NSP1", "non-finite cutoff"));
    }
    let eig = rd.finite_f64s(d)?;
    if eig.windows(2).any(|w| w[0] < w[1]) {
        return Err(malformed("NSP1", "eigenvalues not in descending order"));
    }
    let n = d
        .checked_mul(r)
        .ok_or_else(|| malformed("NSP1", "d × r overflows"))?;
    let u = rd.finite_f64s(n)?;
    rd.finish()?;
    let u_null = Matrix::new(d, r, u)?;
    Ok(NullProjector::from_parts(eig, u_null, cutoff)?)
}

/// `rows,cols` header, then one comma-separated row per line with 17
/// significant digits. Parsing the text back gives the same bits.
pub fn encode_csv(m: &Matrix) -> String {
    let mut s = format!("{},{}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// # Errors
///
/// [`CliError::Format`] on a bad header, ragged rows, unparsable or
/// non-finite values, or a row count different from the header.
pub fn decode_csv(text: &str) -> Result<Matrix> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed("CSV", "empty input"))?;
    let (r, c) = header
        .split_once(',')
        .ok_or_else(|| malformed("CSV", "header must be rows,cols"))?;
    let parse_dim = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| malformed("CSV", format!("bad header dimension {s:?}: {e}")))
    };
    let rows = parse_dim(r)?;
    let cols = parse_dim(c)?;
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        if line.is_empty() && cols == 0 {
            seen += 1;
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != cols {
            return Err(malformed(
                "CSV",
                format!("row {i} has {} values, expected {cols}", vals.len()),
            ));
        }
        for v in vals {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|e| malformed("CSV", format!("row {i}: bad value {v:?}: {e}")))?;
            if !x.is_finite() {
                return Err(malformed("CSV", format!("row {i}: non-finite value")));
            }
            data.push(x);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(malformed(
            "CSV",
            format!("expected {rows} rows, found {seen}"),
        ));
    }
    Ok(Matrix::new(rows, cols, data)?)
}

/// Write via a temporary file in the destination directory, then rename.
///
/// # Errors
///
/// [`CliError::Io`] with the destination path.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| CliError::io(path, e);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Reads NSM1 or CSV, chosen by the leading magic bytes.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(NSM1_MAGIC) {
        decode_nsm1(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| malformed("matrix file", "neither NSM1 nor UTF-8 CSV"))?;
        decode_csv(text)
    }
}

pub fn write_nsm1(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode_nsm1(m))
}

pub fn read_nsm1(path: &Path) -> Result<Matrix> {
    decode_nsm1(&read_bytes(path)?)
}

pub fn read_nsp1(path: &Path) -> Result<NullProjector> {
    decode_nsp1(&read_bytes(path)?)
}
