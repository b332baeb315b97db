//! Text formats: tensors, masks, cherry factors, rank strings, config files.
//!
//! Tensor files are plain text:
//!
//! ```text
//! # optional comment lines anywhere
//! 3
//! 4 5 6
//! <120 whitespace-separated values, first mode fastest>
//! ```
//!
//! Values are written with 17 significant digits so a write/read cycle is
//! bit-exact. Masks use the same layout with `0`/`1` entries.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cherry::{CherryFactors, RankMatrix};
use crate::error::{Error, Result};
use crate::eval::Mask;
use crate::tensor::{numel, DenseTensor, Matrix};

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Whitespace tokens with their 1-based line numbers, skipping `#` lines.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .flat_map(|(n, l)| l.split_whitespace().map(move |t| (n + 1, t)))
}

/// Non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

struct Header {
    shape: Vec<usize>,
    /// Line number of the last header line.
    line: usize,
}

fn parse_header<'a>(
    path: &Path,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Result<Header> {
    let (n_line, n_text) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file: expected the tensor order"))?;
    let order: usize = n_text.parse().map_err(|_| {
        Error::parse(path, n_line, format!("expected the tensor order, found {n_text:?}"))
    })?;
    if order == 0 {
        return Err(Error::parse(path, n_line, "tensor order must be at least 1"));
    }
    let (d_line, d_text) = lines
        .next()
        .ok_or_else(|| Error::parse(path, n_line + 1, "missing dimension line"))?;
    let shape = d_text
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::parse(path, d_line, format!("invalid dimension {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if shape.len() != order {
        return Err(Error::parse(
            path,
            d_line,
            format!("order {order} declared but {} dimensions given", shape.len()),
        ));
    }
    Ok(Header { shape, line: d_line })
}

/// Parses the tensor text format. `path` is only used in diagnostics.
pub fn parse_tensor(path: &Path, text: &str) -> Result<DenseTensor> {
    let mut lines = content_lines(text);
    let header = parse_header(path, &mut lines)?;
    let expected = numel(&header.shape);
    let body: String = text
        .lines()
        .skip(header.line)
        .map(|l| if l.trim_start().starts_with('#') { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let mut values = Vec::with_capacity(expected);
    let mut last_line = header.line;
    for (n, tok) in tokens(&body) {
        let line = n + header.line;
        last_line = line;
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(path, line, format!("non-numeric value {tok:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(path, line, format!("non-finite value {tok:?}")));
        }
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::parse(
            path,
            last_line,
            format!(
                "shape {:?} expects {expected} values, got {}",
                header.shape,
                values.len()
            ),
        ));
    }
    DenseTensor::new(header.shape, values)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    parse_tensor(path, &read_text(path)?)
}

fn format_body(shape: &[usize], values: impl Iterator<Item = String>) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n", shape.len()));
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    out.push_str(&dims.join(" "));
    out.push('\n');
    let row = shape[0];
    let vals: Vec<String> = values.collect();
    for chunk in vals.chunks(row) {
        out.push_str(&chunk.join(" "));
        out.push('\n');
    }
    out
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_tensor(t: &DenseTensor) -> String {
    format_body(t.shape(), t.values().iter().map(|&v| format_value(v)))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_atomic(path.as_ref(), format_tensor(t).as_bytes())
}

pub fn format_mask(m: &Mask) -> String {
    format_body(
        m.shape(),
        m.observed().iter().map(|&b| if b { "1" } else { "0" }.to_string()),
    )
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    write_atomic(path.as_ref(), format_mask(m).as_bytes())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    Mask::from_tensor(&t).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Parses `"4,4,4"` (strict upper triangle, row-major) or
/// `"0,2,3;2,0,4;3,4,0"` (full rows separated by `;`).
pub fn parse_ranks(s: &str, n: usize) -> Result<RankMatrix> {
    let parse_list = |part: &str| -> Result<Vec<usize>> {
        part.split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidRanks(format!("not a non-negative integer: {t:?}")))
            })
            .collect()
    };
    let s = s.trim();
    if s.contains(';') {
        let rows = s.split(';').map(parse_list).collect::<Result<Vec<_>>>()?;
        if rows.len() != n {
            return Err(Error::InvalidRanks(format!(
                "wrong count: order {n} needs {n} rows, got {}",
                rows.len()
            )));
        }
        RankMatrix::from_rows(&rows)
    } else {
        let upper = parse_list(s)?;
        let expected = n * n.saturating_sub(1) / 2;
        if upper.len() != expected {
            return Err(Error::InvalidRanks(format!(
                "wrong count: order {n} needs {expected} upper-triangle ranks, got {}",
                upper.len()
            )));
        }
        RankMatrix::from_upper(n, &upper)
    }
}

/// Comma-separated positive integers, e.g. a shape `"256,256,31"`.
pub fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("invalid {what} entry {t:?}")))
        })
        .collect()
}

/// Serializes factors: order, dimensions, upper-triangle ranks, then one
/// line per `G[k,i]` (storage order, column-major entries).
pub fn format_factors(g: &CherryFactors) -> String {
    let mut out = String::from("# cherry factors: order, dims, ranks (upper triangle), G[k,i] rows\n");
    out.push_str(&format!("{}\n", g.order()));
    let dims: Vec<String> = g.shape().iter().map(|d| d.to_string()).collect();
    out.push_str(&dims.join(" "));
    out.push('\n');
    let ranks: Vec<String> = g.ranks().upper().iter().map(|r| r.to_string()).collect();
    out.push_str(&ranks.join(" "));
    out.push('\n');
    for m in g.factors() {
        let vals: Vec<String> = m.values().iter().map(|&v| format_value(v)).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_factors(path: impl AsRef<Path>, g: &CherryFactors) -> Result<()> {
    write_atomic(path.as_ref(), format_factors(g).as_bytes())
}

pub fn read_factors(path: impl AsRef<Path>) -> Result<CherryFactors> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let header = parse_header(path, &mut lines)?;
    let n = header.shape.len();
    let (r_line, r_text) = lines
        .next()
        .ok_or_else(|| Error::parse(path, header.line + 1, "missing rank line"))?;
    let upper = r_text
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(path, r_line, format!("invalid rank {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks =
        RankMatrix::from_upper(n, &upper).map_err(|e| Error::parse(path, r_line, e.to_string()))?;
    let mut factors = Vec::with_capacity(n * (n - 1));
    for k in 0..n {
        for i in (0..n).filter(|&i| i != k) {
            let (line, body) = lines.next().ok_or_else(|| {
                Error::parse(path, r_line, format!("missing values for G[{},{}]", k + 1, i + 1))
            })?;
            let vals = body
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(path, line, format!("non-numeric value {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let m = Matrix::new(ranks.get(k, i), header.shape[k], vals)
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
            factors.push(m);
        }
    }
    CherryFactors::new(header.shape, ranks, factors)
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    parse_config(path, &read_text(path)?)
}

pub fn parse_config(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(text) {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, format!("expected key=value, found {l:?}")))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::parse(path, line, "empty key"));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}
