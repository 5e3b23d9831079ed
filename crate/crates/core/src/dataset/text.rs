//! Line-oriented comma-separated files with optional `[dataset]` sections.
//!
//! Blank lines and lines starting with `#` are ignored. A line `[name]`
//! starts a section; rows before any section belong to [`DEFAULT_SECTION`].
//! A first row equal to the column header is skipped.

use std::collections::BTreeMap;

use super::{DatasetError, Location};

pub const DEFAULT_SECTION: &str = "";

/// Rows grouped by dataset section, in input order within a section.
pub type Sectioned<T> = BTreeMap<String, Vec<T>>;

pub(crate) fn parse_sectioned<T>(
    text: &str,
    origin: &str,
    header: &str,
    mut row: impl FnMut(usize, &str) -> Result<T, DatasetError>,
) -> Result<Sectioned<T>, DatasetError> {
    let mut out: Sectioned<T> = BTreeMap::new();
    let mut section = DEFAULT_SECTION.to_string();
    let mut header_allowed = true;
    let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
    let header = squash(header);
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').map(str::trim).filter(|n| !n.is_empty());
            let Some(name) = name else {
                return Err(DatasetError::Parse {
                    origin: origin.to_string(),
                    location: Location::Line(line_no),
                    msg: format!("malformed section header '{line}'"),
                });
            };
            section = name.to_string();
            header_allowed = true;
            continue;
        }
        if header_allowed && squash(line) == header {
            header_allowed = false;
            continue;
        }
        header_allowed = false;
        let value = row(line_no, line)?;
        out.entry(section.clone()).or_default().push(value);
    }
    Ok(out)
}

pub(crate) fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        origin: origin.to_string(),
        location: Location::Line(line),
        msg: msg.into(),
    }
}

pub(crate) fn parse_u32(origin: &str, line: usize, field: &str, s: &str) -> Result<u32, DatasetError> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(origin, line, format!("field '{field}': expected a non-negative integer, got '{}'", s.trim())))
}

/// Parses a float; NaN and infinities are reported as non-finite values.
pub(crate) fn parse_f64(
    origin: &str,
    line: usize,
    field: &'static str,
    s: &str,
) -> Result<f64, DatasetError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| parse_err(origin, line, format!("field '{field}': cannot parse '{}'", s.trim())))?;
    if !v.is_finite() {
        return Err(DatasetError::NonFiniteValue {
            origin: origin.to_string(),
            line,
            field,
        });
    }
    Ok(v)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
