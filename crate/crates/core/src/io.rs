//! Plain-text file formats: timetag streams, pulse streams, key/value
//! reports, and columnar bench data.
//!
//! All formats are line-oriented ASCII. Comment lines start with `#`; the
//! first comment of a typed file carries a format tag and version so readers
//! fail loudly on the wrong kind of file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::domain::{IntensityClass, Polarization, Port, PulseRecord, TagOrigin, TimeTag};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("expected `{expected}` header, found `{found}`")]
    WrongFormat { expected: String, found: String },
}

fn parse_err(line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        reason: reason.into(),
    }
}

pub const TIMETAG_TAG: &str = "timetag v1";
pub const PULSES_TAG: &str = "pulses v1";
pub const REPORT_TAG: &str = "report v1";

/// Timetag stream resolution used on disk. Times are integer picoseconds.
pub const TIMETAG_RESOLUTION_PS: u64 = 1;

/// Writes timetags as `port time_ps` rows. Times are rounded to integer
/// picoseconds; tag origin (photon vs dark) is deliberately not stored, the
/// flight hardware cannot know it either.
pub fn write_timetags(out: &mut impl Write, tags: &[TimeTag]) -> Result<(), FormatError> {
    writeln!(out, "# {TIMETAG_TAG}")?;
    writeln!(out, "# resolution_ps {TIMETAG_RESOLUTION_PS}")?;
    writeln!(out, "# columns: port time_ps")?;
    for tag in tags {
        let ps = (tag.time_s * 1e12).round() as i64;
        writeln!(out, "{} {}", tag.port.label(), ps)?;
    }
    Ok(())
}

fn check_tag(first_line: &str, expected: &str) -> Result<(), FormatError> {
    let found = first_line.trim_start_matches('#').trim();
    if found != expected {
        return Err(FormatError::WrongFormat {
            expected: expected.into(),
            found: found.into(),
        });
    }
    Ok(())
}

/// Reads a timetag stream. Returned tags carry `TagOrigin::Signal`; origin
/// is not recoverable from disk.
pub fn read_timetags(input: &mut impl BufRead) -> Result<Vec<TimeTag>, FormatError> {
    let mut tags = Vec::new();
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if !saw_header {
                check_tag(line, TIMETAG_TAG)?;
                saw_header = true;
            }
            continue;
        }
        if !saw_header {
            return Err(parse_err(i + 1, "data before header"));
        }
        let mut parts = line.split_whitespace();
        let port = parts
            .next()
            .and_then(Port::from_label)
            .ok_or_else(|| parse_err(i + 1, "bad port label"))?;
        let ps: i64 = parts
            .next()
            .ok_or_else(|| parse_err(i + 1, "missing time column"))?
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad time: {e}")))?;
        if parts.next().is_some() {
            return Err(parse_err(i + 1, "trailing columns"));
        }
        tags.push(TimeTag {
            port,
            time_s: ps as f64 * 1e-12,
            origin: TagOrigin::Signal,
        });
    }
    if !saw_header {
        return Err(FormatError::WrongFormat {
            expected: TIMETAG_TAG.into(),
            found: "(empty file)".into(),
        });
    }
    Ok(tags)
}

/// Writes emitted pulses as `index time_s polarization class photons` rows.
pub fn write_pulses(out: &mut impl Write, pulses: &[PulseRecord]) -> Result<(), FormatError> {
    writeln!(out, "# {PULSES_TAG}")?;
    writeln!(out, "# columns: index time_s polarization class photons")?;
    for p in pulses {
        writeln!(
            out,
            "{} {:.12e} {} {} {}",
            p.index,
            p.emit_time_s,
            p.polarization.label(),
            p.intensity.label(),
            p.photon_count
        )?;
    }
    Ok(())
}

fn polarization_from_label(s: &str) -> Option<Polarization> {
    match s {
        "H" => Some(Polarization::H),
        "V" => Some(Polarization::V),
        "D" => Some(Polarization::D),
        "A" => Some(Polarization::A),
        _ => None,
    }
}

fn class_from_label(s: &str) -> Option<IntensityClass> {
    match s {
        "signal" => Some(IntensityClass::Signal),
        "decoy" => Some(IntensityClass::Decoy),
        "vacuum" => Some(IntensityClass::Vacuum),
        _ => None,
    }
}

pub fn read_pulses(input: &mut impl BufRead) -> Result<Vec<PulseRecord>, FormatError> {
    let mut pulses = Vec::new();
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if !saw_header {
                check_tag(line, PULSES_TAG)?;
                saw_header = true;
            }
            continue;
        }
        if !saw_header {
            return Err(parse_err(i + 1, "data before header"));
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(parse_err(i + 1, format!("expected 5 columns, got {}", cols.len())));
        }
        pulses.push(PulseRecord {
            index: cols[0]
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad index: {e}")))?,
            emit_time_s: cols[1]
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad time: {e}")))?,
            polarization: polarization_from_label(cols[2])
                .ok_or_else(|| parse_err(i + 1, "bad polarization label"))?,
            intensity: class_from_label(cols[3])
                .ok_or_else(|| parse_err(i + 1, "bad intensity class"))?,
            photon_count: cols[4]
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad photon count: {e}")))?,
        });
    }
    if !saw_header {
        return Err(FormatError::WrongFormat {
            expected: PULSES_TAG.into(),
            found: "(empty file)".into(),
        });
    }
    Ok(pulses)
}

/// Writes a key/value report, keys sorted, one `key = value` per line. The
/// sorted order makes the file byte-stable for a given map.
pub fn write_report(
    out: &mut impl Write,
    entries: &BTreeMap<String, String>,
) -> Result<(), FormatError> {
    writeln!(out, "# {REPORT_TAG}")?;
    for (k, v) in entries {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(())
}

pub fn read_report(input: &mut impl BufRead) -> Result<BTreeMap<String, String>, FormatError> {
    let mut entries = BTreeMap::new();
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if !saw_header {
                check_tag(line, REPORT_TAG)?;
                saw_header = true;
            }
            continue;
        }
        if !saw_header {
            return Err(parse_err(i + 1, "data before header"));
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(i + 1, "missing `=`"))?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    if !saw_header {
        return Err(FormatError::WrongFormat {
            expected: REPORT_TAG.into(),
            found: "(empty file)".into(),
        });
    }
    Ok(entries)
}

/// Reads whitespace-separated numeric columns, skipping comments and blank
/// lines. Every row must have `columns` entries.
pub fn read_columns(
    input: &mut impl BufRead,
    columns: usize,
) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|c| {
                c.parse()
                    .map_err(|e| parse_err(i + 1, format!("bad number `{c}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != columns {
            return Err(parse_err(
                i + 1,
                format!("expected {columns} columns, got {}", row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a waveplate sweep: `angle_deg h v d a` rows.
pub fn read_sweep(input: &mut impl BufRead) -> Result<(Vec<f64>, Vec<[f64; 4]>), FormatError> {
    let rows = read_columns(input, 5)?;
    let angles = rows.iter().map(|r| r[0]).collect();
    let counts = rows.iter().map(|r| [r[1], r[2], r[3], r[4]]).collect();
    Ok((angles, counts))
}

/// Reads beam spot measurements: `distance_m width_x_m width_y_m` rows.
pub fn read_spots(input: &mut impl BufRead) -> Result<Vec<(f64, f64, f64)>, FormatError> {
    Ok(read_columns(input, 3)?
        .into_iter()
        .map(|r| (r[0], r[1], r[2]))
        .collect())
}

/// Hex rendering of packed key bytes, lowercase, for key export.
pub fn key_hex(bytes: &[u8]) -> String {
    hex::encode(bytes)
}
