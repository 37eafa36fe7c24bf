//! Event annotation files.
//!
//! `tut-sed-csv` rows are `onset,offset,label` or the five-column
//! `file,scene,onset,offset,label` layout, comma or tab separated, without a
//! required header. `polysed-csv` has the fixed header
//! `onset,offset,label,azimuth,elevation,gain`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use polysed_core::EventInstance;

use crate::error::{read_text, write_file, Error, Result};

pub const POLYSED_HEADER: [&str; 6] = ["onset", "offset", "label", "azimuth", "elevation", "gain"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnotationFormat {
    TutSedCsv,
    PolysedCsv,
}

impl FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tut-sed-csv" => Ok(Self::TutSedCsv),
            "polysed-csv" => Ok(Self::PolysedCsv),
            other => Err(Error::Usage(format!("unknown annotation format {other:?}"))),
        }
    }
}

struct LineError(usize, String);

fn number(field: &str, what: &str, line: usize) -> Result<f64, LineError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| LineError(line, format!("{what} {field:?} is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LineError(line, format!("{what} must be finite")))
    }
}

fn reader(text: &str, delimiter: u8) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(delimiter)
        .from_reader(text.as_bytes())
}

fn parse_rows(text: &str, format: AnnotationFormat) -> Result<Vec<EventInstance>, LineError> {
    let delimiter = match format {
        AnnotationFormat::TutSedCsv if text.lines().next().is_some_and(|l| l.contains('\t')) => b'\t',
        _ => b',',
    };
    let mut events = Vec::new();
    let mut saw_header = false;
    for rec in reader(text, delimiter).records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            LineError(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<&str> = rec.iter().collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let ev = match format {
            AnnotationFormat::PolysedCsv => {
                if !saw_header {
                    if fields != POLYSED_HEADER {
                        return Err(LineError(line, format!("expected header {}", POLYSED_HEADER.join(","))));
                    }
                    saw_header = true;
                    continue;
                }
                if fields.len() != 6 {
                    return Err(LineError(line, format!("expected 6 fields, found {}", fields.len())));
                }
                EventInstance {
                    label: fields[2].to_string(),
                    onset: number(fields[0], "onset", line)?,
                    offset: number(fields[1], "offset", line)?,
                    azimuth: number(fields[3], "azimuth", line)?,
                    elevation: number(fields[4], "elevation", line)?,
                    gain: number(fields[5], "gain", line)?,
                }
            }
            AnnotationFormat::TutSedCsv => {
                let f = match fields.len() {
                    3 => &fields[..],
                    5 => &fields[2..],
                    n => return Err(LineError(line, format!("expected 3 or 5 fields, found {n}"))),
                };
                if events.is_empty() && !saw_header && f[0].eq_ignore_ascii_case("onset") {
                    saw_header = true;
                    continue;
                }
                EventInstance::new(f[2], number(f[0], "onset", line)?, number(f[1], "offset", line)?)
            }
        };
        if ev.label.is_empty() {
            return Err(LineError(line, "empty label".into()));
        }
        ev.validate().map_err(|e| LineError(line, e.to_string()))?;
        events.push(ev);
    }
    if format == AnnotationFormat::PolysedCsv && !saw_header && !text.trim().is_empty() {
        return Err(LineError(1, "missing header".into()));
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    Ok(events)
}

/// Parses annotation text; `path` is only used in error messages.
pub fn parse_annotations(text: &str, format: AnnotationFormat, path: &Path) -> Result<Vec<EventInstance>> {
    parse_rows(text, format).map_err(|LineError(line, reason)| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Events sorted by onset.
pub fn load_annotations(path: &Path, format: AnnotationFormat) -> Result<Vec<EventInstance>> {
    parse_annotations(&read_text(path)?, format, path)
}

pub fn format_polysed_csv(events: &[EventInstance]) -> String {
    let mut s = POLYSED_HEADER.join(",");
    s.push('\n');
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.onset, e.offset, e.label, e.azimuth, e.elevation, e.gain
        );
    }
    s
}

pub fn write_polysed_csv(path: &Path, events: &[EventInstance]) -> Result<()> {
    write_file(path, format_polysed_csv(events))
}
