//! Tally files for analysing externally collected counts.
//!
//! JSON:
//!
//! ```json
//! {"format_version": 1, "elapsed_s": 0.84,
//!  "tallies": {"z": [{"detections": 9, "errors": 0}, ...], "x": [...]}}
//! ```
//!
//! CSV, one row per basis and intensity, with the protocol time in a comment:
//!
//! ```text
//! # elapsed_s = 0.84
//! basis,intensity,detections,errors
//! Z,mu1,91234,2931
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Basis, Intensity, ModelError, TallyCounts};

pub const COUNTS_FORMAT_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "basis,intensity,detections,errors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsFile {
    pub format_version: u32,
    /// Protocol time the counts were collected over (s).
    pub elapsed_s: f64,
    pub tallies: TallyCounts,
}

#[derive(Debug, Error)]
pub enum CountsError {
    #[error("malformed counts JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("unsupported format_version {0}, expected {COUNTS_FORMAT_VERSION}")]
    Version(u32),
    #[error("elapsed_s = {0} must be finite and non-negative")]
    Elapsed(f64),
    #[error("tallies violate an invariant: {0}")]
    Invariant(#[from] ModelError),
}

impl CountsFile {
    pub fn new(tallies: TallyCounts, elapsed_s: f64) -> Self {
        Self {
            format_version: COUNTS_FORMAT_VERSION,
            elapsed_s,
            tallies,
        }
    }

    pub fn validate(&self) -> Result<(), CountsError> {
        if self.format_version != COUNTS_FORMAT_VERSION {
            return Err(CountsError::Version(self.format_version));
        }
        if !(self.elapsed_s.is_finite() && self.elapsed_s >= 0.0) {
            return Err(CountsError::Elapsed(self.elapsed_s));
        }
        self.tallies.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, CountsError> {
        let file: Self = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("counts serialize infallibly")
    }

    pub fn from_csv(text: &str) -> Result<Self, CountsError> {
        let csv_err = |line: usize, message: String| CountsError::Csv { line, message };
        let mut elapsed = None;
        let mut header_seen = false;
        let mut seen = [[false; 3]; 2];
        let mut tallies = TallyCounts::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() {
                continue;
            }
            if let Some(comment) = row.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    if key.trim() == "elapsed_s" {
                        let v = value.trim().parse::<f64>().map_err(|e| csv_err(line, format!("elapsed_s: {e}")))?;
                        elapsed = Some(v);
                    }
                }
                continue;
            }
            if !header_seen {
                if row != CSV_HEADER {
                    return Err(csv_err(line, format!("expected header '{CSV_HEADER}'")));
                }
                header_seen = true;
                continue;
            }
            let cells: Vec<&str> = row.split(',').map(str::trim).collect();
            if cells.len() != 4 {
                return Err(csv_err(line, format!("expected 4 fields, found {}", cells.len())));
            }
            let basis = match cells[0] {
                "Z" | "z" => Basis::Z,
                "X" | "x" => Basis::X,
                other => return Err(csv_err(line, format!("basis '{other}' is not Z or X"))),
            };
            let k = Intensity::ALL
                .into_iter()
                .find(|k| k.label() == cells[1])
                .ok_or_else(|| csv_err(line, format!("intensity '{}' is not mu1, mu2 or mu3", cells[1])))?;
            let parse = |name: &str, s: &str| {
                s.parse::<u64>()
                    .map_err(|e| csv_err(line, format!("{name} '{s}': {e}")))
            };
            let detections = parse("detections", cells[2])?;
            let errors = parse("errors", cells[3])?;
            let b = usize::from(basis == Basis::X);
            if std::mem::replace(&mut seen[b][k.index()], true) {
                return Err(csv_err(line, format!("duplicate row for {basis} {}", k.label())));
            }
            if errors > detections {
                return Err(csv_err(
                    line,
                    format!("errors ({errors}) exceed detections ({detections}) for {basis} {}", k.label()),
                ));
            }
            let c = &mut tallies.basis_mut(basis)[k.index()];
            c.detections = detections;
            c.errors = errors;
        }
        if !header_seen {
            return Err(csv_err(1, format!("missing header '{CSV_HEADER}'")));
        }
        let file = Self::new(tallies, elapsed.unwrap_or(0.0));
        file.validate()?;
        Ok(file)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# elapsed_s = {}\n{CSV_HEADER}\n", self.elapsed_s);
        for basis in [Basis::Z, Basis::X] {
            for k in Intensity::ALL {
                let c = self.tallies.basis(basis)[k.index()];
                out.push_str(&format!("{basis},{},{},{}\n", k.label(), c.detections, c.errors));
            }
        }
        out
    }

    /// Chooses the reader by extension, falling back to sniffing for JSON.
    pub fn parse(text: &str, extension: Option<&str>) -> Result<Self, CountsError> {
        match extension {
            Some("json") => Self::from_json(text),
            Some("csv") => Self::from_csv(text),
            _ if text.trim_start().starts_with('{') => Self::from_json(text),
            _ => Self::from_csv(text),
        }
    }
}
