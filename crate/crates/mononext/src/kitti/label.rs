//! Devkit-format label file parsing and serialization.

use super::LabelRecord;
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::collections::BTreeMap;
use std::path::Path;

fn numeric<T: Real>(fields: &[&str], idx0: usize) -> std::result::Result<T, (usize, String)> {
    let raw = fields[idx0];
    raw.parse::<T>()
        .map_err(|_| (idx0 + 1, format!("non-numeric value {raw:?}")))
}

fn parse_fields<T: Real>(line: &str) -> std::result::Result<LabelRecord<T>, (usize, String)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 15 {
        return Err((
            fields.len() + 1,
            format!("expected at least 15 fields, got {}", fields.len()),
        ));
    }
    if fields.len() > 16 {
        return Err((17, format!("expected at most 16 fields, got {}", fields.len())));
    }
    let occlusion = numeric::<f64>(&fields, 2)? as i32;
    Ok(LabelRecord {
        class_name: fields[0].to_string(),
        truncation: numeric(&fields, 1)?,
        occlusion,
        alpha: numeric(&fields, 3)?,
        bbox2d: [
            numeric(&fields, 4)?,
            numeric(&fields, 5)?,
            numeric(&fields, 6)?,
            numeric(&fields, 7)?,
        ],
        dims: [numeric(&fields, 8)?, numeric(&fields, 9)?, numeric(&fields, 10)?],
        location: [
            numeric(&fields, 11)?,
            numeric(&fields, 12)?,
            numeric(&fields, 13)?,
        ],
        rotation_y: numeric(&fields, 14)?,
        score: if fields.len() == 16 {
            Some(numeric(&fields, 15)?)
        } else {
            None
        },
    })
}

/// Parse one devkit label line (15 fields, optional 16th score field).
pub fn parse_label_line<T: Real>(line: &str) -> Result<LabelRecord<T>> {
    parse_fields(line).map_err(|(field, msg)| Error::Parse {
        file: "<line>".into(),
        line: 1,
        field,
        msg,
    })
}

/// Parse a whole label file; empty files are fine, blank lines skipped.
pub fn parse_label_file<T: Real>(path: &Path) -> Result<Vec<LabelRecord<T>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        match parse_fields(raw) {
            Ok(rec) => records.push(rec),
            Err((field, msg)) => {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    field,
                    msg,
                })
            }
        }
    }
    Ok(records)
}

/// Serialize a record back into devkit format. Values print with Rust's
/// shortest round-trip float formatting, so parse ∘ format is the identity.
pub fn format_label_line<T: Real>(rec: &LabelRecord<T>) -> String {
    let mut s = format!(
        "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
        rec.class_name,
        rec.truncation,
        rec.occlusion,
        rec.alpha,
        rec.bbox2d[0],
        rec.bbox2d[1],
        rec.bbox2d[2],
        rec.bbox2d[3],
        rec.dims[0],
        rec.dims[1],
        rec.dims[2],
        rec.location[0],
        rec.location[1],
        rec.location[2],
        rec.rotation_y,
    );
    if let Some(score) = rec.score {
        s.push(' ');
        s.push_str(&score.to_string());
    }
    s
}

/// Write records, one line per object.
pub fn write_label_file<T: Real>(path: &Path, records: &[LabelRecord<T>]) -> Result<()> {
    let mut text = String::new();
    for rec in records {
        text.push_str(&format_label_line(rec));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read every `*.txt` label file in a directory, keyed by file stem
/// (frame id).
pub fn read_label_dir<T: Real>(dir: &Path) -> Result<BTreeMap<String, Vec<LabelRecord<T>>>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        out.insert(stem, parse_label_file(&path)?);
    }
    Ok(out)
}
