//! Calibration file parsing: the "P2:" projection matrix.

use super::CalibBundle;
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::path::Path;

/// Parse a KITTI calibration file: the line starting with `P2:` must carry
/// 12 numbers, filled row-major into the 3×4 projection matrix.
pub fn parse_calib<T: Real>(path: &Path) -> Result<CalibBundle<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("P2:") else {
            continue;
        };
        let values: Vec<&str> = rest.split_whitespace().collect();
        if values.len() != 12 {
            return Err(Error::Calib {
                path: path.into(),
                msg: format!("P2 expects 12 values, got {}", values.len()),
            });
        }
        let mut p2 = [[T::zero(); 4]; 3];
        for (i, raw) in values.iter().enumerate() {
            let v: T = raw.parse().map_err(|_| Error::Calib {
                path: path.into(),
                msg: format!("P2 entry {} is not numeric: {raw:?}", i + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Calib {
                    path: path.into(),
                    msg: format!("P2 entry {} is not finite", i + 1),
                });
            }
            p2[i / 4][i % 4] = v;
        }
        return Ok(CalibBundle { p2 });
    }
    Err(Error::Calib {
        path: path.into(),
        msg: "no P2 line".into(),
    })
}

/// Serialize a calibration bundle with just the P2 entry.
pub fn format_calib<T: Real>(calib: &CalibBundle<T>) -> String {
    let flat: Vec<String> = calib
        .p2
        .iter()
        .flat_map(|row| row.iter().map(|v| v.to_string()))
        .collect();
    format!("P2: {}\n", flat.join(" "))
}
