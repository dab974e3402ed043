//! TUM trajectory files: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error)]
pub enum TumError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Formats `x` with nine significant digits, without exponent notation.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".to_string()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

pub fn format_line(stamp: f64, pose: &Pose) -> String {
    let t = pose.translation();
    let q = pose.quaternion();
    let mut line = String::new();
    let _ = write!(
        line,
        "{} {} {} {} {} {} {} {}",
        sig9(stamp),
        sig9(t.x),
        sig9(t.y),
        sig9(t.z),
        sig9(q.i),
        sig9(q.j),
        sig9(q.k),
        sig9(q.w)
    );
    line
}

pub fn write_tum<W: Write>(mut w: W, samples: &[(f64, Pose)]) -> std::io::Result<()> {
    for (stamp, pose) in samples {
        writeln!(w, "{}", format_line(*stamp, pose))?;
    }
    Ok(())
}

/// Reads a TUM file. Blank lines and `#` comments are skipped; quaternions
/// are renormalized.
pub fn read_tum<R: BufRead>(r: R) -> Result<Vec<(f64, Pose)>, TumError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = trimmed.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| TumError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if vals.len() != 8 {
            return Err(TumError::Parse {
                line: i + 1,
                message: format!("expected 8 fields, found {}", vals.len()),
            });
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() < 1e-6 || !vals.iter().all(|v| v.is_finite()) {
            return Err(TumError::Parse {
                line: i + 1,
                message: "degenerate quaternion or non-finite value".into(),
            });
        }
        let pose = Pose::from_quaternion(
            &UnitQuaternion::from_quaternion(q),
            Vector3::new(vals[1], vals[2], vals[3]),
        );
        out.push((vals[0], pose));
    }
    Ok(out)
}
