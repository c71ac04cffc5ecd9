//! Scalar view of the squash nonlinearity, for inspection and plotting.

use std::io::Write;

use crate::error::{Error, Result};

/// One sample of the scalar squash curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub s: f64,
    pub value: f64,
    pub derivative: f64,
}

/// Uniform samples of s ↦ sign(s)·s²/(1+s²) and its derivative 2|s|/(1+s²)².
pub fn squash_scalar_curve(s_min: f64, s_max: f64, n_points: usize) -> Result<Vec<CurvePoint>> {
    if n_points < 2 {
        return Err(Error::InvalidSpec(format!(
            "curve needs at least 2 points, got {n_points}"
        )));
    }
    if !(s_min < s_max) {
        return Err(Error::InvalidSpec(format!(
            "curve range must satisfy s_min < s_max, got [{s_min}, {s_max}]"
        )));
    }
    let step = (s_max - s_min) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            let s = s_min + i as f64 * step;
            let s2 = s * s;
            CurvePoint {
                s,
                value: s.signum() * s2 / (1.0 + s2),
                derivative: 2.0 * s.abs() / ((1.0 + s2) * (1.0 + s2)),
            }
        })
        .collect())
}

/// Comma-separated table of the curve: header line, then one row per sample.
pub fn write_curve<W: Write>(points: &[CurvePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "s,value,derivative")?;
    for p in points {
        writeln!(out, "{},{},{}", p.s, p.value, p.derivative)?;
    }
    Ok(())
}
