//! Binary greyscale PGM (P5) heatmaps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeatmapRange {
    /// Maps `[lo, hi]` linearly onto `0..=255`, clipping outside values.
    Fixed(f64, f64),
    /// Uses the matrix's own minimum and maximum.
    MinMax,
}

/// Grey level of `v` over `[lo, hi]`: `floor(255 * t)` with `t` clipped to
/// `[0, 1]`. A degenerate range maps everything to 0.
pub fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) || !v.is_finite() {
        return 0;
    }
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * t).floor() as u8
}

pub fn encode(matrix: &Tensor, range: HeatmapRange) -> Result<Vec<u8>> {
    if matrix.rank() != 2 {
        return Err(Error::invalid(format!(
            "heatmap needs a matrix, got shape {:?}",
            matrix.shape()
        )));
    }
    let (h, w) = (matrix.shape()[0], matrix.shape()[1]);
    let (lo, hi) = match range {
        HeatmapRange::Fixed(lo, hi) => (lo, hi),
        HeatmapRange::MinMax => {
            let finite = matrix.data().iter().copied().filter(|v| v.is_finite());
            finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(matrix.data().iter().map(|&v| quantize(v, lo, hi)));
    Ok(out)
}

pub fn export_heatmap(matrix: &Tensor, path: impl AsRef<Path>, range: HeatmapRange) -> Result<()> {
    fs::write(path, encode(matrix, range)?)?;
    Ok(())
}
