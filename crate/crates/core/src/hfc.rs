//! Spectral correlation statistics in the space and frequency domains.
//!
//! Every band is vectorised and compared with every other band using the
//! Pearson coefficient, once on the pixels and once on the band-wise DCT
//! coefficients. Token curves repeat the comparison inside `K x K` windows
//! of the spectrogram, ordered from low to high frequency.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::dct::dct2_forward;
use crate::error::{Error, Result};
use crate::io::hsic;
use crate::tensor::Tensor;

/// Number of histogram bins over `[-1, 1]` in corpus statistics.
pub const HIST_BINS: usize = 50;

/// Pearson product-moment correlation, clamped to `[-1, 1]`.
///
/// Fails when the inputs differ in length, are shorter than two, or when
/// either vector is constant (the coefficient is undefined there).
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("pearson", &[a.len()], &[b.len()]));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("pearson needs at least two samples"));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // treat variance at rounding level of the mean as zero
    let tiny = |s: f64, m: f64| s <= (n as f64) * (m.abs() * 1e-14).powi(2);
    if saa == 0.0 || sbb == 0.0 || tiny(saa, ma) || tiny(sbb, mb) {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    pearson(&ranks(a), &ranks(b))
}

/// Pairwise Pearson matrix of a set of equally long vectors. Undefined
/// entries are `NaN`.
fn correlation_matrix(vectors: &[Vec<f64>]) -> Tensor {
    let c = vectors.len();
    let mut m = Tensor::full(&[c, c], f64::NAN);
    for i in 0..c {
        for j in i..c {
            if let Ok(r) = pearson(&vectors[i], &vectors[j]) {
                let r = if i == j { 1.0 } else { r };
                m.set(&[i, j], r);
                m.set(&[j, i], r);
            }
        }
    }
    m
}

/// Mean over defined entries, plus the number of undefined ones.
fn defined_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        if v.is_nan() {
            missing += 1;
        } else {
            sum += v;
            n += 1;
        }
    }
    let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
    (mean, missing)
}

/// Band-by-band correlation maps in both domains.
#[derive(Clone, Debug)]
pub struct CorrelationReport {
    /// `C x C`; `NaN` marks undefined entries.
    pub space_map: Tensor,
    pub freq_map: Tensor,
    /// Mean of all defined `C^2` entries.
    pub space_avg: f64,
    pub freq_avg: f64,
    pub space_missing: usize,
    pub freq_missing: usize,
}

pub fn correlation_maps(x: &HsiCube) -> Result<CorrelationReport> {
    let c = x.bands();
    if c < 2 {
        return Err(Error::invalid("correlation maps need at least two bands"));
    }
    let spec = dct2_forward(x)?;
    let space: Vec<Vec<f64>> = (0..c).map(|b| x.band(b)).collect();
    let freq: Vec<Vec<f64>> = (0..c).map(|b| spec.band(b)).collect();
    let space_map = correlation_matrix(&space);
    let freq_map = correlation_matrix(&freq);
    let (space_avg, space_missing) = defined_mean(space_map.data().iter().copied());
    let (freq_avg, freq_missing) = defined_mean(freq_map.data().iter().copied());
    Ok(CorrelationReport {
        space_map,
        freq_map,
        space_avg,
        freq_avg,
        space_missing,
        freq_missing,
    })
}

/// Mean inter-band correlation of one spectrogram token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenPoint {
    /// Top-left DCT coordinate of the token.
    pub u: usize,
    pub v: usize,
    /// Mean Pearson coefficient over defined band pairs (`NaN` if none).
    pub mean_corr: f64,
}

/// Token correlations ordered from low to high frequency: by the
/// anti-diagonal `u + v` of the top-left coefficient, ties broken by `u`.
#[derive(Clone, Debug)]
pub struct TokenCorrelationCurve {
    pub token_size: usize,
    pub points: Vec<TokenPoint>,
}

impl TokenCorrelationCurve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_corr).collect()
    }
}

pub fn token_correlation(x: &HsiCube, k: usize) -> Result<TokenCorrelationCurve> {
    let (h, w, c) = x.dims();
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::invalid(format!(
            "token size {k} must divide the spatial size {h}x{w}"
        )));
    }
    if c < 2 {
        return Err(Error::invalid("token correlation needs at least two bands"));
    }
    let spec = dct2_forward(x)?;
    let mut points = Vec::with_capacity((h / k) * (w / k));
    for tu in 0..h / k {
        for tv in 0..w / k {
            let slices: Vec<Vec<f64>> = (0..c)
                .map(|b| {
                    let mut s = Vec::with_capacity(k * k);
                    for u in tu * k..(tu + 1) * k {
                        for v in tv * k..(tv + 1) * k {
                            s.push(spec.get(u, v, b));
                        }
                    }
                    s
                })
                .collect();
            let pairs = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j)));
            let corr = pairs.map(|(i, j)| pearson(&slices[i], &slices[j]).unwrap_or(f64::NAN));
            let (mean_corr, _) = defined_mean(corr);
            points.push(TokenPoint {
                u: tu * k,
                v: tv * k,
                mean_corr,
            });
        }
    }
    points.sort_by_key(|p| (p.u + p.v, p.u));
    Ok(TokenCorrelationCurve {
        token_size: k,
        points,
    })
}

/// Histogram bin of a value in `[-1, 1]`; the last bin is closed.
pub fn hist_bin(v: f64) -> usize {
    let b = ((v + 1.0) / 2.0 * HIST_BINS as f64).floor();
    (b.max(0.0) as usize).min(HIST_BINS - 1)
}

#[derive(Clone, Debug)]
pub struct CorpusRow {
    pub path: PathBuf,
    pub bands: usize,
    pub space_avg: f64,
    pub freq_avg: f64,
}

/// Per-cube averages and their histograms over a corpus of HSIC files.
#[derive(Clone, Debug)]
pub struct CorpusStats {
    pub rows: Vec<CorpusRow>,
    /// Files that could not be read or analysed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    pub space_hist: Vec<usize>,
    pub freq_hist: Vec<usize>,
}

impl CorpusStats {
    pub fn from_cubes<'a>(cubes: impl IntoIterator<Item = (PathBuf, &'a HsiCube)>) -> Self {
        let mut stats = CorpusStats {
            rows: Vec::new(),
            skipped: Vec::new(),
            space_hist: vec![0; HIST_BINS],
            freq_hist: vec![0; HIST_BINS],
        };
        for (path, cube) in cubes {
            stats.push(path, correlation_maps(cube).map(|r| (cube.bands(), r)));
        }
        stats
    }

    fn push(&mut self, path: PathBuf, result: Result<(usize, CorrelationReport)>) {
        match result {
            Ok((bands, r)) if r.space_avg.is_finite() && r.freq_avg.is_finite() => {
                self.space_hist[hist_bin(r.space_avg)] += 1;
                self.freq_hist[hist_bin(r.freq_avg)] += 1;
                self.rows.push(CorpusRow {
                    path,
                    bands,
                    space_avg: r.space_avg,
                    freq_avg: r.freq_avg,
                });
            }
            Ok(_) => self.skipped.push((path, "no defined correlations".into())),
            Err(e) => self.skipped.push((path, e.to_string())),
        }
    }

    pub fn mean_space_avg(&self) -> f64 {
        self.rows.iter().map(|r| r.space_avg).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_freq_avg(&self) -> f64 {
        self.rows.iter().map(|r| r.freq_avg).sum::<f64>() / self.rows.len() as f64
    }

    /// CSV: one row per cube, a blank line, then the histogram block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,bands,space_avg,freq_avg\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6}",
                r.path.display(),
                r.bands,
                r.space_avg,
                r.freq_avg
            );
        }
        s.push('\n');
        s.push_str("bin_lo,bin_hi,space_count,freq_count\n");
        for b in 0..HIST_BINS {
            let lo = -1.0 + 2.0 * b as f64 / HIST_BINS as f64;
            let hi = lo + 2.0 / HIST_BINS as f64;
            let _ = writeln!(
                s,
                "{lo:.2},{hi:.2},{},{}",
                self.space_hist[b], self.freq_hist[b]
            );
        }
        s
    }
}

/// Reads every file and gathers correlation statistics. Unreadable files
/// are skipped with a warning and listed in [`CorpusStats::skipped`].
pub fn corpus_stats<P: AsRef<Path> + Sync>(paths: &[P]) -> Result<CorpusStats> {
    if paths.is_empty() {
        return Err(Error::invalid("corpus needs at least one file"));
    }
    let results: Vec<(PathBuf, Result<(usize, CorrelationReport)>)> = paths
        .par_iter()
        .map(|p| {
            let path = p.as_ref().to_path_buf();
            let r = hsic::read_hsic(&path).and_then(|cube| Ok((cube.bands(), correlation_maps(&cube)?)));
            (path, r)
        })
        .collect();
    let mut stats = CorpusStats::from_cubes(std::iter::empty());
    for (path, r) in results {
        if let Err(e) = &r {
            log::warn!("skipping {}: {e}", path.display());
        }
        stats.push(path, r);
    }
    Ok(stats)
}

/// Long-format CSV of both maps: `domain,i,j,corr` (empty for undefined).
pub fn maps_csv(r: &CorrelationReport) -> String {
    let mut s = String::from("domain,i,j,corr\n");
    for (name, m) in [("space", &r.space_map), ("freq", &r.freq_map)] {
        let c = m.shape()[0];
        for i in 0..c {
            for j in 0..c {
                let v = m.get(&[i, j]);
                if v.is_nan() {
                    let _ = writeln!(s, "{name},{i},{j},");
                } else {
                    let _ = writeln!(s, "{name},{i},{j},{v:.6}");
                }
            }
        }
    }
    let _ = writeln!(s, "# space_avg={:.6} freq_avg={:.6} space_missing={} freq_missing={}",
        r.space_avg, r.freq_avg, r.space_missing, r.freq_missing);
    s
}

pub fn token_curve_csv(curve: &TokenCorrelationCurve) -> String {
    let mut s = String::from("token,u,v,mean_corr\n");
    for (i, p) in curve.points.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{:.6}", i + 1, p.u, p.v, p.mean_corr);
    }
    s
}
