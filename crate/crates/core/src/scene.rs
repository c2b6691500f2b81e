//! Seeded synthetic hyperspectral scenes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::HsiCube;
use crate::dct::dct2_hwc;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// One positive smooth spatial pattern scaled per band, plus
    /// `(1 - rho)`-weighted noise.
    RankOneSmooth,
    /// Flat regions, each with its own spectrum.
    PiecewiseConstant,
    /// A handful of low-frequency DCT modes with band-dependent weights.
    CosineModes,
    /// Zero-mean Gaussian noise; `rho` blends in a shared component.
    Noise,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::RankOneSmooth,
        SceneKind::PiecewiseConstant,
        SceneKind::CosineModes,
        SceneKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::RankOneSmooth => "rank1-smooth",
            SceneKind::PiecewiseConstant => "piecewise-constant",
            SceneKind::CosineModes => "cosine-modes",
            SceneKind::Noise => "noise",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scene kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub seed: u64,
    /// Spectral correlation knob in `[0, 1]`.
    pub rho: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, height: usize, width: usize, bands: usize, seed: u64, rho: f64) -> Self {
        SceneSpec {
            kind,
            height,
            width,
            bands,
            seed,
            rho,
        }
    }
}

/// Smooth random image with a `1 / (1 + (u + v) / 4)^2` DCT amplitude
/// envelope, normalised to unit standard deviation.
fn smooth_base(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut coeffs = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            if (u, v) != (0, 0) {
                let env = 1.0 / (1.0 + (u + v) as f64 / 4.0).powi(2);
                coeffs[u * w + v] = env * normal.sample(rng);
            }
        }
    }
    let mut img = dct2_hwc(&coeffs, h, w, 1, true);
    let sd = (img.iter().map(|v| v * v).sum::<f64>() / (h * w) as f64).sqrt();
    if sd > 0.0 {
        img.iter_mut().for_each(|v| *v /= sd);
    }
    img
}

/// Affine map of the whole cube onto `[0, 1]`.
fn to_unit_range(data: &mut [f64]) {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        data.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        data.iter_mut().for_each(|v| *v = 0.5);
    }
}

pub fn gen_scene(spec: &SceneSpec) -> Result<HsiCube> {
    let SceneSpec {
        kind,
        height: h,
        width: w,
        bands: c,
        seed,
        rho,
    } = *spec;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::invalid("scene dimensions must be positive"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho {rho} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = vec![0.0; h * w * c];
    match kind {
        SceneKind::RankOneSmooth => {
            let mut base = smooth_base(h, w, &mut rng);
            let lo = base.iter().copied().fold(f64::INFINITY, f64::min);
            base.iter_mut().for_each(|v| *v += 0.5 - lo);
            let gains: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
            for p in 0..h * w {
                for b in 0..c {
                    let n = 0.5 * (1.0 - rho) * normal.sample(&mut rng);
                    data[p * c + b] = (gains[b] * base[p] + n).max(0.0);
                }
            }
            // pure scaling keeps every band an exact multiple of the base
            let peak = data.iter().copied().fold(0.0, f64::max);
            data.iter_mut().for_each(|v| *v /= peak);
        }
        SceneKind::PiecewiseConstant => {
            let regions = 6;
            let seeds: Vec<(f64, f64)> = (0..regions)
                .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)))
                .collect();
            let spectra: Vec<Vec<f64>> = (0..regions)
                .map(|_| {
                    let level: f64 = rng.random_range(0.15..0.85);
                    let slope: f64 = rng.random_range(-0.3..0.3);
                    (0..c)
                        .map(|b| {
                            let t = if c > 1 { b as f64 / (c - 1) as f64 - 0.5 } else { 0.0 };
                            let smooth = level + slope * t;
                            let free: f64 = rng.random_range(0.1..0.9);
                            (rho * smooth + (1.0 - rho) * free).clamp(0.0, 1.0)
                        })
                        .collect()
                })
                .collect();
            for i in 0..h {
                for j in 0..w {
                    let (fi, fj) = (i as f64 + 0.5, j as f64 + 0.5);
                    let r = (0..regions)
                        .min_by(|&a, &b| {
                            let da = (seeds[a].0 - fi).powi(2) + (seeds[a].1 - fj).powi(2);
                            let db = (seeds[b].0 - fi).powi(2) + (seeds[b].1 - fj).powi(2);
                            da.total_cmp(&db)
                        })
                        .expect("at least one region");
                    let p = i * w + j;
                    data[p * c..(p + 1) * c].copy_from_slice(&spectra[r]);
                }
            }
        }
        SceneKind::CosineModes => {
            let modes = 5;
            let freqs: Vec<(usize, usize)> = (0..modes)
                .map(|_| (rng.random_range(0..h.min(4)), rng.random_range(0..w.min(4))))
                .collect();
            let shared: Vec<f64> = (0..modes).map(|_| normal.sample(&mut rng)).collect();
            let mut coeffs = vec![0.0; h * w * c];
            for b in 0..c {
                for (m, &(u, v)) in freqs.iter().enumerate() {
                    let own = normal.sample(&mut rng);
                    coeffs[(u * w + v) * c + b] += rho * shared[m] + (1.0 - rho) * own;
                }
            }
            data = dct2_hwc(&coeffs, h, w, c, true);
            to_unit_range(&mut data);
        }
        SceneKind::Noise => {
            let shared: Vec<f64> = (0..h * w).map(|_| normal.sample(&mut rng)).collect();
            let own = (1.0 - rho * rho).sqrt();
            for p in 0..h * w {
                for b in 0..c {
                    data[p * c + b] = 0.25 * (rho * shared[p] + own * normal.sample(&mut rng));
                }
            }
        }
    }
    HsiCube::new(h, w, c, data)
}
