//! Reconstruction quality metrics and model complexity accounting.
//!
//! PSNR and SSIM follow their usual definitions with a peak of 1. The
//! frequency-domain gap is our own spectrogram distance: the band-averaged
//! mean absolute difference of DCT coefficients, times 100. It is not
//! comparable with published FDG numbers.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::dct::dct2_forward;
use crate::error::{Error, Result};
use crate::unfold::ModelConfig;

/// PSNR reported for bands that match exactly.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Per-band scores and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct BandScores {
    pub per_band: Vec<f64>,
    pub mean: f64,
}

impl BandScores {
    fn new(per_band: Vec<f64>) -> Self {
        let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
        BandScores { per_band, mean }
    }
}

fn check_pair(a: &HsiCube, b: &HsiCube, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, a.tensor().shape(), b.tensor().shape()));
    }
    Ok(())
}

pub fn psnr(xhat: &HsiCube, x: &HsiCube, peak: f64) -> Result<BandScores> {
    check_pair(xhat, x, "psnr")?;
    let (h, w, c) = x.dims();
    let mut mse = vec![0.0; c];
    for (p, q) in xhat.data().chunks(c).zip(x.data().chunks(c)) {
        for b in 0..c {
            mse[b] += (p[b] - q[b]).powi(2);
        }
    }
    let per_band = mse
        .into_iter()
        .map(|s| {
            let m = s / (h * w) as f64;
            if m == 0.0 {
                PSNR_CAP_DB
            } else {
                (10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB)
            }
        })
        .collect();
    Ok(BandScores::new(per_band))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region Gaussian filtering of an `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| g[t] * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Single-scale SSIM of one band pair, averaged over the valid region.
pub fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs bands of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let saa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
    let sbb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
    let sab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

pub fn ssim(xhat: &HsiCube, x: &HsiCube, peak: f64) -> Result<BandScores> {
    check_pair(xhat, x, "ssim")?;
    let (h, w, c) = x.dims();
    let per_band = (0..c)
        .into_par_iter()
        .map(|b| ssim_band(&xhat.band(b), &x.band(b), h, w, peak))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandScores::new(per_band))
}

/// `100 * mean_c mean_{u,v} |DCT(xhat_c) - DCT(x_c)|`.
pub fn fdg(xhat: &HsiCube, x: &HsiCube) -> Result<f64> {
    check_pair(xhat, x, "fdg")?;
    let diff = HsiCube::from_tensor(xhat.tensor().sub(x.tensor())?)?;
    let spec = dct2_forward(&diff)?;
    let total: f64 = spec.coeffs().data().iter().map(|v| v.abs()).sum();
    Ok(100.0 * total / spec.coeffs().len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: BandScores,
    pub ssim: BandScores,
    pub fdg: f64,
}

impl MetricReport {
    pub fn evaluate(xhat: &HsiCube, x: &HsiCube) -> Result<Self> {
        Ok(MetricReport {
            psnr: psnr(xhat, x, 1.0)?,
            ssim: ssim(xhat, x, 1.0)?,
            fdg: fdg(xhat, x)?,
        })
    }
}

/// Learnable parameters of a model configuration, in millions.
pub fn count_params(cfg: &ModelConfig) -> f64 {
    cfg.count_params() as f64 / 1e6
}

/// Floating-point operations of one reconstruction at `h x w`, in billions,
/// counting each multiply-accumulate as two operations.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> f64 {
    2.0 * cfg.count_macs(h, w) as f64 / 1e9
}

/// CSV with one row per scene and a trailing mean row.
pub fn metrics_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from("scene,psnr,ssim,fdg\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{name},{:.4},{:.6},{:.4}", r.psnr.mean, r.ssim.mean, r.fdg);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&MetricReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "mean,{:.4},{:.6},{:.4}",
            mean(&|r| r.psnr.mean),
            mean(&|r| r.ssim.mean),
            mean(&|r| r.fdg)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::basis;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cube(h: usize, w: usize, c: usize, seed: u64) -> HsiCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::from_tensor(Tensor::uniform(&[h, w, c], 0.0, 1.0, &mut rng)).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let x = random_cube(4, 4, 2, 1);
        assert!(psnr(&x, &x, 1.0).unwrap().per_band.iter().all(|&v| v == PSNR_CAP_DB));
        let y = x.map(|v| v + 0.1);
        let p = psnr(&y, &x, 1.0).unwrap();
        assert!((p.mean - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_loop_oracle() {
        let (a, b) = (random_cube(5, 6, 3, 2), random_cube(5, 6, 3, 3));
        let p = psnr(&a, &b, 1.0).unwrap();
        for c in 0..3 {
            let mut s = 0.0;
            for i in 0..5 {
                for j in 0..6 {
                    s += (a.get(i, j, c) - b.get(i, j, c)).powi(2);
                }
            }
            let expect = 10.0 * (1.0 / (s / 30.0)).log10();
            assert!((p.per_band[c] - expect).abs() < 1e-12);
        }
        assert_eq!(p, psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_identical_and_inverted() {
        let x = random_cube(16, 16, 2, 4);
        let s = ssim(&x, &x, 1.0).unwrap();
        assert!(s.per_band.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&inv, &x, 1.0).unwrap().mean < 1.0);
    }

    #[test]
    fn ssim_constant_offset_is_luminance_only() {
        let (a, b) = (0.3, 0.5);
        let x = HsiCube::new(12, 12, 1, vec![a; 144]).unwrap();
        let y = HsiCube::new(12, 12, 1, vec![b; 144]).unwrap();
        let c1 = (0.01f64).powi(2);
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(&x, &y, 1.0).unwrap().mean - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_bands() {
        let x = random_cube(10, 20, 1, 1);
        assert!(ssim(&x, &x, 1.0).is_err());
    }

    #[test]
    fn fdg_closed_forms() {
        let x = random_cube(8, 6, 3, 5);
        assert_eq!(fdg(&x, &x).unwrap(), 0.0);
        let delta = 0.05;
        let y = x.map(|v| v + delta);
        let hw = 48.0f64;
        let expect = 100.0 * delta * hw.sqrt() / hw;
        assert!((fdg(&y, &x).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn fdg_matches_naive_oracle() {
        let (a, b) = (random_cube(4, 5, 2, 6), random_cube(4, 5, 2, 7));
        let (bh, bw) = (basis(4), basis(5));
        let mut total = 0.0;
        for c in 0..2 {
            for u in 0..4 {
                for v in 0..5 {
                    let mut s = 0.0;
                    for i in 0..4 {
                        for j in 0..5 {
                            s += bh[u * 4 + i] * bw[v * 5 + j] * (a.get(i, j, c) - b.get(i, j, c));
                        }
                    }
                    total += s.abs();
                }
            }
        }
        let expect = 100.0 * total / 40.0;
        assert!((fdg(&a, &b).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_errors() {
        let (a, b) = (random_cube(4, 4, 2, 1), random_cube(4, 4, 3, 1));
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(fdg(&a, &b).is_err());
    }

    #[test]
    fn flops_are_twice_the_macs() {
        let cfg = ModelConfig::paper_scale(9);
        let g = count_flops(&cfg, 256, 256);
        assert_eq!(g, 2.0 * cfg.count_macs(256, 256) as f64 / 1e9);
        assert_eq!(count_params(&cfg), cfg.count_params() as f64 / 1e6);
        // one C x C product over K^2 rows
        assert_eq!(2 * crate::net::Linear::macs(4, 4, 64), 2 * 64 * 16);
    }

    #[test]
    fn csv_has_mean_row() {
        let x = random_cube(12, 12, 2, 1);
        let y = x.map(|v| v * 0.9);
        let r = MetricReport::evaluate(&y, &x).unwrap();
        let csv = metrics_csv(&[("a".into(), r.clone()), ("b".into(), r)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,"));
    }
}
