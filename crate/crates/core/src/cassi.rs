//! CASSI imaging physics.
//!
//! A cube is modulated by the coded aperture, band `c` is shifted right by
//! `step * c` pixels, and all bands are summed onto a single
//! `H x (W + step*(C-1))` detector image:
//!
//! ```text
//! y[i, j] = sum_c mask[i, j - step*c] * x[i, j - step*c, c]
//! ```
//!
//! Because every cube entry lands on exactly one detector pixel, `Phi Phi^T`
//! is diagonal and is returned by [`phi_phit_diag`].

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default dispersion in pixels per band.
pub const DEFAULT_STEP: usize = 2;

/// Entries of `Phi Phi^T` below this value are floored before dividing.
pub const DIAG_FLOOR: f64 = 1e-6;

/// Coded aperture plus dispersion, which together define `Phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingConfig {
    mask: Arc<Tensor>,
    step: usize,
    bands: usize,
    noise_sigma: f64,
}

impl SensingConfig {
    pub fn new(mask: Tensor, step: usize, bands: usize, noise_sigma: f64) -> Result<Self> {
        if mask.rank() != 2 {
            return Err(Error::invalid(format!(
                "mask must be H x W, got {:?}",
                mask.shape()
            )));
        }
        if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("mask values must lie in [0, 1]"));
        }
        if bands == 0 {
            return Err(Error::invalid("bands must be positive"));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        Ok(SensingConfig {
            mask: Arc::new(mask),
            step,
            bands,
            noise_sigma,
        })
    }

    /// Random binary mask with the given open fraction.
    pub fn random_mask(h: usize, w: usize, open: f64, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w)
            .map(|_| if rng.random::<f64>() < open { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(&[h, w], data).expect("positive dims")
    }

    pub fn mask(&self) -> &Arc<Tensor> {
        &self.mask
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn with_noise(&self, sigma: f64) -> Result<Self> {
        SensingConfig::new((*self.mask).clone(), self.step, self.bands, sigma)
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    /// Detector width `W + step * (C - 1)`.
    pub fn measurement_width(&self) -> usize {
        self.width() + self.step * (self.bands - 1)
    }

    fn check_cube(&self, x: &HsiCube) -> Result<()> {
        let want = [self.height(), self.width(), self.bands];
        if x.tensor().shape() != want {
            return Err(Error::shape("sensing cube", x.tensor().shape(), &want));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Measurement) -> Result<()> {
        let want = [self.height(), self.measurement_width()];
        if y.0.shape() != want {
            return Err(Error::shape("measurement", y.0.shape(), &want));
        }
        Ok(())
    }
}

/// A 2-D CASSI detector image.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement(Tensor);

impl Measurement {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::invalid(format!(
                "measurement must be rank 2, got {:?}",
                t.shape()
            )));
        }
        Ok(Measurement(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }
}

/// `Phi x` on raw tensors: `x` is `H x W x C`, `mask` is `H x W`.
pub fn phi_forward_tensor(x: &Tensor, mask: &Tensor, step: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || mask.shape() != &s[..2] {
        return Err(Error::shape("phi", s, mask.shape()));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let wy = w + step * (c - 1);
    let (xd, md) = (x.data(), mask.data());
    let mut y = vec![0.0; h * wy];
    for i in 0..h {
        for j in 0..w {
            let m = md[i * w + j];
            let px = &xd[(i * w + j) * c..(i * w + j + 1) * c];
            for (ci, &v) in px.iter().enumerate() {
                y[i * wy + j + step * ci] += m * v;
            }
        }
    }
    Tensor::new(&[h, wy], y)
}

/// `Phi^T y` on raw tensors.
pub fn phi_adjoint_tensor(y: &Tensor, mask: &Tensor, step: usize, bands: usize) -> Result<Tensor> {
    let ms = mask.shape();
    let (h, w) = (ms[0], ms[1]);
    let wy = w + step * (bands - 1);
    if y.shape() != [h, wy] {
        return Err(Error::shape("phi_t", y.shape(), &[h, wy]));
    }
    let (yd, md) = (y.data(), mask.data());
    let mut x = vec![0.0; h * w * bands];
    for i in 0..h {
        for j in 0..w {
            let m = md[i * w + j];
            for ci in 0..bands {
                x[(i * w + j) * bands + ci] = m * yd[i * wy + j + step * ci];
            }
        }
    }
    Tensor::new(&[h, w, bands], x)
}

pub fn phi_forward(x: &HsiCube, cfg: &SensingConfig) -> Result<Measurement> {
    cfg.check_cube(x)?;
    Ok(Measurement(phi_forward_tensor(x.tensor(), &cfg.mask, cfg.step)?))
}

pub fn phi_adjoint(y: &Measurement, cfg: &SensingConfig) -> Result<HsiCube> {
    cfg.check_measurement(y)?;
    HsiCube::from_tensor(phi_adjoint_tensor(&y.0, &cfg.mask, cfg.step, cfg.bands)?)
}

/// Diagonal of `Phi Phi^T` laid out as a detector image:
/// `sum_c mask[i, j - step*c]^2`.
pub fn phi_phit_diag(cfg: &SensingConfig) -> Tensor {
    let sq = cfg.mask.map(|m| m * m);
    let ones = Tensor::ones(&[cfg.height(), cfg.width(), cfg.bands]);
    // Phi applied to an all-ones cube with the squared mask
    phi_forward_tensor(&ones, &sq, cfg.step).expect("shapes follow from config")
}

/// `Phi x + n` with seeded zero-mean Gaussian noise of the configured
/// standard deviation.
pub fn simulate(x: &HsiCube, cfg: &SensingConfig, seed: u64) -> Result<Measurement> {
    let mut y = phi_forward(x, cfg)?;
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.0.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(y)
}

/// Un-disperses a detector image into a cube: band `c` is the window of
/// columns `[step*c, step*c + W)`.
pub fn shift_back(y: &Measurement, cfg: &SensingConfig) -> Result<HsiCube> {
    cfg.check_measurement(y)?;
    let ones = Tensor::ones(&[cfg.height(), cfg.width()]);
    HsiCube::from_tensor(phi_adjoint_tensor(&y.0, &ones, cfg.step, cfg.bands)?)
}

/// Places band `c` of a cube at columns `[step*c, step*c + W)` of an
/// `H x (W + step*(C-1)) x C` array, the layout inverted by [`shift_back`].
pub fn shift(x: &HsiCube, step: usize) -> Tensor {
    let (h, w, c) = x.dims();
    let wy = w + step * (c - 1);
    let mut out = Tensor::zeros(&[h, wy, c]);
    let od = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            for ci in 0..c {
                od[(i * wy + j + step * ci) * c + ci] = x.get(i, j, ci);
            }
        }
    }
    out
}

/// Measurement divided by the floored `Phi Phi^T` diagonal.
pub fn normalize_measurement(y: &Measurement, cfg: &SensingConfig) -> Result<Measurement> {
    cfg.check_measurement(y)?;
    let diag = phi_phit_diag(cfg);
    Ok(Measurement(y.0.zip_map(&diag, |v, d| v / d.max(DIAG_FLOOR))?))
}

/// Shift-back of the normalised measurement: each cube entry receives the
/// coverage-weighted average of the bands sharing its detector pixel.
pub fn normalized_shift_back(y: &Measurement, cfg: &SensingConfig) -> Result<HsiCube> {
    shift_back(&normalize_measurement(y, cfg)?, cfg)
}
