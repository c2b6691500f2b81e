//! Orthonormal 2-D DCT-II applied independently to every spectral band.
//!
//! The transform is computed with precomputed `N x N` basis matrices: one
//! product along the rows and one along the columns. With orthonormal
//! scaling the inverse is the transpose, so Parseval holds exactly and the
//! gradient of either direction is the other direction.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

thread_local! {
    static BASES: RefCell<HashMap<usize, Rc<Vec<f64>>>> = RefCell::new(HashMap::new());
}

/// Orthonormal DCT-II matrix, row `k` holding
/// `s_k * cos(pi * (2i + 1) * k / 2n)`.
pub fn basis(n: usize) -> Rc<Vec<f64>> {
    BASES.with(|b| {
        Rc::clone(b.borrow_mut().entry(n).or_insert_with(|| {
            let mut m = vec![0.0; n * n];
            let s0 = (1.0 / n as f64).sqrt();
            let s = (2.0 / n as f64).sqrt();
            for k in 0..n {
                let sk = if k == 0 { s0 } else { s };
                for i in 0..n {
                    m[k * n + i] = sk * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
                }
            }
            Rc::new(m)
        }))
    })
}

/// Band-wise 2-D DCT (or inverse) of a channels-last `h x w x c` buffer.
pub fn dct2_hwc(x: &[f64], h: usize, w: usize, c: usize, inverse: bool) -> Vec<f64> {
    let dh = basis(h);
    let dw = basis(w);
    // along H: treat x as h x (w*c)
    let t = kernels::matmul(&dh, x, 1, h, h, w * c, inverse, false);
    let mut out = Vec::with_capacity(x.len());
    for row in t.chunks(w * c) {
        out.extend(kernels::matmul(&dw, row, 1, w, w, c, inverse, false));
    }
    out
}

/// Band-wise DCT-II coefficients of a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    coeffs: Tensor,
}

impl Spectrogram {
    pub fn from_tensor(coeffs: Tensor) -> Result<Self> {
        if coeffs.rank() != 3 {
            return Err(Error::invalid("spectrogram needs H x W x C coefficients"));
        }
        Ok(Spectrogram { coeffs })
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.coeffs.shape();
        (s[0], s[1], s[2])
    }

    /// Coefficient `(u, v)` of band `c`.
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.coeffs.get(&[u, v, c])
    }

    /// Band `c` as an `H x W` row-major vector.
    pub fn band(&self, c: usize) -> Vec<f64> {
        let nc = self.dims().2;
        self.coeffs.data().iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn into_cube(self) -> HsiCube {
        HsiCube::from_tensor(self.coeffs).expect("rank checked on construction")
    }
}

pub fn dct2_forward(x: &HsiCube) -> Result<Spectrogram> {
    if !x.tensor().all_finite() {
        return Err(Error::NonFinite("dct2_forward input"));
    }
    let (h, w, c) = x.dims();
    let data = dct2_hwc(x.data(), h, w, c, false);
    Ok(Spectrogram {
        coeffs: Tensor::new(&[h, w, c], data)?,
    })
}

pub fn dct2_inverse(f: &Spectrogram) -> HsiCube {
    let (h, w, c) = f.dims();
    let data = dct2_hwc(f.coeffs.data(), h, w, c, true);
    HsiCube::new(h, w, c, data).expect("inverse preserves shape")
}

/// One-dimensional orthonormal DCT-II of a slice (reference helper used by
/// the separability check).
pub fn dct1(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let b = basis(n);
    (0..n)
        .map(|k| (0..n).map(|i| b[k * n + i] * x[i]).sum())
        .collect()
}
