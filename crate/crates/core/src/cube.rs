//! The hyperspectral cube type shared by every module.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An `H x W x C` hyperspectral image stored pixel-major (channels last).
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube(Tensor);

impl HsiCube {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        Ok(HsiCube(Tensor::new(&[h, w, c], data)?))
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        HsiCube(Tensor::zeros(&[h, w, c]))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::invalid(format!(
                "a cube needs rank 3, got shape {:?}",
                t.shape()
            )));
        }
        Ok(HsiCube(t))
    }

    /// Builds a cube from `C` band images, each `H x W` row-major.
    pub fn from_bands(h: usize, w: usize, bands: &[Vec<f64>]) -> Result<Self> {
        let c = bands.len();
        if c == 0 || bands.iter().any(|b| b.len() != h * w) {
            return Err(Error::invalid("bands must be non-empty and H*W long"));
        }
        let mut data = vec![0.0; h * w * c];
        for (ci, band) in bands.iter().enumerate() {
            for (p, &v) in band.iter().enumerate() {
                data[p * c + ci] = v;
            }
        }
        HsiCube::new(h, w, c, data)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.bands())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.0.data()[(i * self.width() + j) * self.bands() + c]
    }

    /// Band `c` as an `H x W` row-major vector.
    pub fn band(&self, c: usize) -> Vec<f64> {
        let nc = self.bands();
        self.0.data().iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> HsiCube {
        HsiCube(self.0.map(f))
    }

    /// Largest absolute value.
    pub fn peak(&self) -> f64 {
        self.0.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Scales the cube so that its peak magnitude is one (no-op for an
    /// all-zero cube).
    pub fn normalized(&self) -> HsiCube {
        let p = self.peak();
        if p > 0.0 {
            self.map(|v| v / p)
        } else {
            self.clone()
        }
    }

    /// Spatial crop `[top, top+h) x [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<HsiCube> {
        let (ch, cw, c) = self.dims();
        if top + h > ch || left + w > cw || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {ch}x{cw}"
            )));
        }
        let mut data = Vec::with_capacity(h * w * c);
        for i in top..top + h {
            let start = (i * cw + left) * c;
            data.extend_from_slice(&self.0.data()[start..start + w * c]);
        }
        HsiCube::new(h, w, c, data)
    }

    /// Rotates by `quarter_turns * 90` degrees counter-clockwise.
    pub fn rot90(&self, quarter_turns: usize) -> HsiCube {
        let mut cur = self.clone();
        for _ in 0..quarter_turns % 4 {
            let (h, w, c) = cur.dims();
            let mut data = vec![0.0; h * w * c];
            // new[i][j] = old[j][w-1-i], new dims w x h
            for i in 0..w {
                for j in 0..h {
                    let src = (j * w + (w - 1 - i)) * c;
                    let dst = (i * h + j) * c;
                    data[dst..dst + c].copy_from_slice(&cur.0.data()[src..src + c]);
                }
            }
            cur = HsiCube::new(w, h, c, data).expect("rotation preserves size");
        }
        cur
    }

    /// Mirrors left-right.
    pub fn flip_horizontal(&self) -> HsiCube {
        let (h, w, c) = self.dims();
        let mut data = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                let src = (i * w + j) * c;
                let dst = (i * w + (w - 1 - j)) * c;
                data[dst..dst + c].copy_from_slice(&self.0.data()[src..src + c]);
            }
        }
        HsiCube::new(h, w, c, data).expect("flip preserves size")
    }

    /// Mirrors top-bottom.
    pub fn flip_vertical(&self) -> HsiCube {
        let (h, w, c) = self.dims();
        let mut data = vec![0.0; h * w * c];
        for i in 0..h {
            let src = i * w * c;
            let dst = (h - 1 - i) * w * c;
            data[dst..dst + w * c].copy_from_slice(&self.0.data()[src..src + w * c]);
        }
        HsiCube::new(h, w, c, data).expect("flip preserves size")
    }
}
