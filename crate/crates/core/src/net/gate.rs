use rand::Rng;

use super::hwc;
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};

/// Learnable per-pixel blend of two branches:
/// `g * a + (1 - g) * b` with `g = sigmoid(logits)` repeated over channels.
/// Logits are stored at one resolution and bilinearly resampled to others.
#[derive(Clone, Debug)]
pub struct GatingFilter {
    pub logits: ParamId,
}

impl GatingFilter {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, h: usize, w: usize, rng: &mut R) -> Result<Self> {
        Ok(GatingFilter {
            logits: store.add(format!("{name}.logits"), &[h, w], Init::Zeros, rng)?,
        })
    }

    /// The gate `sigmoid(logits)` at `h x w`.
    pub fn weights(&self, t: &mut Tape, s: &ParamStore, h: usize, w: usize) -> Result<Var> {
        let l = t.param(s, self.logits);
        let l = t.resize_bilinear(l, h, w)?;
        Ok(t.sigmoid(l))
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, a: Var, b: Var) -> Result<Var> {
        let (h, w, c) = hwc(t, a)?;
        if t.value(b).shape() != [h, w, c] {
            return Err(Error::shape("gate", &[h, w, c], t.value(b).shape()));
        }
        let g = self.weights(t, s, h, w)?;
        let g = t.reshape(g, &[h, w, 1])?;
        let g = t.repeat_last(g, c)?;
        let ga = t.mul(g, a)?;
        let rest = t.affine(g, -1.0, 1.0);
        let gb = t.mul(rest, b)?;
        t.add(ga, gb)
    }
}
