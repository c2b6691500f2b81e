//! The mixing-domains transformer prior and its building blocks.
//!
//! All activations are channels-last `H x W x C` tensors recorded on a
//! [`Tape`]. Layers own [`ParamId`]s into a shared [`ParamStore`] and are
//! cheap to clone.

mod block;
mod gate;
mod ipe;
mod layers;
mod prior;
mod saf;
mod sif;
mod space;

pub use block::{BlockShape, BlockTrace, CmdtBlock, Ffn};
pub use gate::GatingFilter;
pub use ipe::Ipe;
pub use layers::{Conv, ConvSpec, LayerNorm, Linear};
pub use prior::{Prior, PriorTrace};
pub use saf::Saf;
pub use sif::Sif;
pub use space::SpaceAttention;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Width and attention settings shared by every prior module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Spectral bands of the cube being reconstructed.
    pub bands: usize,
    /// Channels of the full-resolution level of the U-shaped prior.
    pub embed: usize,
    /// Side of the frequency cubes and spatial tokens.
    pub token: usize,
    /// Attention heads in both branches.
    pub heads: usize,
    /// Hidden-width multiplier of the feed-forward network.
    pub ffn_mult: usize,
    /// Hidden width of the iteration parameter estimator.
    pub ipe_width: usize,
    /// Resolution at which the gating filters are stored.
    pub height: usize,
    pub width: usize,
}

impl NetConfig {
    /// Defaults for a cube of the given size: embedding width equal to the
    /// band count, 8-pixel tokens, 4 heads.
    pub fn new(height: usize, width: usize, bands: usize) -> Self {
        NetConfig {
            bands,
            embed: bands,
            token: 8,
            heads: 4,
            ffn_mult: 2,
            ipe_width: 16,
            height,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let NetConfig {
            bands,
            embed,
            token,
            heads,
            ffn_mult,
            ipe_width,
            height,
            width,
        } = *self;
        if [bands, embed, token, heads, ffn_mult, ipe_width, height, width].contains(&0) {
            return Err(Error::invalid(format!("network settings must be positive: {self:?}")));
        }
        if embed % heads != 0 {
            return Err(Error::invalid(format!("embed width {embed} not divisible by {heads} heads")));
        }
        check_divisible(height, width, 2 * token)
    }
}

pub(crate) fn check_divisible(h: usize, w: usize, k: usize) -> Result<()> {
    if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
        return Err(Error::invalid(format!("spatial size {h}x{w} must be divisible by {k}")));
    }
    Ok(())
}

pub(crate) fn hwc(t: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match *t.value(x).shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::invalid(format!("expected H x W x C activations, got {s:?}"))),
    }
}

/// `H x W x C` to `(H/k)(W/k) x k^2 x C`, tokens in raster order.
pub(crate) fn to_tokens(t: &mut Tape, x: Var, k: usize) -> Result<Var> {
    let (h, w, c) = hwc(t, x)?;
    check_divisible(h, w, k)?;
    let x = t.reshape(x, &[h / k, k, w / k, k, c])?;
    let x = t.permute(x, &[0, 2, 1, 3, 4])?;
    t.reshape(x, &[(h / k) * (w / k), k * k, c])
}

/// Inverse of [`to_tokens`].
pub(crate) fn from_tokens(t: &mut Tape, x: Var, h: usize, w: usize, k: usize) -> Result<Var> {
    let c = *t.value(x).shape().last().expect("rank checked");
    let x = t.reshape(x, &[h / k, w / k, k, k, c])?;
    let x = t.permute(x, &[0, 2, 1, 3, 4])?;
    t.reshape(x, &[h, w, c])
}

/// `n x L x C` to `(n h) x L x (C/h)`.
pub(crate) fn split_heads(t: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = t.value(x).shape().to_vec();
    let (n, l, c) = (s[0], s[1], s[2]);
    let x = t.reshape(x, &[n, l, heads, c / heads])?;
    let x = t.permute(x, &[0, 2, 1, 3])?;
    t.reshape(x, &[n * heads, l, c / heads])
}

/// Inverse of [`split_heads`].
pub(crate) fn merge_heads(t: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = t.value(x).shape().to_vec();
    let (nh, l, d) = (s[0], s[1], s[2]);
    let x = t.reshape(x, &[nh / heads, heads, l, d])?;
    let x = t.permute(x, &[0, 2, 1, 3])?;
    t.reshape(x, &[nh / heads, l, heads * d])
}

/// Adds a per-head `heads x a x b` bias to `(n heads) x a x b` logits.
pub(crate) fn add_head_bias(t: &mut Tape, logits: Var, bias: Var) -> Result<Var> {
    let s = t.value(logits).shape().to_vec();
    let per = t.value(bias).len();
    let flat = t.reshape(logits, &[s.iter().product::<usize>() / per, per])?;
    let b = t.reshape(bias, &[per])?;
    let out = t.add_bias(flat, b)?;
    t.reshape(out, &s)
}
