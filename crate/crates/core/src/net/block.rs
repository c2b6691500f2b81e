use rand::Rng;

use super::{Conv, ConvSpec, GatingFilter, LayerNorm, Linear, Saf, Sif, SpaceAttention};
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};

/// `1x1 (C -> mC)`, GELU, depth-wise 3x3, GELU, `1x1 (mC -> C)`.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub expand: Conv,
    pub dw: Conv,
    pub reduce: Conv,
}

impl Ffn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, mult: usize, rng: &mut R) -> Result<Self> {
        let hidden = c * mult;
        Ok(Ffn {
            expand: Conv::new(store, &format!("{name}.expand"), ConvSpec::new(1, c, hidden), rng)?,
            dw: Conv::new(store, &format!("{name}.dw"), ConvSpec::depthwise(3, hidden), rng)?,
            reduce: Conv::new(store, &format!("{name}.reduce"), ConvSpec::new(1, hidden, c), rng)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let y = self.expand.forward(t, s, x)?;
        let y = t.gelu(y);
        let y = self.dw.forward(t, s, y)?;
        let y = t.gelu(y);
        self.reduce.forward(t, s, y)
    }

    fn specs(c: usize, mult: usize) -> [ConvSpec; 3] {
        [
            ConvSpec::new(1, c, c * mult),
            ConvSpec::depthwise(3, c * mult),
            ConvSpec::new(1, c * mult, c),
        ]
    }

    pub fn num_params(c: usize, mult: usize) -> usize {
        Ffn::specs(c, mult).iter().map(ConvSpec::num_params).sum()
    }

    pub fn macs(c: usize, mult: usize, h: usize, w: usize) -> usize {
        Ffn::specs(c, mult).iter().map(|s| s.macs(h, w)).sum()
    }
}

/// One mixing-domains transformer block:
///
/// ```text
/// n  = LN(x)
/// x' = x + Proj(space(n) + IDCT(gate(SAF(DCT n), SIF(DCT n))))
/// y  = x' + FFN(LN(x'))
/// ```
#[derive(Clone, Debug)]
pub struct CmdtBlock {
    pub norm1: LayerNorm,
    pub space: SpaceAttention,
    pub saf: Saf,
    pub sif: Sif,
    pub gate: GatingFilter,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

/// Intermediate maps of one block evaluation, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub out: Var,
    pub saf_attention: Var,
    pub space_attention: Var,
    pub gate: Var,
}

/// Shape settings of a [`CmdtBlock`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub channels: usize,
    pub heads: usize,
    pub token: usize,
    pub ffn_mult: usize,
    /// Gating filter resolution.
    pub height: usize,
    pub width: usize,
}

impl CmdtBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, b: BlockShape, rng: &mut R) -> Result<Self> {
        let c = b.channels;
        Ok(CmdtBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c, rng)?,
            space: SpaceAttention::new(store, &format!("{name}.space"), c, b.heads, b.token, rng)?,
            saf: Saf::new(store, &format!("{name}.saf"), c, b.heads, b.token, rng)?,
            sif: Sif::new(store, &format!("{name}.sif"), c, rng)?,
            gate: GatingFilter::new(store, &format!("{name}.gate"), b.height, b.width, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), c, c, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c, rng)?,
            ffn: Ffn::new(store, &format!("{name}.ffn"), c, b.ffn_mult, rng)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.trace(t, s, x)?.out)
    }

    pub fn trace(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<BlockTrace> {
        let (h, w, _) = super::hwc(t, x)?;
        let n = self.norm1.forward(t, s, x)?;
        let (sp, space_attention) = self.space.forward_with_attention(t, s, n)?;
        let f = t.dct2(n, false)?;
        let (a, saf_attention) = self.saf.forward_with_attention(t, s, f)?;
        let b = self.sif.forward(t, s, f)?;
        let mixed = self.gate.forward(t, s, a, b)?;
        let fr = t.dct2(mixed, true)?;
        let m = t.add(sp, fr)?;
        let m = self.proj.forward(t, s, m)?;
        let x1 = t.add(x, m)?;
        let n2 = self.norm2.forward(t, s, x1)?;
        let f2 = self.ffn.forward(t, s, n2)?;
        let out = t.add(x1, f2)?;
        let gate = self.gate.weights(t, s, h, w)?;
        Ok(BlockTrace {
            out,
            saf_attention,
            space_attention,
            gate,
        })
    }

    pub fn num_params(b: BlockShape) -> usize {
        let c = b.channels;
        2 * LayerNorm::num_params(c)
            + SpaceAttention::num_params(c, b.heads, b.token)
            + Saf::num_params(c, b.heads)
            + Sif::num_params(c)
            + b.height * b.width
            + Linear::num_params(c, c, true)
            + Ffn::num_params(c, b.ffn_mult)
    }

    /// Multiply-accumulates of one forward pass at `h x w`.
    pub fn macs(b: BlockShape, h: usize, w: usize) -> usize {
        let c = b.channels;
        let dct = h * h * w * c + h * w * w * c;
        SpaceAttention::macs(c, b.token, h, w)
            + 2 * dct
            + Saf::macs(c, b.heads, h, w)
            + Sif::macs(c, h, w)
            + Linear::macs(c, c, h * w)
            + Ffn::macs(c, b.ffn_mult, h, w)
    }
}
