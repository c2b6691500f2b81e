use rand::Rng;

use super::{add_head_bias, from_tokens, hwc, merge_heads, split_heads, to_tokens, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};

/// Channel attention inside each `K x K x C` cube of a spectrogram.
///
/// For a cube flattened to `f` (`K^2 x C`) and one head group:
/// `S = softmax_rows(Q^T K / sqrt(C) + P)` with `Q, K, V = f W_q, f W_k,
/// f W_v`, output `V S`, followed by a 1x1 channel mix. `P` is one
/// `C/h x C/h` bias per head shared by every cube.
#[derive(Clone, Debug)]
pub struct Saf {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub pos: ParamId,
    pub out: Linear,
    pub channels: usize,
    pub heads: usize,
    pub token: usize,
}

impl Saf {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        token: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::invalid(format!("{channels} channels not divisible by {heads} heads")));
        }
        let xav = Init::Xavier {
            fan_in: channels,
            fan_out: channels,
        };
        let d = channels / heads;
        Ok(Saf {
            wq: store.add(format!("{name}.wq"), &[channels, channels], xav, rng)?,
            wk: store.add(format!("{name}.wk"), &[channels, channels], xav, rng)?,
            wv: store.add(format!("{name}.wv"), &[channels, channels], xav, rng)?,
            pos: store.add(format!("{name}.pos"), &[heads, d, d], Init::Zeros, rng)?,
            out: Linear::new(store, &format!("{name}.out"), channels, channels, false, rng)?,
            channels,
            heads,
            token,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, f: Var) -> Result<Var> {
        Ok(self.forward_with_attention(t, s, f)?.0)
    }

    /// Also returns the attention weights, `(cubes * heads) x d x d`.
    pub fn forward_with_attention(&self, t: &mut Tape, s: &ParamStore, f: Var) -> Result<(Var, Var)> {
        let (h, w, c) = hwc(t, f)?;
        if c != self.channels {
            return Err(Error::shape("saf", &[h, w, c], &[self.channels]));
        }
        let k = self.token;
        let cubes = to_tokens(t, f, k)?;
        let n = (h / k) * (w / k);
        let flat = t.reshape(cubes, &[n * k * k, c])?;
        let proj = |t: &mut Tape, id: ParamId| -> Result<Var> {
            let wt = t.param(s, id);
            let y = t.matmul(flat, wt)?;
            let y = t.reshape(y, &[n, k * k, c])?;
            split_heads(t, y, self.heads)
        };
        let q = proj(t, self.wq)?;
        let kk = proj(t, self.wk)?;
        let v = proj(t, self.wv)?;
        let logits = t.matmul_t(q, kk, true, false)?;
        let logits = t.scale(logits, 1.0 / (c as f64).sqrt());
        let pos = t.param(s, self.pos);
        let logits = add_head_bias(t, logits, pos)?;
        let attn = t.softmax(logits, 1)?;
        let y = t.matmul(v, attn)?;
        let y = merge_heads(t, y, self.heads)?;
        let y = from_tokens(t, y, h, w, k)?;
        Ok((self.out.forward(t, s, y)?, attn))
    }

    pub fn num_params(channels: usize, heads: usize) -> usize {
        let d = channels / heads;
        3 * channels * channels + heads * d * d + channels * channels
    }

    pub fn macs(channels: usize, heads: usize, h: usize, w: usize) -> usize {
        let (c, d) = (channels, channels / heads);
        let px = h * w;
        // q, k, v; q^T k and v s per head; output mix
        3 * px * c * c + 2 * heads * px * d * d + px * c * c
    }
}
