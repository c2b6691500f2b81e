use rand::Rng;

use super::{add_head_bias, from_tokens, hwc, merge_heads, split_heads, to_tokens, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};

/// Multi-head self-attention over the `K^2` pixels of each spatial token,
/// with a learned `heads x K^2 x K^2` position bias and an output
/// projection.
#[derive(Clone, Debug)]
pub struct SpaceAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub pos: ParamId,
    pub proj: Linear,
    pub channels: usize,
    pub heads: usize,
    pub token: usize,
}

impl SpaceAttention {
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
        let l = token * token;
        Ok(SpaceAttention {
            wq: store.add(format!("{name}.wq"), &[channels, channels], xav, rng)?,
            wk: store.add(format!("{name}.wk"), &[channels, channels], xav, rng)?,
            wv: store.add(format!("{name}.wv"), &[channels, channels], xav, rng)?,
            pos: store.add(format!("{name}.pos"), &[heads, l, l], Init::Zeros, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), channels, channels, true, rng)?,
            channels,
            heads,
            token,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(t, s, x)?.0)
    }

    /// Also returns the attention weights, `(tokens * heads) x K^2 x K^2`.
    pub fn forward_with_attention(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let (h, w, c) = hwc(t, x)?;
        if c != self.channels {
            return Err(Error::shape("space_attention", &[h, w, c], &[self.channels]));
        }
        let k = self.token;
        let l = k * k;
        let n = (h / k) * (w / k);
        let tokens = to_tokens(t, x, k)?;
        let flat = t.reshape(tokens, &[n * l, c])?;
        let proj = |t: &mut Tape, id: ParamId| -> Result<Var> {
            let wt = t.param(s, id);
            let y = t.matmul(flat, wt)?;
            let y = t.reshape(y, &[n, l, c])?;
            split_heads(t, y, self.heads)
        };
        let q = proj(t, self.wq)?;
        let kk = proj(t, self.wk)?;
        let v = proj(t, self.wv)?;
        let logits = t.matmul_t(q, kk, false, true)?;
        let logits = t.scale(logits, 1.0 / ((c / self.heads) as f64).sqrt());
        let pos = t.param(s, self.pos);
        let logits = add_head_bias(t, logits, pos)?;
        let attn = t.softmax(logits, 2)?;
        let y = t.matmul(attn, v)?;
        let y = merge_heads(t, y, self.heads)?;
        let y = from_tokens(t, y, h, w, k)?;
        Ok((self.proj.forward(t, s, y)?, attn))
    }

    pub fn num_params(channels: usize, heads: usize, token: usize) -> usize {
        let l = token * token;
        3 * channels * channels + heads * l * l + Linear::num_params(channels, channels, true)
    }

    pub fn macs(channels: usize, token: usize, h: usize, w: usize) -> usize {
        let c = channels;
        let px = h * w;
        let l = token * token;
        // q, k, v; q k^T and a v per head; projection
        3 * px * c * c + 2 * px * l * c + px * c * c
    }
}
