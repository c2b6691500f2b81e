use rand::Rng;

use super::{Conv, ConvSpec, Linear, NetConfig};
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};

/// Iteration parameter estimator: a small conv-pool network mapping the
/// normalised shift-back cube and the mask to `2K` positive scalars.
///
/// ```text
/// [xs, mask] -> conv3 -> gelu -> conv2/s2 -> gelu -> mean -> linear -> softplus
/// ```
///
/// Outputs are `softplus(.) + OUTPUT_FLOOR`, so they stay positive even
/// when the softplus underflows. The first `K` outputs are the data-step weights, the rest the prior
/// noise levels.
pub const OUTPUT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Ipe {
    pub conv1: Conv,
    pub conv2: Conv,
    pub head: Linear,
    pub stages: usize,
}

impl Ipe {
    fn specs(cfg: &NetConfig) -> [ConvSpec; 2] {
        let wi = cfg.ipe_width;
        [
            ConvSpec::new(3, cfg.bands + 1, wi).with_bias(),
            ConvSpec::new(2, wi, wi).stride(2).with_bias(),
        ]
    }

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &NetConfig,
        stages: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [s1, s2] = Ipe::specs(cfg);
        Ok(Ipe {
            conv1: Conv::new(store, &format!("{name}.conv1"), s1, rng)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), s2, rng)?,
            head: Linear::new(store, &format!("{name}.head"), cfg.ipe_width, 2 * stages, true, rng)?,
            stages,
        })
    }

    /// Returns `(alphas, betas)` as scalar nodes, `stages` of each.
    ///
    /// `features` is `H x W x (C + 1)`: the normalised shift-back cube with
    /// the mask appended as the last channel.
    pub fn forward(&self, t: &mut Tape, s: &ParamStore, features: Var) -> Result<(Vec<Var>, Vec<Var>)> {
        let a = self.conv1.forward(t, s, features)?;
        let a = t.gelu(a);
        let a = self.conv2.forward(t, s, a)?;
        let a = t.gelu(a);
        let sh = t.value(a).shape().to_vec();
        let n = sh[0] * sh[1];
        let flat = t.reshape(a, &[n, sh[2]])?;
        let ones = t.leaf(crate::tensor::Tensor::full(&[1, n], 1.0 / n as f64));
        let pooled = t.matmul(ones, flat)?;
        let out = self.head.forward(t, s, pooled)?;
        let out = t.softplus(out);
        let out = t.affine(out, 1.0, OUTPUT_FLOOR);
        let mut pick = |k: usize| -> Result<Var> {
            let v = t.narrow(out, 1, k, 1)?;
            t.reshape(v, &[1])
        };
        let alphas = (0..self.stages).map(&mut pick).collect::<Result<Vec<_>>>()?;
        let betas = (self.stages..2 * self.stages).map(&mut pick).collect::<Result<Vec<_>>>()?;
        Ok((alphas, betas))
    }

    pub fn num_params(cfg: &NetConfig, stages: usize) -> usize {
        Ipe::specs(cfg).iter().map(ConvSpec::num_params).sum::<usize>()
            + Linear::num_params(cfg.ipe_width, 2 * stages, true)
    }

    pub fn macs(cfg: &NetConfig, stages: usize, h: usize, w: usize) -> usize {
        let [s1, s2] = Ipe::specs(cfg);
        let (oh, ow) = s2.out_size(h, w);
        s1.macs(h, w) + s2.macs(h, w) + oh * ow * cfg.ipe_width + Linear::macs(cfg.ipe_width, 2 * stages, 1)
    }
}
