use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cassi::{self, Measurement, SensingConfig};
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::net::{BlockTrace, Ipe, NetConfig, Prior};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Architecture of an unfolding model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub net: NetConfig,
    pub stages: usize,
    /// One prior shared by every stage, or one per stage.
    pub share: bool,
    /// Dispersion step of the sensing geometry the model is built for.
    pub step: usize,
}

impl ModelConfig {
    pub fn new(net: NetConfig, stages: usize, share: bool, step: usize) -> Self {
        ModelConfig {
            net,
            stages,
            share,
            step,
        }
    }

    /// Full-size configuration: 256 x 256 x 28 cubes, 9 shared stages.
    pub fn paper_scale(stages: usize) -> Self {
        ModelConfig::new(NetConfig::new(256, 256, 28), stages, true, cassi::DEFAULT_STEP)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.stages == 0 {
            return Err(Error::invalid("at least one stage is required"));
        }
        Ok(())
    }

    pub fn prior_sets(&self) -> usize {
        if self.share {
            1
        } else {
            self.stages
        }
    }

    /// Learnable scalars, from the layer shapes alone.
    pub fn count_params(&self) -> usize {
        Ipe::num_params(&self.net, self.stages) + self.prior_sets() * Prior::num_params(&self.net)
    }

    /// Multiply-accumulates of one reconstruction at `h x w`: every
    /// matrix product, convolution and DCT. Element-wise work and the
    /// sensing operator are not counted.
    pub fn count_macs(&self, h: usize, w: usize) -> usize {
        Ipe::macs(&self.net, self.stages, h, w) + self.stages * Prior::macs(&self.net, h, w)
    }
}

/// Iterates and estimated parameters of one stage.
#[derive(Clone, Debug)]
pub struct StageTrace {
    pub x: Var,
    pub z: Var,
    pub alpha: Var,
    pub beta: Var,
    pub blocks: Vec<BlockTrace>,
}

#[derive(Clone, Debug)]
pub struct UnfoldTrace {
    pub z0: Var,
    pub stages: Vec<StageTrace>,
}

impl UnfoldTrace {
    pub fn output(&self) -> Var {
        self.stages.last().expect("at least one stage").z
    }
}

/// A parameter store together with the layers that index into it.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub ipe: Ipe,
    pub priors: Vec<Prior>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ipe = Ipe::new(&mut store, "ipe", &cfg.net, cfg.stages, &mut rng)?;
        let priors = if cfg.share {
            vec![Prior::new(&mut store, "pm", &cfg.net, &mut rng)?]
        } else {
            (0..cfg.stages)
                .map(|k| Prior::new(&mut store, &format!("pm{k}"), &cfg.net, &mut rng))
                .collect::<Result<_>>()?
        };
        Ok(Model {
            cfg,
            store,
            ipe,
            priors,
        })
    }

    pub fn prior(&self, stage: usize) -> &Prior {
        if self.cfg.share {
            &self.priors[0]
        } else {
            &self.priors[stage]
        }
    }

    /// Checks that a sensing geometry can be used with this model.
    pub fn check_sensing(&self, sensing: &SensingConfig) -> Result<()> {
        let mut bad = Vec::new();
        if sensing.bands() != self.cfg.net.bands {
            bad.push(format!("bands: model {} vs input {}", self.cfg.net.bands, sensing.bands()));
        }
        if sensing.step() != self.cfg.step {
            bad.push(format!("step: model {} vs input {}", self.cfg.step, sensing.step()));
        }
        if !bad.is_empty() {
            return Err(Error::ConfigMismatch(bad.join(", ")));
        }
        crate::net::check_divisible(sensing.height(), sensing.width(), 2 * self.cfg.net.token)
    }

    /// Records the full unfolding on `t` for measurement `y`.
    pub fn trace(&self, t: &mut Tape, y: &Measurement, sensing: &SensingConfig) -> Result<UnfoldTrace> {
        self.check_sensing(sensing)?;
        let (h, w, c) = (sensing.height(), sensing.width(), sensing.bands());
        let step = sensing.step();
        let mask: &Arc<Tensor> = sensing.mask();
        let xs = cassi::normalized_shift_back(y, sensing)?;
        let mut features = Vec::with_capacity(h * w * (c + 1));
        for (p, px) in xs.data().chunks(c).enumerate() {
            features.extend_from_slice(px);
            features.push(mask.data()[p]);
        }
        let features = t.leaf(Tensor::new(&[h, w, c + 1], features)?);
        let (alphas, betas) = self.ipe.forward(t, &self.store, features)?;

        let yv = t.leaf(y.tensor().clone());
        let diag = t.leaf(cassi::phi_phit_diag(sensing));
        let z0 = t.leaf(xs.into_tensor());
        let mut z = z0;
        let mut stages = Vec::with_capacity(self.cfg.stages);
        for k in 0..self.cfg.stages {
            let pz = t.phi(z, mask, step)?;
            let r = t.sub(yv, pz)?;
            let den = t.add_scalar(diag, alphas[k])?;
            let q = t.div(r, den)?;
            let back = t.phi_t(q, mask, step, c)?;
            let x = t.add(z, back)?;
            let pt = self.prior(k).trace(t, &self.store, x, betas[k])?;
            z = pt.out;
            stages.push(StageTrace {
                x,
                z,
                alpha: alphas[k],
                beta: betas[k],
                blocks: pt.blocks,
            });
        }
        Ok(UnfoldTrace { z0, stages })
    }

    /// Deterministic reconstruction of one measurement.
    pub fn reconstruct(&self, y: &Measurement, sensing: &SensingConfig) -> Result<HsiCube> {
        let mut t = Tape::new();
        let tr = self.trace(&mut t, y, sensing)?;
        HsiCube::from_tensor(t.value(tr.output()).clone())
    }

    /// Norm loss of the reconstruction against `gt`, recorded on `t`.
    pub fn loss_node(&self, t: &mut Tape, out: Var, gt: &HsiCube) -> Result<Var> {
        let g = t.leaf(gt.tensor().clone());
        let d = t.sub(out, g)?;
        let sq = t.mul(d, d)?;
        let s = t.sum(sq);
        t.sqrt(s)
    }
}
