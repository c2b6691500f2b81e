use rand::Rng;

use super::block::BlockShape;
use super::{check_divisible, hwc, CmdtBlock, Conv, ConvSpec, NetConfig};
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};

/// Two-level U-shaped denoiser with a global residual:
///
/// ```text
/// e = embed([beta, x])            H x W x w
/// a = enc(e)
/// b = mid(down(a))                H/2 x W/2 x 2w
/// d = dec(fuse([up(b), a]))
/// z = x + out(d)
/// ```
///
/// The output convolution starts at zero so the module is the identity at
/// initialisation.
#[derive(Clone, Debug)]
pub struct Prior {
    pub embed: Conv,
    pub enc: CmdtBlock,
    pub down: Conv,
    pub mid: CmdtBlock,
    pub up: ParamId,
    pub fuse: Conv,
    pub dec: CmdtBlock,
    pub out: Conv,
    pub cfg: NetConfig,
}

/// Every convolution and block of a prior, for counting.
struct Layout {
    embed: ConvSpec,
    down: ConvSpec,
    fuse: ConvSpec,
    out: ConvSpec,
    full: BlockShape,
    half: BlockShape,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let (c, w) = (cfg.bands, cfg.embed);
        let full = BlockShape {
            channels: w,
            heads: cfg.heads,
            token: cfg.token,
            ffn_mult: cfg.ffn_mult,
            height: cfg.height,
            width: cfg.width,
        };
        Layout {
            embed: ConvSpec::new(3, c + 1, w).with_bias(),
            down: ConvSpec::new(2, w, 2 * w).stride(2),
            fuse: ConvSpec::new(1, 2 * w, w).with_bias(),
            out: ConvSpec::new(3, w, c).with_bias().zeroed(),
            full,
            half: BlockShape {
                channels: 2 * w,
                height: cfg.height / 2,
                width: cfg.width / 2,
                ..full
            },
        }
    }
}

/// Intermediate maps of one prior evaluation.
#[derive(Clone, Debug)]
pub struct PriorTrace {
    pub out: Var,
    /// Encoder, bottleneck and decoder block traces, in that order.
    pub blocks: Vec<super::block::BlockTrace>,
}

impl Prior {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let l = Layout::new(cfg);
        let w = cfg.embed;
        let up = store.add(
            format!("{name}.up.weight"),
            &[2, 2, 2 * w, w],
            Init::Xavier {
                fan_in: 4 * 2 * w,
                fan_out: 4 * w,
            },
            rng,
        )?;
        Ok(Prior {
            embed: Conv::new(store, &format!("{name}.embed"), l.embed, rng)?,
            enc: CmdtBlock::new(store, &format!("{name}.enc"), l.full, rng)?,
            down: Conv::new(store, &format!("{name}.down"), l.down, rng)?,
            mid: CmdtBlock::new(store, &format!("{name}.mid"), l.half, rng)?,
            up,
            fuse: Conv::new(store, &format!("{name}.fuse"), l.fuse, rng)?,
            dec: CmdtBlock::new(store, &format!("{name}.dec"), l.full, rng)?,
            out: Conv::new(store, &format!("{name}.out"), l.out, rng)?,
            cfg: *cfg,
        })
    }

    /// `z = P(x, beta)` for an `H x W x C` input and a scalar `beta`.
    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var, beta: Var) -> Result<Var> {
        Ok(self.trace(t, s, x, beta)?.out)
    }

    pub fn trace(&self, t: &mut Tape, s: &ParamStore, x: Var, beta: Var) -> Result<PriorTrace> {
        let (h, w, c) = hwc(t, x)?;
        if c != self.cfg.bands {
            return Err(Error::shape("prior", &[h, w, c], &[self.cfg.bands]));
        }
        check_divisible(h, w, 2 * self.cfg.token)?;
        let b = t.broadcast(beta, &[h, w, 1])?;
        let inp = t.concat(&[b, x], 2)?;
        let e = self.embed.forward(t, s, inp)?;
        let enc = self.enc.trace(t, s, e)?;
        let d = self.down.forward(t, s, enc.out)?;
        let mid = self.mid.trace(t, s, d)?;
        let upk = t.param(s, self.up);
        let u = t.conv_transpose2d(mid.out, upk)?;
        let cat = t.concat(&[u, enc.out], 2)?;
        let f = self.fuse.forward(t, s, cat)?;
        let dec = self.dec.trace(t, s, f)?;
        let o = self.out.forward(t, s, dec.out)?;
        Ok(PriorTrace {
            out: t.add(x, o)?,
            blocks: vec![enc, mid, dec],
        })
    }

    pub fn num_params(cfg: &NetConfig) -> usize {
        let l = Layout::new(cfg);
        let w = cfg.embed;
        l.embed.num_params()
            + l.down.num_params()
            + 2 * 2 * (2 * w) * w
            + l.fuse.num_params()
            + l.out.num_params()
            + 2 * CmdtBlock::num_params(l.full)
            + CmdtBlock::num_params(l.half)
    }

    pub fn macs(cfg: &NetConfig, h: usize, w: usize) -> usize {
        let l = Layout::new(cfg);
        let e = cfg.embed;
        l.embed.macs(h, w)
            + 2 * CmdtBlock::macs(l.full, h, w)
            + l.down.macs(h, w)
            + CmdtBlock::macs(l.half, h / 2, w / 2)
            + (h / 2) * (w / 2) * 4 * (2 * e) * e
            + l.fuse.macs(h, w)
            + l.out.macs(h, w)
    }
}
