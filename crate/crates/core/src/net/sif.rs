use rand::Rng;

use super::{Conv, ConvSpec};
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};

/// Spatial-spectral interaction over a spectrogram:
/// `spat = gelu(dw3(gelu(conv_in f)))`,
/// `spec = conv_out(gelu(conv_mid(spat + f)))`, output `spec + spat + f`.
#[derive(Clone, Debug)]
pub struct Sif {
    pub conv_in: Conv,
    pub dw: Conv,
    pub conv_mid: Conv,
    pub conv_out: Conv,
}

impl Sif {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(Sif {
            conv_in: Conv::new(store, &format!("{name}.conv_in"), ConvSpec::new(1, c, c), rng)?,
            dw: Conv::new(store, &format!("{name}.dw"), ConvSpec::depthwise(3, c), rng)?,
            conv_mid: Conv::new(store, &format!("{name}.conv_mid"), ConvSpec::new(1, c, c), rng)?,
            conv_out: Conv::new(store, &format!("{name}.conv_out"), ConvSpec::new(1, c, c), rng)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, f: Var) -> Result<Var> {
        let a = self.conv_in.forward(t, s, f)?;
        let a = t.gelu(a);
        let a = self.dw.forward(t, s, a)?;
        let spat = t.gelu(a);
        let b = t.add(spat, f)?;
        let b = self.conv_mid.forward(t, s, b)?;
        let b = t.gelu(b);
        let spec = self.conv_out.forward(t, s, b)?;
        let y = t.add(spec, spat)?;
        t.add(y, f)
    }

    pub fn num_params(c: usize) -> usize {
        3 * ConvSpec::new(1, c, c).num_params() + ConvSpec::depthwise(3, c).num_params()
    }

    pub fn macs(c: usize, h: usize, w: usize) -> usize {
        3 * ConvSpec::new(1, c, c).macs(h, w) + ConvSpec::depthwise(3, c).macs(h, w)
    }
}
