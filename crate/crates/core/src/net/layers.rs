use rand::Rng;

use crate::error::Result;
use crate::tensor::{Init, Padding, ParamId, ParamStore, Tape, Var};

/// Dense map over the last axis with an optional bias.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let init = Init::Xavier {
            fan_in: cin,
            fan_out: cout,
        };
        let weight = store.add(format!("{name}.weight"), &[cin, cout], init, rng)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), &[cout], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            cin,
            cout,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let shape = t.value(x).shape().to_vec();
        let rows = t.value(x).len() / self.cin;
        let flat = t.reshape(x, &[rows, self.cin])?;
        let w = t.param(s, self.weight);
        let mut y = t.matmul(flat, w)?;
        if let Some(b) = self.bias {
            let b = t.param(s, b);
            y = t.add_bias(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.cout;
        t.reshape(y, &out_shape)
    }

    pub fn num_params(cin: usize, cout: usize, bias: bool) -> usize {
        cin * cout + if bias { cout } else { 0 }
    }

    pub fn macs(cin: usize, cout: usize, rows: usize) -> usize {
        rows * cin * cout
    }
}

/// Geometry and initialisation of a [`Conv`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub stride: usize,
    pub bias: bool,
    pub zero_init: bool,
}

impl ConvSpec {
    pub fn new(k: usize, cin: usize, cout: usize) -> Self {
        ConvSpec {
            k,
            cin,
            cout,
            groups: 1,
            stride: 1,
            bias: false,
            zero_init: false,
        }
    }

    pub fn depthwise(k: usize, c: usize) -> Self {
        ConvSpec {
            groups: c,
            ..ConvSpec::new(k, c, c)
        }
    }

    pub fn stride(self, stride: usize) -> Self {
        ConvSpec { stride, ..self }
    }

    pub fn with_bias(self) -> Self {
        ConvSpec { bias: true, ..self }
    }

    pub fn zeroed(self) -> Self {
        ConvSpec {
            zero_init: true,
            ..self
        }
    }

    /// Same padding at stride one, none otherwise.
    fn padding(&self) -> Padding {
        if self.stride == 1 {
            Padding::Same
        } else {
            Padding::Valid
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.stride == 1 {
            (h, w)
        } else {
            ((h - self.k) / self.stride + 1, (w - self.k) / self.stride + 1)
        }
    }

    pub fn num_params(&self) -> usize {
        self.k * self.k * (self.cin / self.groups) * self.cout + if self.bias { self.cout } else { 0 }
    }

    pub fn macs(&self, h: usize, w: usize) -> usize {
        let (oh, ow) = self.out_size(h, w);
        oh * ow * self.k * self.k * (self.cin / self.groups) * self.cout
    }
}

/// 2-D convolution (cross-correlation) layer.
#[derive(Clone, Debug)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut R) -> Result<Self> {
        let ConvSpec {
            k,
            cin,
            cout,
            groups,
            ..
        } = spec;
        let init = if spec.zero_init {
            Init::Zeros
        } else {
            Init::Xavier {
                fan_in: k * k * cin / groups,
                fan_out: k * k * cout / groups,
            }
        };
        let kernel = store.add(format!("{name}.weight"), &[k, k, cin / groups, cout], init, rng)?;
        let bias = if spec.bias {
            Some(store.add(format!("{name}.bias"), &[cout], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Conv { kernel, bias, spec })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let k = t.param(s, self.kernel);
        let mut y = t.conv2d(x, k, self.spec.stride, self.spec.padding(), self.spec.groups)?;
        if let Some(b) = self.bias {
            let b = t.param(s, b);
            y = t.add_bias(y, b)?;
        }
        Ok(y)
    }
}

/// Per-pixel normalisation over channels with a learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), &[c], Init::Ones, rng)?,
            beta: store.add(format!("{name}.beta"), &[c], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let n = t.layer_norm(x, LN_EPS);
        let g = t.param(s, self.gamma);
        let b = t.param(s, self.beta);
        let y = t.mul_bias(n, g)?;
        t.add_bias(y, b)
    }

    pub fn num_params(c: usize) -> usize {
        2 * c
    }
}
