use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::{cassi, dct};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Spatial padding for [`Tape::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` on each side; preserves size for odd kernels at stride 1.
    Same,
    Valid,
    Explicit(usize),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    MulBias(Var, Var),
    Affine(Var, f64),
    ScalarAdd(Var, Var),
    ScalarMul(Var, Var),
    Broadcast(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sqrt(Var),
    Softmax(Var, usize),
    LayerNorm(Var, f64),
    Sum(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    RepeatLast(Var),
    Conv(Var, Var, ConvGeom),
    ConvTranspose(Var, Var, usize),
    Dct(Var, bool),
    Phi(Var, Arc<Tensor>, usize),
    PhiT(Var, Arc<Tensor>, usize),
    Resize(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so that gradients can be pulled back
/// through it. Nodes are appended in evaluation order, so every node's
/// inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to the leaves and parameters of a tape.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Grads {
    /// Gradient reaching `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds the parameter gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                store.accumulate_grad(id, g);
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant (or an input to differentiate against).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a parameter. Repeated calls for the
    /// same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    /// Matrix product. Rank-2 operands give a plain product; rank-3
    /// operands with equal leading dimension give a batched product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product with optional transposition of either operand
    /// (applied to the last two axes).
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("matmul", &sa, &sb);
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(bad());
        }
        let r = sa.len();
        let batch = if r == 3 {
            if sa[0] != sb[0] {
                return Err(bad());
            }
            sa[0]
        } else {
            1
        };
        let (m, ka) = if ta { (sa[r - 1], sa[r - 2]) } else { (sa[r - 2], sa[r - 1]) };
        let (kb, n) = if tb { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if ka != kb {
            return Err(bad());
        }
        let data = kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            batch,
            m,
            ka,
            n,
            ta,
            tb,
        );
        let shape = if r == 3 { vec![batch, m, n] } else { vec![m, n] };
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k: ka,
                n,
                ta,
                tb,
            },
        ))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))?;
        check_finite("div", self.value(out))?;
        Ok(out)
    }

    fn check_bias(&self, name: &'static str, x: Var, b: Var) -> Result<usize> {
        let c = *self.shape(x).last().unwrap();
        if self.value(b).len() != c {
            return Err(Error::shape(name, self.shape(x), self.shape(b)));
        }
        Ok(c)
    }

    /// Adds a per-channel vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.check_bias("add_bias", x, b)?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// Multiplies by a per-channel vector along the last axis.
    pub fn mul_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.check_bias("mul_bias", x, b)?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= bv[i % c];
        }
        Ok(self.push(out, Op::MulBias(x, b)))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    fn check_scalar(&self, name: &'static str, s: Var) -> Result<f64> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(name, self.shape(s), &[1]));
        }
        Ok(self.value(s).item())
    }

    /// Adds a tracked scalar to every element.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar("add_scalar", s)?;
        let out = self.value(x).map(|v| v + sv);
        Ok(self.push(out, Op::ScalarAdd(x, s)))
    }

    /// Multiplies every element by a tracked scalar.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar("mul_scalar", s)?;
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(out, Op::ScalarMul(x, s)))
    }

    /// Repeats a tracked scalar into a tensor of the given shape.
    pub fn broadcast(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        let sv = self.check_scalar("broadcast", s)?;
        let out = Tensor::new(shape, vec![sv; shape.iter().product()])?;
        Ok(self.push(out, Op::Broadcast(s)))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::NonFinite("sqrt of negative value"));
        }
        let out = self.value(x).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(x)))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let data = kernels::softmax(self.value(x).data(), &shape, axis);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(x, axis)))
    }

    /// Normalises every slice along the last axis to zero mean and unit
    /// variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
        }
        self.push(out, Op::LayerNorm(x, eps))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!(
                "bad permutation {perm:?} for shape {shape:?}"
            )));
        }
        let data = kernels::permute(self.value(x).data(), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Permute(x, perm.to_vec())))
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid("concat axis out of range"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&first, axis);
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Concat(xs.to_vec(), axis)))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let (outer, full, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Narrow { x, axis, start }))
    }

    /// Repeats a tensor whose last axis has length 1 `times` times along
    /// that axis.
    pub fn repeat_last(&mut self, x: Var, times: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if *shape.last().unwrap() != 1 || times == 0 {
            return Err(Error::invalid(format!("repeat_last needs trailing 1, got {shape:?}")));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, times))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = times;
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::RepeatLast(x)))
    }

    /// 2-D cross-correlation of an `H x W x Cin` image with a
    /// `kh x kw x (Cin/groups) x Cout` kernel.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        padding: Padding,
        groups: usize,
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let bad = || Error::shape("conv2d", &sx, &sk);
        if sx.len() != 3 || sk.len() != 4 || groups == 0 || stride == 0 {
            return Err(bad());
        }
        let (h, w, cin) = (sx[0], sx[1], sx[2]);
        let (kh, kw, cig, cout) = (sk[0], sk[1], sk[2], sk[3]);
        if cin % groups != 0 || cig * groups != cin || cout % groups != 0 {
            return Err(bad());
        }
        let pad = match padding {
            Padding::Same => (kh.max(kw) - 1) / 2,
            Padding::Valid => 0,
            Padding::Explicit(p) => p,
        };
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(bad());
        }
        let geom = ConvGeom {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            groups,
            stride,
            pad,
        };
        let data = kernels::conv2d(self.value(x).data(), self.value(k).data(), &geom);
        let out = Tensor::from_parts(vec![geom.out_h(), geom.out_w(), cout], data);
        Ok(self.push(out, Op::Conv(x, k, geom)))
    }

    /// Transposed convolution whose kernel size equals its stride
    /// (`s x s x Cin x Cout`), upsampling by `s`.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sk[0] != sk[1] || sk[2] != sx[2] {
            return Err(Error::shape("conv_transpose2d", &sx, &sk));
        }
        let s = sk[0];
        let data = kernels::conv_transpose(
            self.value(x).data(),
            self.value(k).data(),
            sx[0],
            sx[1],
            sx[2],
            sk[3],
            s,
        );
        let out = Tensor::from_parts(vec![sx[0] * s, sx[1] * s, sk[3]], data);
        Ok(self.push(out, Op::ConvTranspose(x, k, s)))
    }

    /// Band-wise orthonormal 2-D DCT-II (or its inverse) of `H x W x C`.
    pub fn dct2(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::invalid(format!("dct2 expects H x W x C, got {s:?}")));
        }
        let data = dct::dct2_hwc(self.value(x).data(), s[0], s[1], s[2], inverse);
        Ok(self.push(Tensor::from_parts(s, data), Op::Dct(x, inverse)))
    }

    /// CASSI forward operator: mask, disperse by `step` pixels per band,
    /// integrate over bands.
    pub fn phi(&mut self, x: Var, mask: &Arc<Tensor>, step: usize) -> Result<Var> {
        let out = cassi::phi_forward_tensor(self.value(x), mask, step)?;
        Ok(self.push(out, Op::Phi(x, Arc::clone(mask), step)))
    }

    /// Adjoint of [`Tape::phi`].
    pub fn phi_t(&mut self, y: Var, mask: &Arc<Tensor>, step: usize, bands: usize) -> Result<Var> {
        let out = cassi::phi_adjoint_tensor(self.value(y), mask, step, bands)?;
        Ok(self.push(out, Op::PhiT(y, Arc::clone(mask), step)))
    }

    /// Bilinear resampling of an `H x W` map (half-pixel centres).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || oh == 0 || ow == 0 {
            return Err(Error::invalid(format!("resize expects H x W, got {s:?}")));
        }
        if (s[0], s[1]) == (oh, ow) {
            return Ok(x);
        }
        let data = kernels::resize_bilinear(self.value(x).data(), s[0], s[1], oh, ow);
        Ok(self.push(Tensor::from_parts(vec![oh, ow], data), Op::Resize(x)))
    }

    /// Reverse pass from a scalar node; writes parameter gradients into
    /// `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store);
        Ok(grads)
    }

    /// Reverse pass from a scalar node. Each node reachable from `loss` is
    /// visited exactly once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (v, gi) in self.local_grads(node, &g) {
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Grads { grads, params })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| self.value(v);
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(val(v).shape().to_vec(), data);
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => vec![],
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                ta,
                tb,
            } => {
                let (ad, bd) = (val(a).data(), val(b).data());
                // C = A'B' with A' = op(A), B' = op(B)
                let da = if ta {
                    kernels::matmul(bd, gd, batch, k, n, m, tb, true)
                } else {
                    kernels::matmul(gd, bd, batch, m, n, k, false, !tb)
                };
                let db = if tb {
                    kernels::matmul(gd, ad, batch, n, m, k, true, ta)
                } else {
                    kernels::matmul(ad, gd, batch, k, m, n, !ta, false)
                };
                vec![(a, like(a, da)), (b, like(b, db))]
            }
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            &Op::Sub(a, b) => vec![(a, g.clone()), (b, g.scale(-1.0))],
            &Op::Mul(a, b) => {
                let da = g.zip_map(val(b), |x, y| x * y).unwrap();
                let db = g.zip_map(val(a), |x, y| x * y).unwrap();
                vec![(a, da), (b, db)]
            }
            &Op::Div(a, b) => {
                let da = g.zip_map(val(b), |x, y| x / y).unwrap();
                let db: Vec<f64> = gd
                    .iter()
                    .zip(node.value.data())
                    .zip(val(b).data())
                    .map(|((&gv, &q), &bv)| -gv * q / bv)
                    .collect();
                vec![(a, da), (b, like(b, db))]
            }
            &Op::AddBias(x, b) => {
                let c = val(b).len();
                let mut db = vec![0.0; c];
                for (i, &gv) in gd.iter().enumerate() {
                    db[i % c] += gv;
                }
                vec![(x, g.clone()), (b, like(b, db))]
            }
            &Op::MulBias(x, b) => {
                let bv = val(b).data();
                let c = bv.len();
                let mut db = vec![0.0; c];
                let mut dx = vec![0.0; gd.len()];
                for (i, (&gv, &xv)) in gd.iter().zip(val(x).data()).enumerate() {
                    db[i % c] += gv * xv;
                    dx[i] = gv * bv[i % c];
                }
                vec![(x, like(x, dx)), (b, like(b, db))]
            }
            &Op::Affine(x, s) => vec![(x, g.scale(s))],
            &Op::ScalarAdd(x, s) => vec![(x, g.clone()), (s, Tensor::scalar(g.sum()))],
            &Op::ScalarMul(x, s) => {
                let sv = val(s).item();
                let ds = g.dot(val(x)).unwrap();
                vec![(x, g.scale(sv)), (s, Tensor::scalar(ds))]
            }
            &Op::Broadcast(s) => vec![(s, Tensor::scalar(g.sum()))],
            &Op::Gelu(x) => vec![(x, g.zip_map(val(x), |gv, xv| gv * gelu_grad(xv)).unwrap())],
            &Op::Sigmoid(x) => vec![(x, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)).unwrap())],
            &Op::Softplus(x) => vec![(x, g.zip_map(val(x), |gv, xv| gv * sigmoid(xv)).unwrap())],
            &Op::Sqrt(x) => {
                let dx = g
                    .zip_map(&node.value, |gv, y| if y > 0.0 { gv * 0.5 / y } else { 0.0 })
                    .unwrap();
                vec![(x, dx)]
            }
            &Op::Softmax(x, axis) => {
                let dx = kernels::softmax_backward(node.value.data(), gd, node.value.shape(), axis);
                vec![(x, like(x, dx))]
            }
            &Op::LayerNorm(x, eps) => {
                let xv = val(x);
                let c = *xv.shape().last().unwrap();
                let mut dx = vec![0.0; xv.len()];
                for ((xr, gr), dr) in xv
                    .data()
                    .chunks(c)
                    .zip(gd.chunks(c))
                    .zip(dx.chunks_mut(c))
                {
                    let mean = xr.iter().sum::<f64>() / c as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let r = 1.0 / (var + eps).sqrt();
                    let gmean = gr.iter().sum::<f64>() / c as f64;
                    let gy = xr
                        .iter()
                        .zip(gr)
                        .map(|(xv, gv)| gv * (xv - mean) * r)
                        .sum::<f64>()
                        / c as f64;
                    for ((d, &xv), &gv) in dr.iter_mut().zip(xr).zip(gr) {
                        let y = (xv - mean) * r;
                        *d = r * (gv - gmean - y * gy);
                    }
                }
                vec![(x, like(x, dx))]
            }
            &Op::Sum(x) => {
                let gv = g.item();
                vec![(x, Tensor::full(val(x).shape(), gv))]
            }
            &Op::Reshape(x) => vec![(x, like(x, gd.to_vec()))],
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let dx = kernels::permute(gd, g.shape(), &inv);
                vec![(*x, like(*x, dx))]
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = kernels::axis_split(g.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|&v| Vec::with_capacity(val(v).len()))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (part, &v) in parts.iter_mut().zip(xs) {
                        let len = val(v).shape()[*axis] * inner;
                        part.extend_from_slice(&gd[off..off + len]);
                        off += len;
                    }
                }
                xs.iter()
                    .zip(parts)
                    .map(|(&v, p)| (v, like(v, p)))
                    .collect()
            }
            &Op::Narrow { x, axis, start } => {
                let xs = val(x).shape();
                let (outer, full, inner) = kernels::axis_split(xs, axis);
                let len = g.shape()[axis];
                let mut dx = vec![0.0; val(x).len()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                vec![(x, like(x, dx))]
            }
            &Op::RepeatLast(x) => {
                let times = *g.shape().last().unwrap();
                let dx = gd.chunks(times).map(|c| c.iter().sum()).collect();
                vec![(x, like(x, dx))]
            }
            &Op::Conv(x, k, geom) => {
                let (dx, dk) = kernels::conv2d_backward(val(x).data(), val(k).data(), gd, &geom);
                vec![(x, like(x, dx)), (k, like(k, dk))]
            }
            &Op::ConvTranspose(x, k, s) => {
                let (sx, sk) = (val(x).shape(), val(k).shape());
                let (dx, dk) = kernels::conv_transpose_backward(
                    val(x).data(),
                    val(k).data(),
                    gd,
                    sx[0],
                    sx[1],
                    sx[2],
                    sk[3],
                    s,
                );
                vec![(x, like(x, dx)), (k, like(k, dk))]
            }
            &Op::Dct(x, inverse) => {
                // orthonormal: the adjoint of the transform is its inverse
                let s = g.shape();
                vec![(x, like(x, dct::dct2_hwc(gd, s[0], s[1], s[2], !inverse)))]
            }
            Op::Phi(x, mask, step) => {
                let bands = val(*x).shape()[2];
                let dx = cassi::phi_adjoint_tensor(g, mask, *step, bands).unwrap();
                vec![(*x, dx)]
            }
            Op::PhiT(y, mask, step) => {
                let dy = cassi::phi_forward_tensor(g, mask, *step).unwrap();
                vec![(*y, dy)]
            }
            &Op::Resize(x) => {
                let s = val(x).shape();
                let dx = kernels::resize_bilinear_backward(gd, s[0], s[1], g.shape()[0], g.shape()[1]);
                vec![(x, like(x, dx))]
            }
        }
    }
}
