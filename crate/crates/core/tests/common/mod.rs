#![allow(dead_code)]

use cmdt_core::tensor::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

pub const FD_EPS: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        d / scale
    }
}

/// Contracts the output of `f` with a fixed random tensor so that every
/// output entry contributes to the scalar.
fn contract(t: &mut Tape, out: Var, seed: u64) -> Var {
    let w = uniform(t.value(out).shape(), seed ^ 0xabcdef);
    let w = t.leaf(w);
    let p = t.mul(out, w).unwrap();
    t.sum(p)
}

/// Largest norm-wise relative error between reverse-mode and central
/// difference gradients, over every input of `f`.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vs);
        let l = contract(&mut t, out, 1);
        t.value(l).item()
    };
    let mut t = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = f(&mut t, &vs);
    let l = contract(&mut t, out, 1);
    let g = t.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vs.iter().enumerate() {
        let analytic = g
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = vec![0.0; inputs[i].len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_EPS;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Largest norm-wise relative error over parameter tensors, probing at
/// most `per_param` entries of each.
pub fn check_params(
    store: &ParamStore,
    per_param: usize,
    f: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> (f64, String) {
    let eval = |s: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let out = f(&mut t, s);
        let l = contract(&mut t, out, 2);
        t.value(l).item()
    };
    let mut s = store.clone();
    s.zero_grad();
    let mut t = Tape::new();
    let out = f(&mut t, &s);
    let l = contract(&mut t, out, 2);
    t.backward_into(l, &mut s).unwrap();
    let mut worst = (0.0f64, String::new());
    let ids: Vec<_> = s.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let n = s.value(id).len();
        let stride = n.div_ceil(per_param).max(1);
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        let analytic: Vec<f64> = idx.iter().map(|&k| s.grad(id).data()[k]).collect();
        let numeric: Vec<f64> = idx
            .iter()
            .map(|&k| {
                let mut probe = s.clone();
                let mut v = probe.value(id).clone();
                v.data_mut()[k] += FD_EPS;
                probe.set_value(id, v.clone()).unwrap();
                let up = eval(&probe);
                v.data_mut()[k] -= 2.0 * FD_EPS;
                probe.set_value(id, v).unwrap();
                (up - eval(&probe)) / (2.0 * FD_EPS)
            })
            .collect();
        let e = rel_err(&analytic, &numeric);
        if e > worst.0 {
            worst = (e, name);
        }
    }
    worst
}

/// Direct nested-loop cross-correlation, `H x W x Cin` by
/// `k x k x (Cin/g) x Cout`, zero padding `pad`, stride 1.
pub fn naive_conv(x: &Tensor, k: &Tensor, groups: usize, pad: usize) -> Tensor {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let (kh, kw, cig, cout) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let cog = cout / groups;
    let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let mut out = Tensor::zeros(&[oh, ow, cout]);
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let g = co / cog;
                let mut s = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy + ky) as isize - pad as isize;
                        let ix = (ox + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cig {
                            s += x.get(&[iy as usize, ix as usize, g * cig + ci]) * k.get(&[ky, kx, ci, co]);
                        }
                    }
                }
                out.set(&[oy, ox, co], s);
            }
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Replaces every parameter with uniform noise in `[-scale, scale]`, so
/// that zero-initialised layers do not hide gradient paths.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        p.value = Tensor::uniform(p.value.shape(), -scale, scale, &mut r);
    }
}
