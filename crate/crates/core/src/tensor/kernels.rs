//! Raw numeric kernels over flat row-major slices.
//!
//! Every multiply-accumulate performed by a matmul, convolution or DCT
//! kernel is tallied in a thread-local counter, which the complexity
//! tests and the FLOP accounting cross-check read back.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn count_macs(n: usize) {
    MACS.with(|c| c.set(c.get() + n as u64));
}

/// Multiply-accumulates executed on this thread since the last reset.
pub fn mac_count() -> u64 {
    MACS.with(|c| c.get())
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

/// Batched transpose: `batch` matrices of `rows x cols`.
pub fn transpose(a: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    let sz = rows * cols;
    for b in 0..batch {
        let src = &a[b * sz..(b + 1) * sz];
        let dst = &mut out[b * sz..(b + 1) * sz];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

/// Batched matrix product `op(a) * op(b)` with `op(a)` of shape `m x k`
/// and `op(b)` of shape `k x n`. When `ta` is set, `a` is stored as
/// `k x m`; likewise `b` as `n x k` when `tb` is set.
#[allow(clippy::too_many_arguments)]
pub fn matmul(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<f64> {
    let a_owned;
    let a = if ta {
        a_owned = transpose(a, batch, k, m);
        &a_owned[..]
    } else {
        a
    };
    let b_owned;
    let b = if tb {
        b_owned = transpose(b, batch, n, k);
        &b_owned[..]
    } else {
        b
    };
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let row = &mut ob[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ab[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bb[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    count_macs(batch * m * k * n);
    out
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for l in 0..len {
                mx = mx.max(x[base + l * inner]);
            }
            let mut s = 0.0;
            for l in 0..len {
                let e = (x[base + l * inner] - mx).exp();
                out[base + l * inner] = e;
                s += e;
            }
            for l in 0..len {
                out[base + l * inner] /= s;
            }
        }
    }
    out
}

pub fn softmax_backward(y: &[f64], g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for l in 0..len {
                let idx = base + l * inner;
                dot += g[idx] * y[idx];
            }
            for l in 0..len {
                let idx = base + l * inner;
                out[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Returns `x` with axes reordered so that output axis `i` is input axis
/// `perm[i]`.
pub fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (last_len, last_stride) = (out_shape[last], src_strides[last]);
    loop {
        let base: usize = idx[..last]
            .iter()
            .zip(&src_strides[..last])
            .map(|(i, s)| i * s)
            .sum();
        for l in 0..last_len {
            out.push(x[base + l * last_stride]);
        }
        // advance the multi-index over all but the last axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Geometry of a 2-D convolution over an `H x W x Cin` image with a
/// `kh x kw x (Cin/groups) x Cout` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub groups: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Calls `f(oy, ox, iy, ix, ky, kx)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for oy in 0..oh {
            for ky in 0..self.kh {
                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                if iy < 0 || iy >= self.h as isize {
                    continue;
                }
                for ox in 0..ow {
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        f(oy, ox, iy as usize, ix as usize, ky, kx);
                    }
                }
            }
        }
    }

    fn macs(&self) -> usize {
        self.out_h() * self.out_w() * self.kh * self.kw * (self.cin / self.groups) * self.cout
    }
}

/// Cross-correlation (no kernel flip).
pub fn conv2d(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ow, cout) = (g.out_w(), g.cout);
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let mut out = vec![0.0; g.out_h() * ow * cout];
    g.for_each_tap(|oy, ox, iy, ix, ky, kx| {
        let xin = &x[(iy * g.w + ix) * g.cin..(iy * g.w + ix + 1) * g.cin];
        let o = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
        let kbase = (ky * g.kw + kx) * cig * cout;
        for grp in 0..g.groups {
            let og = &mut o[grp * cog..(grp + 1) * cog];
            for ci in 0..cig {
                let xv = xin[grp * cig + ci];
                if xv == 0.0 {
                    continue;
                }
                let kr = &k[kbase + ci * cout + grp * cog..kbase + ci * cout + (grp + 1) * cog];
                for (ov, &kv) in og.iter_mut().zip(kr) {
                    *ov += xv * kv;
                }
            }
        }
    });
    count_macs(g.macs());
    out
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
pub fn conv2d_backward(x: &[f64], k: &[f64], gout: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let (ow, cout) = (g.out_w(), g.cout);
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    g.for_each_tap(|oy, ox, iy, ix, ky, kx| {
        let go = &gout[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
        let xoff = (iy * g.w + ix) * g.cin;
        let kbase = (ky * g.kw + kx) * cig * cout;
        for grp in 0..g.groups {
            let gg = &go[grp * cog..(grp + 1) * cog];
            for ci in 0..cig {
                let xi = xoff + grp * cig + ci;
                let xv = x[xi];
                let kslice = kbase + ci * cout + grp * cog;
                let mut acc = 0.0;
                for (j, &gv) in gg.iter().enumerate() {
                    acc += gv * k[kslice + j];
                    dk[kslice + j] += gv * xv;
                }
                dx[xi] += acc;
            }
        }
    });
    count_macs(2 * g.macs());
    (dx, dk)
}

/// Transposed convolution with kernel size equal to the stride, so output
/// windows never overlap: `out[s*i+a, s*j+b, :] = x[i, j, :] * k[a, b]`.
pub fn conv_transpose(
    x: &[f64],
    k: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    s: usize,
) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; oh * ow * cout];
    for i in 0..h {
        for j in 0..w {
            let xin = &x[(i * w + j) * cin..(i * w + j + 1) * cin];
            for a in 0..s {
                for b in 0..s {
                    let oi = ((i * s + a) * ow + j * s + b) * cout;
                    let o = &mut out[oi..oi + cout];
                    let kb = (a * s + b) * cin * cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        let kr = &k[kb + ci * cout..kb + (ci + 1) * cout];
                        for (ov, &kv) in o.iter_mut().zip(kr) {
                            *ov += xv * kv;
                        }
                    }
                }
            }
        }
    }
    count_macs(h * w * s * s * cin * cout);
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    s: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ow = w * s;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    for i in 0..h {
        for j in 0..w {
            let xoff = (i * w + j) * cin;
            for a in 0..s {
                for b in 0..s {
                    let oi = ((i * s + a) * ow + j * s + b) * cout;
                    let go = &gout[oi..oi + cout];
                    let kb = (a * s + b) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xoff + ci];
                        let mut acc = 0.0;
                        for (co, &gv) in go.iter().enumerate() {
                            acc += gv * k[kb + ci * cout + co];
                            dk[kb + ci * cout + co] += gv * xv;
                        }
                        dx[xoff + ci] += acc;
                    }
                }
            }
        }
    }
    count_macs(2 * h * w * s * s * cin * cout);
    (dx, dk)
}

/// Sampling taps for resizing a length-`n` axis to `m` samples with
/// half-pixel centres: each output index gets `(i0, i1, t)` meaning
/// `(1-t)*src[i0] + t*src[i1]`.
pub fn bilinear_taps(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
    let scale = n as f64 / m as f64;
    (0..m)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; oh * ow];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            out[oy * ow + ox] = (1.0 - fy) * ((1.0 - fx) * x[y0 * w + x0] + fx * x[y0 * w + x1])
                + fy * ((1.0 - fx) * x[y1 * w + x0] + fx * x[y1 * w + x1]);
        }
    }
    out
}

pub fn resize_bilinear_backward(g: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = vec![0.0; h * w];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let gv = g[oy * ow + ox];
            dx[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
            dx[y0 * w + x1] += gv * (1.0 - fy) * fx;
            dx[y1 * w + x0] += gv * fy * (1.0 - fx);
            dx[y1 * w + x1] += gv * fy * fx;
        }
    }
    dx
}
