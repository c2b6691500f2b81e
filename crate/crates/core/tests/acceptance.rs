//! End-to-end acceptance criteria. Every criterion prints one PASS/FAIL
//! line with its measured values and runtime; the test fails if any
//! criterion does.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cmdt_core::cassi::{self, phi_adjoint, phi_forward, phi_phit_diag, Measurement, SensingConfig};
use cmdt_core::dct::{dct2_forward, dct2_inverse};
use cmdt_core::gaptv::{gap_tv, GapTvConfig};
use cmdt_core::hfc::{correlation_maps, spearman, token_correlation};
use cmdt_core::io::cmdw::WeightFile;
use cmdt_core::io::{hsic, pgm};
use cmdt_core::metrics::{count_flops, count_params, fdg, psnr};
use cmdt_core::net::{BlockShape, CmdtBlock, GatingFilter, NetConfig, Prior, Saf, Sif, SpaceAttention};
use cmdt_core::scene::{gen_scene, SceneKind, SceneSpec};
use cmdt_core::tensor::{Padding, ParamStore, Tape, Tensor};
use cmdt_core::unfold::{data_module, train, Model, ModelConfig, TrainConfig};
use cmdt_core::HsiCube;
use common::{check_inputs, check_params, randomize, rel_err, rng, uniform};
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_cube(h: usize, w: usize, c: usize, seed: u64) -> HsiCube {
    HsiCube::from_tensor(uniform(&[h, w, c], seed)).unwrap()
}

/// `Phi` as an explicit list of columns, one per unit input.
fn dense_phi(cfg: &SensingConfig) -> Vec<Vec<f64>> {
    let (h, w, c) = (cfg.height(), cfg.width(), cfg.bands());
    (0..h * w * c)
        .map(|k| {
            let mut e = vec![0.0; h * w * c];
            e[k] = 1.0;
            phi_forward(&HsiCube::new(h, w, c, e).unwrap(), cfg).unwrap().into_tensor().into_data()
        })
        .collect()
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn dct_round_trip_and_parseval() -> Outcome {
    let mut worst_rt: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    for (i, &(h, w, c)) in [(1, 1, 1), (7, 5, 3), (16, 16, 8), (33, 20, 4), (64, 64, 8)].iter().enumerate() {
        let x = random_cube(h, w, c, i as u64);
        let f = dct2_forward(&x).unwrap();
        let back = dct2_inverse(&f);
        worst_rt = worst_rt.max(rel_err(back.data(), x.data()));
        let (ex, ef) = (x.tensor().norm_sq(), f.coeffs().norm_sq());
        worst_energy = worst_energy.max((ex - ef).abs() / ex);
    }
    // direct double sum with the orthonormal scaling
    let x = random_cube(8, 8, 1, 99);
    let f = dct2_forward(&x).unwrap();
    let a = |k: usize| if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
    let pi = std::f64::consts::PI;
    let mut oracle = vec![0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    s += x.get(i, j, 0)
                        * ((2 * i + 1) as f64 * u as f64 * pi / 16.0).cos()
                        * ((2 * j + 1) as f64 * v as f64 * pi / 16.0).cos();
                }
            }
            oracle[u * 8 + v] = a(u) * a(v) * s;
        }
    }
    let naive = rel_err(f.coeffs().data(), &oracle);
    check(
        worst_rt <= 1e-10 && worst_energy <= 1e-10 && naive <= 1e-10,
        format!("round trip {worst_rt:.1e}, energy {worst_energy:.1e}, naive 8x8 {naive:.1e} (tol 1e-10)"),
    )
}

fn cassi_adjoint_identity() -> Outcome {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    let mut dense_checked = 0;
    let mut worst_diag: f64 = 0.0;
    for _ in 0..100 {
        let (h, w, c) = (r.random_range(1..=16), r.random_range(1..=16), r.random_range(1..=8));
        let step = r.random_range(0..=2);
        let seed: u64 = r.random();
        let mask = Tensor::uniform(&[h, w], 0.0, 1.0, &mut rng(seed));
        let cfg = SensingConfig::new(mask, step, c, 0.0).unwrap();
        let x = random_cube(h, w, c, seed ^ 1);
        let y = Measurement::from_tensor(uniform(&[h, cfg.measurement_width()], seed ^ 2)).unwrap();
        let lhs = phi_forward(&x, &cfg).unwrap().tensor().dot(y.tensor()).unwrap();
        let rhs = x.tensor().dot(phi_adjoint(&y, &cfg).unwrap().tensor()).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
        if h * w * c <= 512 {
            dense_checked += 1;
            let cols = dense_phi(&cfg);
            let diag = phi_phit_diag(&cfg);
            let m = diag.len();
            let mut gram = vec![0.0; m * m];
            for col in &cols {
                for (a, va) in col.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    for (b, vb) in col.iter().enumerate() {
                        gram[a * m + b] += va * vb;
                    }
                }
            }
            for a in 0..m {
                for b in 0..m {
                    let expect = if a == b { diag.data()[a] } else { 0.0 };
                    worst_diag = worst_diag.max((gram[a * m + b] - expect).abs());
                }
            }
        }
    }
    check(
        worst <= 1e-4 && worst_diag <= 1e-12,
        format!(
            "100 shapes, worst relative gap {worst:.1e} (tol 1e-4); dense diagonal on {dense_checked} shapes, worst {worst_diag:.1e}"
        ),
    )
}

fn data_module_oracle() -> Outcome {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (h, w, c) = (r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=4));
        let step = r.random_range(0..=2);
        let alpha = r.random_range(0.01..2.0);
        let seed: u64 = r.random();
        let mask = Tensor::uniform(&[h, w], 0.0, 1.0, &mut rng(seed));
        let cfg = SensingConfig::new(mask, step, c, 0.0).unwrap();
        let z = random_cube(h, w, c, seed ^ 3);
        let y = cassi::simulate(&random_cube(h, w, c, seed ^ 4), &cfg, 0).unwrap();
        let cols = dense_phi(&cfg);
        let (m, n) = (y.tensor().len(), cols.len());
        let gram: Vec<Vec<f64>> = (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| cols.iter().map(|col| col[a] * col[b]).sum::<f64>() + if a == b { alpha } else { 0.0 })
                    .collect()
            })
            .collect();
        let resid: Vec<f64> = (0..m)
            .map(|a| y.tensor().data()[a] - (0..n).map(|k| cols[k][a] * z.data()[k]).sum::<f64>())
            .collect();
        let q = solve(gram, resid);
        let expect: Vec<f64> = (0..n)
            .map(|k| z.data()[k] + (0..m).map(|a| cols[k][a] * q[a]).sum::<f64>())
            .collect();
        let got = data_module(&z, &y, &cfg, alpha).unwrap();
        for (g, e) in got.data().iter().zip(&expect) {
            worst = worst.max((g - e).abs());
        }
    }
    check(worst <= 1e-4, format!("20 instances, max abs deviation {worst:.1e} (tol 1e-4)"))
}

fn tiny_net() -> NetConfig {
    NetConfig {
        bands: 3,
        embed: 4,
        token: 2,
        heads: 2,
        ffn_mult: 2,
        ipe_width: 4,
        height: 8,
        width: 8,
    }
}

fn block_shape() -> BlockShape {
    BlockShape {
        channels: 4,
        heads: 2,
        token: 2,
        ffn_mult: 2,
        height: 4,
        width: 4,
    }
}

fn gradient_suite() -> Outcome {
    let mut results: Vec<(&str, f64)> = Vec::new();
    results.push((
        "matmul",
        check_inputs(&[uniform(&[3, 4], 1), uniform(&[4, 2], 2)], |t, v| t.matmul(v[0], v[1]).unwrap()),
    ));
    results.push((
        "conv",
        check_inputs(&[uniform(&[5, 4, 4], 3), uniform(&[3, 3, 4, 3], 4)], |t, v| {
            t.conv2d(v[0], v[1], 1, Padding::Same, 1).unwrap()
        }),
    ));
    results.push((
        "softmax",
        check_inputs(&[uniform(&[2, 3, 4], 5).scale(3.0)], |t, v| t.softmax(v[0], 2).unwrap()),
    ));
    results.push(("gelu", check_inputs(&[uniform(&[3, 4], 6).scale(3.0)], |t, v| t.gelu(v[0]))));
    results.push((
        "layernorm",
        check_inputs(&[uniform(&[3, 2, 5], 7)], |t, v| t.layer_norm(v[0], 1e-5)),
    ));
    results.push((
        "dct",
        check_inputs(&[uniform(&[4, 6, 3], 8)], |t, v| t.dct2(v[0], false).unwrap()),
    ));

    let mut store = ParamStore::new();
    let saf = Saf::new(&mut store, "saf", 4, 2, 2, &mut rng(9)).unwrap();
    randomize(&mut store, 10, 0.8);
    let x = uniform(&[4, 4, 4], 11);
    let (e, _) = check_params(&store, 16, |t, s| {
        let xv = t.leaf(x.clone());
        saf.forward(t, s, xv).unwrap()
    });
    let ei = check_inputs(&[x.clone()], |t, v| saf.forward(t, &store, v[0]).unwrap());
    results.push(("saf", e.max(ei)));

    let mut store = ParamStore::new();
    let sif = Sif::new(&mut store, "sif", 3, &mut rng(12)).unwrap();
    randomize(&mut store, 13, 0.7);
    let x3 = uniform(&[4, 6, 3], 14);
    let (e, _) = check_params(&store, 16, |t, s| {
        let xv = t.leaf(x3.clone());
        sif.forward(t, s, xv).unwrap()
    });
    let ei = check_inputs(&[x3.clone()], |t, v| sif.forward(t, &store, v[0]).unwrap());
    results.push(("sif", e.max(ei)));

    let mut store = ParamStore::new();
    let gate = GatingFilter::new(&mut store, "g", 2, 3, &mut rng(15)).unwrap();
    randomize(&mut store, 16, 1.5);
    let b3 = uniform(&[4, 6, 3], 17);
    let (e, _) = check_params(&store, 16, |t, s| {
        let (a, b) = (t.leaf(x3.clone()), t.leaf(b3.clone()));
        gate.forward(t, s, a, b).unwrap()
    });
    let ei = check_inputs(&[x3.clone(), b3.clone()], |t, v| gate.forward(t, &store, v[0], v[1]).unwrap());
    results.push(("gate", e.max(ei)));

    let mut store = ParamStore::new();
    let sa = SpaceAttention::new(&mut store, "sa", 4, 2, 2, &mut rng(18)).unwrap();
    randomize(&mut store, 19, 0.8);
    let (e, _) = check_params(&store, 16, |t, s| {
        let xv = t.leaf(x.clone());
        sa.forward(t, s, xv).unwrap()
    });
    let ei = check_inputs(&[x.clone()], |t, v| sa.forward(t, &store, v[0]).unwrap());
    results.push(("space-attention", e.max(ei)));

    let mut store = ParamStore::new();
    let blk = CmdtBlock::new(&mut store, "blk", block_shape(), &mut rng(20)).unwrap();
    randomize(&mut store, 21, 0.5);
    let x8 = uniform(&[8, 8, 4], 22);
    let (e, _) = check_params(&store, 12, |t, s| {
        let xv = t.leaf(x8.clone());
        blk.forward(t, s, xv).unwrap()
    });
    let ei = check_inputs(&[x8], |t, v| blk.forward(t, &store, v[0]).unwrap());
    results.push(("cmdt-block", e.max(ei)));

    let mut store = ParamStore::new();
    let prior = Prior::new(&mut store, "pm", &tiny_net(), &mut rng(23)).unwrap();
    randomize(&mut store, 24, 0.4);
    let xp = uniform(&[8, 8, 3], 25);
    let (e, _) = check_params(&store, 6, |t, s| {
        let xv = t.leaf(xp.clone());
        let beta = t.leaf(Tensor::full(&[1], 0.2));
        prior.forward(t, s, xv, beta).unwrap()
    });
    let ei = check_inputs(&[xp, Tensor::full(&[1], 0.2)], |t, v| prior.forward(t, &store, v[0], v[1]).unwrap());
    results.push(("prior", e.max(ei)));

    let mut model = Model::new(ModelConfig::new(tiny_net(), 2, true, 1), 5).unwrap();
    randomize(&mut model.store, 6, 0.6);
    let sensing = SensingConfig::new(SensingConfig::random_mask(8, 8, 0.5, 3), 1, 3, 0.0).unwrap();
    let scene = gen_scene(&SceneSpec::new(SceneKind::PiecewiseConstant, 8, 8, 3, 4, 0.8)).unwrap();
    let y = cassi::simulate(&scene, &sensing, 0).unwrap();
    let probe = model.clone();
    let (e, _) = check_params(&model.store, 4, |t, s| {
        let mut m = probe.clone();
        m.store = s.clone();
        let tr = m.trace(t, &y, &sensing).unwrap();
        let l = m.loss_node(t, tr.output(), &scene).unwrap();
        t.reshape(l, &[1]).unwrap()
    });
    results.push(("2-stage unfolding", e));

    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.0e}")).collect::<Vec<_>>().join(", ");
    check(worst < 1e-4, format!("{detail} (tol 1e-4)"))
}

fn max_dev(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b).unwrap()
}

fn residual_identities() -> Outcome {
    let mut store = ParamStore::new();
    let blk = CmdtBlock::new(&mut store, "blk", block_shape(), &mut rng(1)).unwrap();
    randomize(&mut store, 2, 0.5);
    store.zero_where(|n| n.starts_with("blk.proj.") || n.starts_with("blk.ffn.reduce."));
    let x = uniform(&[8, 8, 4], 3);
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let out = blk.forward(&mut t, &store, xv).unwrap();
    let d_block = max_dev(t.value(out), &x);

    let mut store = ParamStore::new();
    let prior = Prior::new(&mut store, "pm", &tiny_net(), &mut rng(4)).unwrap();
    randomize(&mut store, 5, 0.5);
    store.zero_where(|n| n.starts_with("pm.out."));
    let xp = uniform(&[8, 8, 3], 6);
    let mut t = Tape::new();
    let xv = t.leaf(xp.clone());
    let beta = t.leaf(Tensor::full(&[1], 0.3));
    let out = prior.forward(&mut t, &store, xv, beta).unwrap();
    let d_prior = max_dev(t.value(out), &xp);

    let mut store = ParamStore::new();
    let sif = Sif::new(&mut store, "sif", 3, &mut rng(7)).unwrap();
    store.zero_where(|_| true);
    let xs = uniform(&[4, 6, 3], 8);
    let mut t = Tape::new();
    let xv = t.leaf(xs.clone());
    let out = sif.forward(&mut t, &store, xv).unwrap();
    let d_sif = max_dev(t.value(out), &xs);

    check(
        d_block.max(d_prior).max(d_sif) < 1e-6,
        format!("block {d_block:.1e}, prior {d_prior:.1e}, sif {d_sif:.1e} (tol 1e-6)"),
    )
}

fn gating_contract() -> Outcome {
    let (a, b) = (uniform(&[8, 8, 3], 1), uniform(&[8, 8, 3], 2));
    let mut devs = Vec::new();
    for (logit, expect) in [
        (0.0, a.add(&b).unwrap().scale(0.5)),
        (20.0, a.clone()),
        (-20.0, b.clone()),
    ] {
        let mut store = ParamStore::new();
        let g = GatingFilter::new(&mut store, "g", 4, 4, &mut rng(0)).unwrap();
        store.set_value(g.logits, Tensor::full(&[4, 4], logit)).unwrap();
        let mut t = Tape::new();
        let (av, bv) = (t.leaf(a.clone()), t.leaf(b.clone()));
        let y = g.forward(&mut t, &store, av, bv).unwrap();
        devs.push(max_dev(t.value(y), &expect));
    }
    check(
        devs[0] <= 1e-15 && devs[1] < 1e-6 && devs[2] < 1e-6,
        format!("mean {:.1e}, select a {:.1e}, select b {:.1e}", devs[0], devs[1], devs[2]),
    )
}

/// Shared setting of the overfit and baseline criteria.
struct Overfit {
    scene: HsiCube,
    sensing: SensingConfig,
    y: Measurement,
    psnr_k3: f64,
    psnr_k1: f64,
    losses_k3: Vec<f64>,
}

const OVERFIT_STEPS: usize = 2000;
const OVERFIT_LR: f64 = 4e-4;

fn overfit_net() -> NetConfig {
    let mut net = NetConfig::new(32, 32, 8);
    net.embed = 8;
    net.heads = 2;
    net
}

/// Reconstruction PSNR after training, and the per-step losses.
fn train_on_scene(stages: usize, scene: &HsiCube, sensing: &SensingConfig, y: &Measurement) -> (f64, Vec<f64>) {
    let mut model = Model::new(ModelConfig::new(overfit_net(), stages, true, 2), 7).unwrap();
    let tc = TrainConfig {
        steps: OVERFIT_STEPS,
        lr0: OVERFIT_LR,
        batch: 1,
        seed: 7,
        augment: false,
    };
    let outcome = train(&mut model, std::slice::from_ref(scene), sensing, &tc, None).unwrap();
    let xhat = model.reconstruct(y, sensing).unwrap();
    let losses = outcome.log.iter().map(|r| r.loss).collect();
    (psnr(&xhat, scene, 1.0).unwrap().mean, losses)
}

fn run_overfit() -> Overfit {
    let scene = gen_scene(&SceneSpec::new(SceneKind::PiecewiseConstant, 32, 32, 8, 7, 0.8)).unwrap();
    let sensing = SensingConfig::new(SensingConfig::random_mask(32, 32, 0.5, 7), 2, 8, 0.0).unwrap();
    let y = cassi::simulate(&scene, &sensing, 0).unwrap();
    let (psnr_k3, losses_k3) = train_on_scene(3, &scene, &sensing, &y);
    let (psnr_k1, _) = train_on_scene(1, &scene, &sensing, &y);
    Overfit {
        scene,
        sensing,
        y,
        psnr_k3,
        psnr_k1,
        losses_k3,
    }
}

fn overfit_sanity(o: &Overfit) -> Outcome {
    check(
        o.psnr_k3 >= 40.0 && o.psnr_k3 >= o.psnr_k1,
        format!(
            "K=3 {:.2} dB (need >= 40), K=1 {:.2} dB, {OVERFIT_STEPS} steps",
            o.psnr_k3, o.psnr_k1
        ),
    )
}

/// Mean loss of each 500-step window may exceed the previous window's by at
/// most 5 %.
fn loss_windows(o: &Overfit) -> Outcome {
    let means: Vec<f64> = o
        .losses_k3
        .chunks(500)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    let ok = means.windows(2).all(|p| p[1] <= 1.05 * p[0]);
    let shown = means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" -> ");
    check(ok && means.len() >= 2, format!("K=3 window means {shown} (slack 1.05)"))
}

fn baseline_ordering(o: &Overfit) -> Outcome {
    let sb = cassi::normalized_shift_back(&o.y, &o.sensing).unwrap();
    let gap = gap_tv(&o.y, &o.sensing, &GapTvConfig::default()).unwrap();
    let p_sb = psnr(&sb, &o.scene, 1.0).unwrap().mean;
    let p_gap = psnr(&gap, &o.scene, 1.0).unwrap().mean;
    check(
        p_gap >= p_sb + 3.0 && o.psnr_k3 >= p_gap,
        format!("shift-back {p_sb:.2} dB, GAP-TV {p_gap:.2} dB, trained {:.2} dB", o.psnr_k3),
    )
}

fn hfc_surrogate() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let x = gen_scene(&SceneSpec::new(SceneKind::RankOneSmooth, 64, 64, 8, seed, 0.9)).unwrap();
        let maps = correlation_maps(&x).unwrap();
        let curve = token_correlation(&x, 8).unwrap().values();
        let idx: Vec<f64> = (0..curve.len()).map(|i| i as f64).collect();
        let rho = spearman(&curve, &idx).unwrap();
        ok &= maps.freq_avg > maps.space_avg && rho <= -0.8;
        details.push(format!("freq {:.3} > space {:.3}, spearman {rho:.2}", maps.freq_avg, maps.space_avg));
    }
    check(ok, details.join("; "))
}

fn box_blur(x: &HsiCube) -> HsiCube {
    let (h, w, c) = x.dims();
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            for b in 0..c {
                let (mut s, mut n) = (0.0, 0.0);
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if ii >= 0 && jj >= 0 && ii < h as i64 && jj < w as i64 {
                            s += x.get(ii as usize, jj as usize, b);
                            n += 1.0;
                        }
                    }
                }
                out[(i * w + j) * c + b] = s / n;
            }
        }
    }
    HsiCube::new(h, w, c, out).unwrap()
}

/// Blur of random strength plus noise of random level.
fn degrade(x: &HsiCube, r: &mut impl Rng) -> HsiCube {
    let blur = box_blur(x);
    let s: f64 = r.random_range(0.0..1.0);
    let sigma: f64 = r.random_range(0.005..0.1);
    let normal = Normal::new(0.0, sigma).unwrap();
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(blur.data())
        .map(|(a, b)| (1.0 - s) * a + s * b + normal.sample(r))
        .collect();
    let (h, w, c) = x.dims();
    HsiCube::new(h, w, c, data).unwrap()
}

fn metrics_consistency() -> Outcome {
    let mut r = rng(31);
    let x = gen_scene(&SceneSpec::new(SceneKind::PiecewiseConstant, 32, 32, 8, 1, 0.8)).unwrap();
    let zero = fdg(&x, &x).unwrap();
    let mut agree = 0;
    for trial in 0..10 {
        let scene = gen_scene(&SceneSpec::new(SceneKind::ALL[trial % 3], 32, 32, 8, trial as u64, 0.8)).unwrap();
        let (a, b) = (degrade(&scene, &mut r), degrade(&scene, &mut r));
        let (pa, pb) = (psnr(&a, &scene, 1.0).unwrap().mean, psnr(&b, &scene, 1.0).unwrap().mean);
        let (fa, fb) = (fdg(&a, &scene).unwrap(), fdg(&b, &scene).unwrap());
        if (pa > pb) == (fa < fb) {
            agree += 1;
        }
    }
    check(zero == 0.0 && agree >= 9, format!("FDG(x,x) = {zero}, ordering agrees in {agree}/10 trials"))
}

fn parameter_report() -> Outcome {
    let full = ModelConfig::paper_scale(9);
    let (m, g) = (count_params(&full), count_flops(&full, 256, 256));
    Ok(format!(
        "9 stages shared at 256x256x28: {m:.3} M params vs 0.90 M reference, {g:.2} G FLOPs vs 92.59 G reference \
         (informational: channel widths are not fully determined)"
    ))
}

fn io_round_trips() -> Outcome {
    let mut r = rng(5);
    let (h, w, c) = (7, 5, 3);
    let data: Vec<f64> = (0..h * w * c).map(|_| r.random::<f32>() as f64).collect();
    let cube = HsiCube::new(h, w, c, data).unwrap();
    let bytes = hsic::encode(&cube);
    let hsic_ok = hsic::decode(&bytes).unwrap() == cube && hsic::encode(&hsic::decode(&bytes).unwrap()) == bytes;
    let one = hsic::encode(&HsiCube::zeros(1, 1, 1)).len() == 25;

    let f32_tensor = |shape: &[usize], r: &mut rand_chacha::ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random::<f32>() as f64 - 0.5).collect()).unwrap()
    };
    let wf = WeightFile {
        config: vec![("bands".into(), 8), ("stages".into(), 3)],
        tensors: vec![("a.w".into(), f32_tensor(&[3, 4], &mut r)), ("b".into(), f32_tensor(&[2], &mut r))],
    };
    let enc = wf.encode();
    let back = WeightFile::decode(&enc).unwrap();
    let cmdw_ok = back == wf && back.encode() == enc;

    let m = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.5, 0.25]).unwrap();
    let pgm_bytes = pgm::encode(&m, pgm::HeatmapRange::Fixed(0.0, 1.0)).unwrap();
    let header = b"P5\n2 2\n255\n";
    let pgm_ok = pgm_bytes.starts_with(header) && pgm_bytes[header.len()..] == [0, 255, 127, 63];
    check(
        hsic_ok && one && cmdw_ok && pgm_ok,
        format!("HSIC {hsic_ok} (1x1x1 is 25 bytes: {one}), CMDW {cmdw_ok}, PGM [0,255,127,63] {pgm_ok}"),
    )
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();
    let mut failed = 0;
    let mut run = |name: &str, limit_s: f64, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(d) if secs <= limit_s => (true, d),
            Ok(d) => (false, format!("{d}; runtime over the {limit_s} s limit")),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        let line = format!("[{}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        lines.push(line);
    };

    run("DCT round trip and Parseval", 1.0, &mut dct_round_trip_and_parseval);
    run("CASSI adjoint identity", 10.0, &mut cassi_adjoint_identity);
    run("Data-module oracle", 5.0, &mut data_module_oracle);
    run("Gradient suite", 300.0, &mut gradient_suite);
    run("Residual identities", f64::INFINITY, &mut residual_identities);
    run("Gating contract", f64::INFINITY, &mut gating_contract);
    let mut overfit = None;
    run("Overfit sanity", 1800.0, &mut || {
        let o = run_overfit();
        let res = overfit_sanity(&o);
        overfit = Some(o);
        res
    });
    run("Baseline ordering", f64::INFINITY, &mut || match &overfit {
        Some(o) => baseline_ordering(o),
        None => Err("overfit run did not complete".into()),
    });
    run("Training loss windows", f64::INFINITY, &mut || match &overfit {
        Some(o) => loss_windows(o),
        None => Err("overfit run did not complete".into()),
    });
    run("HFC surrogate", 60.0, &mut hfc_surrogate);
    run("Metrics self-consistency", f64::INFINITY, &mut metrics_consistency);
    run("Parameter-count report", f64::INFINITY, &mut parameter_report);
    run("I/O round trips", f64::INFINITY, &mut io_round_trips);

    println!("\n{}", lines.join("\n"));
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
