mod common;

use std::sync::atomic::AtomicBool;

use cmdt_core::cassi::{simulate, SensingConfig};
use cmdt_core::io::cmdw::WeightFile;
use cmdt_core::net::{NetConfig, Prior};
use cmdt_core::scene::{gen_scene, SceneKind, SceneSpec};
use cmdt_core::tensor::{kernels, Tape, Tensor};
use cmdt_core::unfold::{load_checkpoint, save_checkpoint, train, Checkpoint, Model, ModelConfig, TrainConfig};
use cmdt_core::{Error, HsiCube};
use common::{check_params, randomize};

fn small_net() -> NetConfig {
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

fn setup(stages: usize, share: bool) -> (Model, SensingConfig, HsiCube) {
    let model = Model::new(ModelConfig::new(small_net(), stages, share, 1), 5).unwrap();
    let sensing = SensingConfig::new(SensingConfig::random_mask(8, 8, 0.5, 3), 1, 3, 0.0).unwrap();
    let x = gen_scene(&SceneSpec::new(SceneKind::PiecewiseConstant, 8, 8, 3, 4, 0.8)).unwrap();
    (model, sensing, x)
}

#[test]
fn gradcheck_two_stage_unfolding() {
    let (mut model, sensing, x) = setup(2, true);
    randomize(&mut model.store, 6, 0.6);
    let y = simulate(&x, &sensing, 0).unwrap();
    let probe = model.clone();
    let (e, name) = check_params(&model.store, 4, |t, s| {
        let mut m = probe.clone();
        m.store = s.clone();
        let tr = m.trace(t, &y, &sensing).unwrap();
        let out = tr.output();
        let l = m.loss_node(t, out, &x).unwrap();
        t.reshape(l, &[1]).unwrap()
    });
    assert!(e < 1e-4, "{name}: {e}");
}

#[test]
fn reconstruction_shape_and_repeatability() {
    let (model, sensing, x) = setup(2, true);
    let y = simulate(&x, &sensing, 1).unwrap();
    assert_eq!(y.tensor().shape(), &[8, 8 + 2]);
    let a = model.reconstruct(&y, &sensing).unwrap();
    let b = model.reconstruct(&y, &sensing).unwrap();
    assert_eq!(a.dims(), (8, 8, 3));
    assert_eq!(a, b);
}

#[test]
fn stage_parameters_are_positive_and_traced() {
    let (model, sensing, x) = setup(3, true);
    let y = simulate(&x, &sensing, 1).unwrap();
    let mut t = Tape::new();
    let tr = model.trace(&mut t, &y, &sensing).unwrap();
    assert_eq!(tr.stages.len(), 3);
    for s in &tr.stages {
        assert!(t.value(s.alpha).item() > 0.0 && t.value(s.beta).item() > 0.0);
        assert_eq!(s.blocks.len(), 3);
    }
}

#[test]
fn sharing_controls_the_prior_count() {
    let (shared, ..) = setup(2, true);
    let (own, ..) = setup(2, false);
    assert_eq!(shared.store.num_scalars(), shared.cfg.count_params());
    assert_eq!(own.store.num_scalars(), own.cfg.count_params());
    assert_eq!(
        own.cfg.count_params() - shared.cfg.count_params(),
        Prior::num_params(&small_net())
    );
    assert!(own.store.iter().any(|(_, p)| p.name.starts_with("pm1.")));
    assert!(shared.store.iter().all(|(_, p)| !p.name.starts_with("pm0.")));
    let (one, ..) = setup(1, true);
    assert_eq!(shared.cfg.count_params() - one.cfg.count_params(), 2 * (4 + 1));
}

#[test]
fn analytic_macs_match_a_counted_reconstruction() {
    let (model, sensing, x) = setup(2, false);
    let y = simulate(&x, &sensing, 1).unwrap();
    kernels::reset_mac_count();
    model.reconstruct(&y, &sensing).unwrap();
    assert_eq!(kernels::mac_count() as usize, model.cfg.count_macs(8, 8));
}

#[test]
fn mismatched_sensing_is_rejected_by_name() {
    let (model, ..) = setup(1, true);
    let mask = SensingConfig::random_mask(8, 8, 0.5, 3);
    let bad_bands = SensingConfig::new(mask.clone(), 1, 4, 0.0).unwrap();
    let y = simulate(&HsiCube::zeros(8, 8, 4), &bad_bands, 0).unwrap();
    match model.reconstruct(&y, &bad_bands) {
        Err(Error::ConfigMismatch(m)) => assert!(m.contains("bands"), "{m}"),
        other => panic!("expected a config mismatch, got {other:?}"),
    }
    let bad_step = SensingConfig::new(mask, 2, 3, 0.0).unwrap();
    let y = simulate(&HsiCube::zeros(8, 8, 3), &bad_step, 0).unwrap();
    match model.reconstruct(&y, &bad_step) {
        Err(Error::ConfigMismatch(m)) => assert!(m.contains("step"), "{m}"),
        other => panic!("expected a config mismatch, got {other:?}"),
    }
}

fn quick_train(seed: u64, lr0: f64, steps: usize) -> (Model, Vec<f64>) {
    let (mut model, sensing, x) = setup(1, true);
    let big = gen_scene(&SceneSpec::new(SceneKind::PiecewiseConstant, 12, 12, 3, 4, 0.8)).unwrap();
    let tc = TrainConfig {
        steps,
        lr0,
        batch: 2,
        seed,
        augment: true,
    };
    let out = train(&mut model, &[x, big], &sensing, &tc, None).unwrap();
    assert!(!out.interrupted);
    assert_eq!(out.log.len(), steps);
    (model, out.log.iter().map(|r| r.loss).collect())
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (before, ..) = setup(1, true);
    let (after, _) = quick_train(0, 0.0, 3);
    for ((_, a), (_, b)) in before.store.iter().zip(after.store.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn fixed_seed_reproduces_the_loss_curve() {
    let (_, a) = quick_train(11, 4e-4, 4);
    let (_, b) = quick_train(11, 4e-4, 4);
    let (_, c) = quick_train(12, 4e-4, 4);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|l| l.is_finite() && *l > 0.0));
}

#[test]
fn interrupt_stops_after_the_current_step() {
    let (mut model, sensing, x) = setup(1, true);
    let flag = AtomicBool::new(true);
    let tc = TrainConfig {
        steps: 50,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &[x], &sensing, &tc, Some(&flag)).unwrap();
    assert!(out.interrupted);
    assert!(out.log.len() <= 1);
    assert!(out.csv().starts_with("step,lr,loss,psnr\n"));
}

#[test]
fn training_rejects_unusable_data() {
    let (mut model, sensing, _) = setup(1, true);
    let tc = TrainConfig::default();
    assert!(train(&mut model, &[], &sensing, &tc, None).is_err());
    let small = HsiCube::zeros(4, 4, 3);
    assert!(train(&mut model, &[small], &sensing, &tc, None).is_err());
}

fn f32_rounded(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

#[test]
fn checkpoint_round_trip() {
    let (mut model, sensing, x) = setup(2, false);
    randomize(&mut model.store, 8, 0.2);
    let ckpt = Checkpoint {
        model: model.clone(),
        mask: sensing.mask().as_ref().clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cmdw");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.cfg, model.cfg);
    back.check_config(&model.cfg).unwrap();
    assert_eq!(back.mask, f32_rounded(&ckpt.mask));
    for ((_, a), (_, b)) in model.store.iter().zip(back.model.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(f32_rounded(&a.value), b.value);
    }
    let y = simulate(&x, &sensing, 0).unwrap();
    let r1 = model.reconstruct(&y, &sensing).unwrap();
    let r2 = back.model.reconstruct(&y, &sensing).unwrap();
    assert!(r1.tensor().max_abs_diff(r2.tensor()).unwrap() < 1e-4);
}

#[test]
fn checkpoint_mismatches_are_rejected() {
    let (model, sensing, _) = setup(2, true);
    let ckpt = Checkpoint {
        model: model.clone(),
        mask: sensing.mask().as_ref().clone(),
    };
    let mut other = model.cfg;
    other.stages = 3;
    other.net.heads = 4;
    let err = ckpt.check_config(&other).unwrap_err().to_string();
    assert!(err.contains("stages") && err.contains("heads"), "{err}");

    let mut f = ckpt.to_weight_file();
    let (name, t) = f.tensors[0].clone();
    f.tensors[0] = (name.clone(), Tensor::zeros(&[t.len() + 1]));
    let err = Checkpoint::from_weight_file(&f).unwrap_err().to_string();
    assert!(err.contains(&name), "{err}");

    let mut f = ckpt.to_weight_file();
    f.tensors.remove(1);
    assert!(Checkpoint::from_weight_file(&f).is_err());

    let mut f = ckpt.to_weight_file();
    f.tensors.push(("stray".into(), Tensor::zeros(&[1])));
    assert!(Checkpoint::from_weight_file(&f).is_err());

    let bytes = ckpt.to_weight_file().encode();
    assert!(WeightFile::decode(&bytes[..bytes.len() - 3]).is_err());
}
