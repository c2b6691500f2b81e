use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;

use cmdt_core::cassi::{self, Measurement, SensingConfig};
use cmdt_core::gaptv::{gap_tv, GapTvConfig};
use cmdt_core::hfc;
use cmdt_core::io::hsic::{read_hsic, read_hsic_normalized, write_hsic};
use cmdt_core::io::pgm::{export_heatmap, HeatmapRange};
use cmdt_core::metrics::{self, MetricReport};
use cmdt_core::net::NetConfig;
use cmdt_core::scene::{gen_scene as generate, SceneSpec};
use cmdt_core::tensor::{Tape, Tensor};
use cmdt_core::unfold::{self, load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig, TrainConfig};
use cmdt_core::HsiCube;

use crate::{
    AblateKernelArgs, AnalyzeHfcArgs, CorpusStatsArgs, ExportMapsArgs, GenMaskArgs, GenSceneArgs, Method,
    MetricsArgs, ModelArgs, ParamsArgs, ReconstructArgs, SimulateArgs, TrainArgs,
};

/// Reference figures for the full 9-stage configuration at 256 x 256 x 28.
const REFERENCE_PARAMS_M: f64 = 0.90;
const REFERENCE_FLOPS_G: f64 = 92.59;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// A single-band HSIC file read as an `H x W` matrix.
fn read_plane(path: &Path, what: &str) -> Result<Tensor> {
    let cube = read_hsic(path).with_context(|| format!("reading {what} {}", path.display()))?;
    let (h, w, c) = cube.dims();
    ensure!(c == 1, "{what} {} has {c} bands, expected 1", path.display());
    Ok(cube.into_tensor().reshape(&[h, w])?)
}

fn write_plane(t: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let cube = HsiCube::new(h, w, 1, t.data().to_vec())?;
    Ok(write_hsic(&cube, path)?)
}

fn read_measurement(path: &Path) -> Result<Measurement> {
    Ok(Measurement::from_tensor(read_plane(path, "measurement")?)?)
}

/// Band count implied by the measurement and mask widths.
fn infer_bands(y: &Measurement, mask: &Tensor, step: usize, bands: Option<usize>) -> Result<usize> {
    if let Some(c) = bands {
        return Ok(c);
    }
    ensure!(step > 0, "--bands is required when the dispersion step is 0");
    let (w, wy) = (mask.shape()[1], y.width());
    ensure!(
        wy >= w && (wy - w) % step == 0,
        "measurement width {wy} does not match mask width {w} with step {step}"
    );
    Ok((wy - w) / step + 1)
}

fn hsic_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "hsic"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_dataset(dir: &Path, normalize: bool) -> Result<Vec<HsiCube>> {
    let files = hsic_files(dir)?;
    ensure!(!files.is_empty(), "no .hsic files in {}", dir.display());
    files
        .iter()
        .map(|p| {
            let cube = if normalize { read_hsic_normalized(p) } else { read_hsic(p) };
            cube.with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

fn model_config(m: &ModelArgs, h: usize, w: usize, bands: usize, step: usize) -> ModelConfig {
    let mut net = NetConfig::new(h, w, bands);
    net.embed = m.embed.unwrap_or(bands);
    net.token = m.token;
    net.heads = m.heads;
    net.ffn_mult = m.ffn_mult;
    net.ipe_width = m.ipe_width;
    ModelConfig::new(net, m.stages, !m.no_share, step)
}

pub fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let cube = generate(&SceneSpec::new(a.kind, a.h, a.w, a.c, a.seed, a.rho))?;
    write_hsic(&cube, &a.out)?;
    info!("wrote {} {:?}", a.out.display(), cube.dims());
    Ok(())
}

pub fn gen_mask(a: GenMaskArgs) -> Result<()> {
    ensure!((0.0..=1.0).contains(&a.open), "--open must lie in [0, 1]");
    ensure!(a.h > 0 && a.w > 0, "mask dimensions must be positive");
    write_plane(&SensingConfig::random_mask(a.h, a.w, a.open, a.seed), &a.out)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let x = read_hsic(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mask = read_plane(&a.mask, "mask")?;
    let sensing = SensingConfig::new(mask, a.d, x.bands(), a.sigma)?;
    let y = cassi::simulate(&x, &sensing, a.seed)?;
    write_plane(y.tensor(), &a.out)
}

pub fn analyze_hfc(a: AnalyzeHfcArgs) -> Result<()> {
    let x = read_hsic(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let maps = hfc::correlation_maps(&x)?;
    let curve = hfc::token_correlation(&x, a.token)?;
    create_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("corr_maps.csv"), &hfc::maps_csv(&maps))?;
    write_text(&a.out_dir.join("token_curve.csv"), &hfc::token_curve_csv(&curve))?;
    let range = HeatmapRange::Fixed(-1.0, 1.0);
    export_heatmap(&maps.space_map, a.out_dir.join("corr_space.pgm"), range)?;
    export_heatmap(&maps.freq_map, a.out_dir.join("corr_freq.pgm"), range)?;
    println!("space_avg,{:.6}", maps.space_avg);
    println!("freq_avg,{:.6}", maps.freq_avg);
    Ok(())
}

pub fn corpus_stats(a: CorpusStatsArgs) -> Result<()> {
    let mut paths = a.inputs;
    if let Some(dir) = &a.dir {
        paths.extend(hsic_files(dir)?);
    }
    let stats = hfc::corpus_stats(&paths)?;
    for (p, e) in &stats.skipped {
        eprintln!("warning: skipped {}: {e}", p.display());
    }
    write_text(&a.out, &stats.to_csv())?;
    println!("cubes,{}", stats.rows.len());
    println!("mean_space_avg,{:.6}", stats.mean_space_avg());
    println!("mean_freq_avg,{:.6}", stats.mean_freq_avg());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data, a.normalize)?;
    let bands = data[0].bands();
    let mask = match &a.mask {
        Some(p) => read_plane(p, "mask")?,
        None => SensingConfig::random_mask(a.crop, a.crop, 0.5, a.seed),
    };
    let sensing = SensingConfig::new(mask, a.d, bands, 0.0)?;
    let cfg = model_config(&a.model, sensing.height(), sensing.width(), bands, a.d);
    let mut model = Model::new(cfg, a.seed)?;
    info!(
        "training {} parameters on {} cubes for {} steps",
        model.store.num_scalars(),
        data.len(),
        a.steps
    );
    let tc = TrainConfig {
        steps: a.steps,
        lr0: a.lr,
        batch: a.batch,
        seed: a.seed,
        augment: !a.no_augment,
    };
    let flag = crate::interrupt::install();
    let outcome = unfold::train(&mut model, &data, &sensing, &tc, Some(flag))?;
    let ckpt = Checkpoint {
        model,
        mask: sensing.mask().as_ref().clone(),
    };
    save_checkpoint(&ckpt, &a.out)?;
    if let Some(log) = &a.log {
        write_text(log, &outcome.csv())?;
    }
    if let Some(last) = outcome.log.last() {
        println!("steps,{}", outcome.log.len());
        println!("final_loss,{:.6}", last.loss);
        println!("final_psnr,{:.4}", last.psnr);
    }
    if outcome.interrupted {
        eprintln!("interrupted after {} steps; checkpoint saved", outcome.log.len());
    }
    Ok(())
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let y = read_measurement(&a.y)?;
    let xhat = match a.method {
        Method::Cmdt => {
            let Some(path) = &a.ckpt else {
                bail!("--method cmdt needs --ckpt");
            };
            let ckpt = load_ckpt(path)?;
            let mask = match &a.mask {
                Some(p) => read_plane(p, "mask")?,
                None => ckpt.mask.clone(),
            };
            let cfg = ckpt.model.cfg;
            let sensing = SensingConfig::new(mask, cfg.step, cfg.net.bands, 0.0)?;
            ckpt.model.reconstruct(&y, &sensing)?
        }
        Method::GapTv | Method::ShiftBack => {
            let mask = match (&a.mask, &a.ckpt) {
                (Some(p), _) => read_plane(p, "mask")?,
                (None, Some(c)) => load_ckpt(c)?.mask,
                (None, None) => bail!("--method {:?} needs --mask", a.method),
            };
            let bands = infer_bands(&y, &mask, a.d, a.bands)?;
            let sensing = SensingConfig::new(mask, a.d, bands, 0.0)?;
            if a.method == Method::GapTv {
                let g = GapTvConfig {
                    iterations: a.iters,
                    tv_weight: a.tv_weight,
                    tv_inner_iters: a.tv_inner,
                };
                gap_tv(&y, &sensing, &g)?
            } else {
                cassi::normalized_shift_back(&y, &sensing)?
            }
        }
    };
    write_hsic(&xhat, &a.out)?;
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let gt = read_hsic(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    let mut rows = Vec::with_capacity(a.pred.len());
    for p in &a.pred {
        let xhat = read_hsic(p).with_context(|| format!("reading {}", p.display()))?;
        let report = MetricReport::evaluate(&xhat, &gt).with_context(|| format!("scoring {}", p.display()))?;
        let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((name, report));
    }
    let csv = metrics::metrics_csv(&rows);
    match &a.out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn params(a: ParamsArgs) -> Result<()> {
    let cfg = match &a.ckpt {
        Some(p) => load_ckpt(p)?.model.cfg,
        None => model_config(&a.model, a.h, a.w, a.bands, a.d),
    };
    cfg.validate()?;
    let (h, w) = (cfg.net.height, cfg.net.width);
    println!("stages,{}", cfg.stages);
    println!("shared,{}", cfg.share);
    println!("size,{h}x{w}x{}", cfg.net.bands);
    println!("params_m,{:.4}", metrics::count_params(&cfg));
    println!("flops_g,{:.4}", metrics::count_flops(&cfg, h, w));
    let full = ModelConfig::paper_scale(9);
    if a.ckpt.is_none() && cfg == full {
        println!("reference_params_m,{REFERENCE_PARAMS_M:.2}");
        println!("reference_flops_g,{REFERENCE_FLOPS_G:.2}");
    }
    Ok(())
}

/// Slice `i` of a `n x a x b` tensor as an `a x b` matrix.
fn slice(t: &Tensor, i: usize) -> Result<Tensor> {
    let s = t.shape();
    let len = s[1] * s[2];
    Ok(Tensor::new(&[s[1], s[2]], t.data()[i * len..(i + 1) * len].to_vec())?)
}

/// Token indices of an `rows x cols` grid ordered from low to high
/// frequency: by `u + v`, then by `u`.
fn frequency_order(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut idx: Vec<(usize, usize)> = (0..rows).flat_map(|u| (0..cols).map(move |v| (u, v))).collect();
    idx.sort_by_key(|&(u, v)| (u + v, u));
    idx
}

pub fn export_maps(a: ExportMapsArgs) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let y = read_measurement(&a.y)?;
    let cfg = ckpt.model.cfg;
    let sensing = SensingConfig::new(ckpt.mask.clone(), cfg.step, cfg.net.bands, 0.0)?;
    let mut t = Tape::new();
    let tr = ckpt.model.trace(&mut t, &y, &sensing)?;
    create_dir(&a.out_dir)?;

    for (k, stage) in tr.stages.iter().enumerate() {
        for (b, blk) in stage.blocks.iter().enumerate() {
            let gate = t.value(blk.gate);
            export_heatmap(gate, a.out_dir.join(format!("lgf_s{k}_b{b}.pgm")), HeatmapRange::Fixed(0.0, 1.0))?;
        }
    }

    let last = tr.stages.last().expect("at least one stage");
    let blk = &last.blocks[0];
    let (gh, gw) = (t.value(blk.gate).shape()[0], t.value(blk.gate).shape()[1]);
    let tok = cfg.net.token;
    let heads = cfg.net.heads;
    let (rows, cols) = (gh / tok, gw / tok);
    let saf = t.value(blk.saf_attention);
    let space = t.value(blk.space_attention);
    for (i, &(u, v)) in frequency_order(rows, cols).iter().take(a.tokens).enumerate() {
        let n = u * cols + v;
        export_heatmap(
            &slice(saf, n * heads)?,
            a.out_dir.join(format!("saf_token{i}_u{u}_v{v}.pgm")),
            HeatmapRange::MinMax,
        )?;
    }
    for n in 0..a.tokens.min(rows * cols) {
        export_heatmap(
            &slice(space, n * heads)?,
            a.out_dir.join(format!("space_token{n}.pgm")),
            HeatmapRange::MinMax,
        )?;
    }

    let xhat = HsiCube::from_tensor(t.value(tr.output()).clone())?;
    if xhat.bands() >= 2 {
        let maps = hfc::correlation_maps(&xhat)?;
        let range = HeatmapRange::Fixed(-1.0, 1.0);
        export_heatmap(&maps.space_map, a.out_dir.join("corr_space.pgm"), range)?;
        export_heatmap(&maps.freq_map, a.out_dir.join("corr_freq.pgm"), range)?;
    }
    write_hsic(&xhat, a.out_dir.join("recon.hsic"))?;
    Ok(())
}

pub fn ablate_kernel(a: AblateKernelArgs) -> Result<()> {
    let data = load_dataset(&a.data, false)?;
    let bands = data[0].bands();
    let mask = match &a.mask {
        Some(p) => read_plane(p, "mask")?,
        None => SensingConfig::random_mask(a.crop, a.crop, 0.5, a.seed),
    };
    let sensing = SensingConfig::new(mask, a.d, bands, 0.0)?;
    let (h, w) = (sensing.height(), sensing.width());
    let eval_gt = data[0].crop(0, 0, h, w)?;
    let eval_y = cassi::simulate(&eval_gt, &sensing, a.seed)?;
    let flag = crate::interrupt::install();
    let mut csv = String::from("token,params_m,flops_g,psnr\n");
    for &k in &a.tokens {
        let mut m = a.model.clone();
        m.token = k;
        let cfg = model_config(&m, h, w, bands, a.d);
        let mut model = Model::new(cfg, a.seed).with_context(|| format!("token size {k}"))?;
        let tc = TrainConfig {
            steps: a.steps,
            lr0: a.lr,
            batch: 1,
            seed: a.seed,
            augment: false,
        };
        let outcome = unfold::train(&mut model, &data, &sensing, &tc, Some(flag))?;
        let xhat = model.reconstruct(&eval_y, &sensing)?;
        let psnr = metrics::psnr(&xhat, &eval_gt, 1.0)?.mean;
        csv.push_str(&format!(
            "{k},{:.6},{:.6},{psnr:.4}\n",
            metrics::count_params(&cfg),
            metrics::count_flops(&cfg, h, w)
        ));
        info!("token {k}: {psnr:.2} dB");
        if outcome.interrupted {
            eprintln!("interrupted during token size {k}");
            break;
        }
    }
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}
