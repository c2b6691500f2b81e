use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::cassi::{self, Measurement, SensingConfig};
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::tensor::{cosine_lr, Adam, AdamConfig, Tape};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr0: f64,
    /// Samples whose gradients are averaged per optimiser step.
    pub batch: usize,
    pub seed: u64,
    /// Random quarter-turn rotations and flips of each crop.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr0: 4e-4,
            batch: 1,
            seed: 0,
            augment: true,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of the norm loss.
    pub loss: f64,
    /// Batch mean PSNR of the reconstructions.
    pub psnr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<TrainLogRow>,
    /// Set when the run stopped early on request.
    pub interrupted: bool,
}

impl TrainOutcome {
    pub fn csv(&self) -> String {
        let mut s = String::from("step,lr,loss,psnr\n");
        for r in &self.log {
            s.push_str(&format!("{},{:.6e},{:.6},{:.4}\n", r.step, r.lr, r.loss, r.psnr));
        }
        s
    }
}

/// A ground-truth crop and its simulated measurement.
#[derive(Clone, Debug)]
pub struct Sample {
    pub gt: HsiCube,
    pub y: Measurement,
}

fn augment(x: &HsiCube, rng: &mut ChaCha8Rng) -> HsiCube {
    let turns = if x.height() == x.width() {
        rng.random_range(0..4)
    } else {
        2 * rng.random_range(0..2)
    };
    let mut x = x.rot90(turns);
    if rng.random_bool(0.5) {
        x = x.flip_horizontal();
    }
    if rng.random_bool(0.5) {
        x = x.flip_vertical();
    }
    x
}

/// Deterministic stream of training samples.
struct SampleStream<'a> {
    data: &'a [HsiCube],
    sensing: &'a SensingConfig,
    rng: ChaCha8Rng,
    augment: bool,
}

impl SampleStream<'_> {
    fn next_sample(&mut self) -> Result<Sample> {
        let (h, w) = (self.sensing.height(), self.sensing.width());
        let cube = &self.data[self.rng.random_range(0..self.data.len())];
        let top = self.rng.random_range(0..=cube.height() - h);
        let left = self.rng.random_range(0..=cube.width() - w);
        let mut gt = cube.crop(top, left, h, w)?;
        if self.augment {
            gt = augment(&gt, &mut self.rng);
        }
        let y = cassi::simulate(&gt, self.sensing, self.rng.random())?;
        Ok(Sample { gt, y })
    }
}

fn check_dataset(data: &[HsiCube], model: &Model, sensing: &SensingConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one cube"));
    }
    model.check_sensing(sensing)?;
    let (h, w, c) = (sensing.height(), sensing.width(), sensing.bands());
    for (i, x) in data.iter().enumerate() {
        if x.bands() != c || x.height() < h || x.width() < w {
            return Err(Error::invalid(format!(
                "cube {i} is {:?}, need at least {h}x{w} with {c} bands",
                x.dims()
            )));
        }
    }
    Ok(())
}

/// Minimises the batch-mean norm loss with Adam and a cosine schedule.
///
/// Crops the size of the sensing mask are drawn from `data` by a producer
/// thread. Setting `interrupt` stops the run after the current step; the
/// model then holds the latest parameters.
pub fn train(
    model: &mut Model,
    data: &[HsiCube],
    sensing: &SensingConfig,
    tc: &TrainConfig,
    interrupt: Option<&AtomicBool>,
) -> Result<TrainOutcome> {
    check_dataset(data, model, sensing)?;
    if tc.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut adam = Adam::new(AdamConfig::default());
    let mut log = Vec::with_capacity(tc.steps);
    let mut interrupted = false;
    let total = tc.steps * tc.batch;
    thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<Sample>>(4);
        let mut stream = SampleStream {
            data,
            sensing,
            rng: ChaCha8Rng::seed_from_u64(tc.seed),
            augment: tc.augment,
        };
        scope.spawn(move || {
            for _ in 0..total {
                if tx.send(stream.next_sample()).is_err() {
                    break;
                }
            }
        });
        for step in 0..tc.steps {
            if interrupt.is_some_and(|f| f.load(Ordering::Relaxed)) {
                interrupted = true;
                break;
            }
            let lr = cosine_lr(step, tc.steps, tc.lr0);
            model.store.zero_grad();
            let (mut loss_sum, mut psnr_sum) = (0.0, 0.0);
            for _ in 0..tc.batch {
                let sample = rx
                    .recv()
                    .map_err(|_| Error::invalid("sample producer stopped"))??;
                let mut t = Tape::new();
                let tr = model.trace(&mut t, &sample.y, sensing)?;
                let out = tr.output();
                let l = model.loss_node(&mut t, out, &sample.gt)?;
                let l = if tc.batch > 1 {
                    t.scale(l, 1.0 / tc.batch as f64)
                } else {
                    l
                };
                t.backward_into(l, &mut model.store)?;
                loss_sum += t.value(l).item() * tc.batch as f64;
                let rec = HsiCube::from_tensor(t.value(out).clone())?;
                psnr_sum += psnr(&rec, &sample.gt, 1.0)?.mean;
            }
            let loss = loss_sum / tc.batch as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            adam.step(&mut model.store, lr);
            let row = TrainLogRow {
                step,
                lr,
                loss,
                psnr: psnr_sum / tc.batch as f64,
            };
            log::debug!("step {step} lr {lr:.3e} loss {loss:.5} psnr {:.2}", row.psnr);
            log.push(row);
        }
        drop(rx);
        Ok(())
    })?;
    Ok(TrainOutcome { log, interrupted })
}
