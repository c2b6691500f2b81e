//! Deep unfolding reconstruction: alternating closed-form data steps and
//! learned prior steps, trained end to end.
//!
//! ```text
//! z0 = shift_back(y / diag)
//! x_k = z_{k-1} + Phi^T((y - Phi z_{k-1}) / (alpha_k + diag))
//! z_k = P(x_k, beta_k)
//! ```

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{Model, ModelConfig, StageTrace, UnfoldTrace};
pub use train::{train, Sample, TrainConfig, TrainLogRow, TrainOutcome};

use crate::cassi::{self, Measurement, SensingConfig};
use crate::cube::HsiCube;
use crate::error::{Error, Result};

/// One data step, `z + Phi^T((y - Phi z) / (alpha + diag(Phi Phi^T)))`.
pub fn data_module(z: &HsiCube, y: &Measurement, cfg: &SensingConfig, alpha: f64) -> Result<HsiCube> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("data step weight must be positive, got {alpha}")));
    }
    let r = y.tensor().sub(cassi::phi_forward(z, cfg)?.tensor())?;
    let diag = cassi::phi_phit_diag(cfg);
    let q = r.zip_map(&diag, |a, d| a / (alpha + d))?;
    let back = cassi::phi_adjoint(&Measurement::from_tensor(q)?, cfg)?;
    HsiCube::from_tensor(z.tensor().add(back.tensor())?)
}

/// Euclidean norm of the difference of two cubes.
pub fn loss(zk: &HsiCube, gt: &HsiCube) -> Result<f64> {
    if zk.dims() != gt.dims() {
        return Err(Error::shape("loss", zk.tensor().shape(), gt.tensor().shape()));
    }
    Ok(zk.tensor().sub(gt.tensor())?.norm_sq().sqrt())
}

/// Root-mean-square error, the norm loss divided by `sqrt(N)`.
pub fn rmse(zk: &HsiCube, gt: &HsiCube) -> Result<f64> {
    Ok(loss(zk, gt)? / (zk.tensor().len() as f64).sqrt())
}
