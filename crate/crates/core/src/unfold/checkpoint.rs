use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::io::cmdw::WeightFile;
use crate::net::NetConfig;
use crate::tensor::Tensor;

/// Name of the coded-aperture mask stored alongside the weights.
pub const MASK_TENSOR: &str = "sensing.mask";

/// A trained model and the mask it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub mask: Tensor,
}

fn config_block(cfg: &ModelConfig) -> Vec<(String, u32)> {
    let n = &cfg.net;
    [
        ("height", n.height),
        ("width", n.width),
        ("bands", n.bands),
        ("embed", n.embed),
        ("token", n.token),
        ("heads", n.heads),
        ("ffn_mult", n.ffn_mult),
        ("ipe_width", n.ipe_width),
        ("stages", cfg.stages),
        ("share", cfg.share as usize),
        ("step", cfg.step),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v as u32))
    .collect()
}

fn config_from_block(f: &WeightFile) -> Result<ModelConfig> {
    let get = |k: &str| {
        f.config_value(k)
            .map(|v| v as usize)
            .ok_or_else(|| Error::invalid(format!("checkpoint config lacks '{k}'")))
    };
    let net = NetConfig {
        bands: get("bands")?,
        embed: get("embed")?,
        token: get("token")?,
        heads: get("heads")?,
        ffn_mult: get("ffn_mult")?,
        ipe_width: get("ipe_width")?,
        height: get("height")?,
        width: get("width")?,
    };
    Ok(ModelConfig::new(net, get("stages")?, get("share")? != 0, get("step")?))
}

impl Checkpoint {
    pub fn to_weight_file(&self) -> WeightFile {
        let mut tensors: Vec<(String, Tensor)> = self
            .model
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        tensors.push((MASK_TENSOR.to_string(), self.mask.clone()));
        WeightFile {
            config: config_block(&self.model.cfg),
            tensors,
        }
    }

    pub fn from_weight_file(f: &WeightFile) -> Result<Self> {
        let cfg = config_from_block(f)?;
        let mut model = Model::new(cfg, 0)?;
        let mut mask = None;
        let mut seen = 0;
        for (name, t) in &f.tensors {
            if name == MASK_TENSOR {
                mask = Some(t.clone());
                continue;
            }
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unexpected tensor '{name}'")))?;
            model.store.set_value(id, t.clone()).map_err(|_| {
                Error::ConfigMismatch(format!(
                    "tensor '{name}' has shape {:?}, model expects {:?}",
                    t.shape(),
                    model.store.value(id).shape()
                ))
            })?;
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {seen} of {} parameters",
                model.store.len()
            )));
        }
        let mask = mask.ok_or_else(|| Error::invalid(format!("checkpoint lacks '{MASK_TENSOR}'")))?;
        Ok(Checkpoint { model, mask })
    }

    /// Rejects a checkpoint whose configuration differs from `expected`,
    /// naming every mismatched field.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let (a, b) = (config_block(&self.model.cfg), config_block(expected));
        let diffs: Vec<String> = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x.1 != y.1)
            .map(|(x, y)| format!("{}: checkpoint {} vs expected {}", x.0, x.1, y.1))
            .collect();
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(diffs.join(", ")))
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.to_weight_file().write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_weight_file(&WeightFile::read(path)?)
}
