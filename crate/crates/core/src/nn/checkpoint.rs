//! Checkpoint persistence: one container file holding the schedule, the
//! template identity, and named float32 weight tensors (raw + EMA).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::VarianceSchedule;
use crate::geometry::ClothTemplate;
use crate::io::{read_container, write_container, Blob, Dtype, IoError};

use super::net::{DenoiserNet, NetSpec};
use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub template_name: String,
    pub atlas_hash: String,
    pub widths: [usize; 3],
    pub embed_dim: usize,
    pub iteration: u64,
    pub value_scale: f64,
    pub weights: Vec<NamedTensor>,
    pub ema: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u32,
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
    template_name: String,
    atlas_hash: String,
    widths: [usize; 3],
    embed_dim: usize,
    iteration: u64,
    value_scale: f64,
}

fn named_tensors(net: &DenoiserNet<f32>, data: &[f32]) -> Vec<NamedTensor> {
    net.params()
        .entries()
        .iter()
        .map(|e| NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: data[e.offset..e.offset + e.len].to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_training(
        net: &DenoiserNet<f32>,
        ema: &[f32],
        sched: &VarianceSchedule,
        template: &ClothTemplate,
        iteration: u64,
        value_scale: f64,
    ) -> Self {
        let t_max = sched.t_max();
        Self {
            version: CHECKPOINT_VERSION,
            t_max,
            beta_start: sched.beta(1),
            beta_end: sched.beta(t_max),
            template_name: template.name().to_string(),
            atlas_hash: template.atlas_hash().to_string(),
            widths: net.spec().widths,
            embed_dim: net.spec().embed_dim,
            iteration,
            value_scale,
            weights: named_tensors(net, net.params().data()),
            ema: named_tensors(net, ema),
        }
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            widths: self.widths,
            embed_dim: self.embed_dim,
        }
    }

    pub fn schedule(&self) -> Result<VarianceSchedule, NnError> {
        Ok(VarianceSchedule::linear(
            self.t_max,
            self.beta_start,
            self.beta_end,
        )?)
    }

    pub fn validate_template(&self, template: &ClothTemplate) -> Result<(), NnError> {
        if template.atlas_hash() != self.atlas_hash {
            return Err(NnError::AtlasHashMismatch {
                expected: template.atlas_hash().to_string(),
                found: self.atlas_hash.clone(),
            });
        }
        Ok(())
    }

    /// Instantiates the network from the stored tensors, either the raw
    /// training weights or the EMA evaluation weights.
    pub fn build_net(&self, use_ema: bool) -> Result<DenoiserNet<f32>, NnError> {
        let mut net = DenoiserNet::<f32>::zeroed(self.spec())?;
        let tensors = if use_ema { &self.ema } else { &self.weights };
        let entries: Vec<_> = net.params().entries().to_vec();
        for e in &entries {
            let t = tensors
                .iter()
                .find(|t| t.name == e.name)
                .ok_or_else(|| NnError::MissingTensor(e.name.clone()))?;
            if t.shape != e.shape {
                return Err(NnError::TensorShape {
                    name: e.name.clone(),
                    expected: e.shape.clone(),
                    found: t.shape.clone(),
                });
            }
            net.params_mut().data_mut()[e.offset..e.offset + e.len].copy_from_slice(&t.data);
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let meta = Meta {
            version: self.version,
            t_max: self.t_max,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            template_name: self.template_name.clone(),
            atlas_hash: self.atlas_hash.clone(),
            widths: self.widths,
            embed_dim: self.embed_dim,
            iteration: self.iteration,
            value_scale: self.value_scale,
        };
        let meta = serde_json::to_value(&meta).map_err(IoError::from)?;
        let mut blobs = Vec::with_capacity(self.weights.len() + self.ema.len());
        for t in &self.weights {
            blobs.push(Blob::from_f32(
                format!("w/{}", t.name),
                t.shape.clone(),
                &t.data,
            ));
        }
        for t in &self.ema {
            blobs.push(Blob::from_f32(
                format!("ema/{}", t.name),
                t.shape.clone(),
                &t.data,
            ));
        }
        write_container(path, &meta, &blobs)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let (meta, blobs) = read_container(path)?;
        let meta: Meta = serde_json::from_value(meta).map_err(|_| NnError::BadMeta("header"))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(NnError::UnsupportedVersion(meta.version));
        }
        if !(meta.value_scale > 0.0 && meta.value_scale.is_finite()) {
            return Err(NnError::BadValueScale(meta.value_scale));
        }
        let mut weights = Vec::new();
        let mut ema = Vec::new();
        for b in &blobs {
            let (dest, name) = if let Some(n) = b.name.strip_prefix("w/") {
                (&mut weights, n)
            } else if let Some(n) = b.name.strip_prefix("ema/") {
                (&mut ema, n)
            } else {
                continue;
            };
            if b.dtype != Dtype::F32 {
                return Err(NnError::BadMeta("tensor dtype"));
            }
            dest.push(NamedTensor {
                name: name.to_string(),
                shape: b.shape.clone(),
                data: b.to_f32()?,
            });
        }
        Ok(Self {
            version: meta.version,
            t_max: meta.t_max,
            beta_start: meta.beta_start,
            beta_end: meta.beta_end,
            template_name: meta.template_name,
            atlas_hash: meta.atlas_hash,
            widths: meta.widths,
            embed_dim: meta.embed_dim,
            iteration: meta.iteration,
            value_scale: meta.value_scale,
            weights,
            ema,
        })
    }
}
