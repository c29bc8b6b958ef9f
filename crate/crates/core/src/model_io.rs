//! Trained model files.
//!
//! A model is one JSON document holding the format version, the geometry
//! constants, the embedding dimension, every parameter segment in flattening
//! order and a little training metadata. Every float is written with 17
//! significant digits so a save/load cycle reproduces each `f64` exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::adapter::AdapterParams;
use crate::entailment::EntailmentConfig;
use crate::manifold::{AdaptiveScaler, ManifoldConfig};
use crate::regressor::ModulationNetParams;
use crate::training::{ParameterSet, TrainConfig, SEGMENT_NAMES};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "lorentz-align-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub curvature: f64,
    pub k: f64,
    pub contraction: f64,
    pub alpha_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    /// `None` when no epoch produced a defined validation SRCC.
    pub best_val_srcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub geometry: Geometry,
    pub params: ParameterSet,
    pub metadata: ModelMetadata,
}

impl Model {
    pub fn new(params: ParameterSet, cfg: &TrainConfig, metadata: ModelMetadata) -> Self {
        Self {
            geometry: Geometry {
                curvature: cfg.curvature,
                k: cfg.k,
                contraction: cfg.contraction,
                alpha_max: params.image_scaler.alpha_max,
            },
            params,
            metadata,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Training configuration carrying this model's geometry, for inference.
    pub fn inference_config(&self) -> TrainConfig {
        TrainConfig {
            curvature: self.geometry.curvature,
            k: self.geometry.k,
            contraction: self.geometry.contraction,
            adapter_reduction: (self.dim() / self.params.image_adapter.hidden).max(1),
            modnet_hidden: self.params.modnet.hidden,
            ..TrainConfig::default()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let g = &self.geometry;
        let segments = self
            .params
            .segments()
            .into_iter()
            .map(|(name, values)| {
                Ok(SegmentOut {
                    name,
                    values: raw_array(values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = DocOut {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            geometry: GeometryOut {
                curvature: raw_f64(g.curvature)?,
                k: raw_f64(g.k)?,
                contraction: raw_f64(g.contraction)?,
                alpha_max: raw_f64(g.alpha_max)?,
            },
            dim: self.dim(),
            adapter_hidden: self.params.image_adapter.hidden,
            modnet_hidden: self.params.modnet.hidden,
            parameters: segments,
            metadata: MetadataOut {
                seed: self.metadata.seed,
                epochs_run: self.metadata.epochs_run,
                best_val_srcc: match self.metadata.best_val_srcc {
                    Some(v) if v.is_finite() => Some(raw_f64(v)?),
                    _ => None,
                },
            },
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DocIn = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Model(format!(
                "unexpected format tag {:?}",
                doc.format
            )));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        if doc.parameters.len() != SEGMENT_NAMES.len() {
            return Err(Error::Model(format!(
                "expected {} parameter segments, found {}",
                SEGMENT_NAMES.len(),
                doc.parameters.len()
            )));
        }
        for (seg, want) in doc.parameters.iter().zip(SEGMENT_NAMES) {
            if seg.name != want {
                return Err(Error::Model(format!(
                    "segment {:?} found where {want:?} was expected",
                    seg.name
                )));
            }
        }
        if doc.dim == 0 || doc.adapter_hidden == 0 || doc.modnet_hidden == 0 {
            return Err(Error::Model("dimensions must be positive".into()));
        }
        let g = doc.geometry;
        ManifoldConfig::new(g.curvature).map_err(|e| Error::Model(e.to_string()))?;
        EntailmentConfig {
            k: g.k,
            contraction: g.contraction,
            ..EntailmentConfig::default()
        }
        .validate()
        .map_err(|e| Error::Model(e.to_string()))?;
        if !(g.alpha_max.is_finite() && g.alpha_max > 0.0) {
            return Err(Error::Model(format!(
                "alpha_max must be positive, got {}",
                g.alpha_max
            )));
        }

        let scaler = AdaptiveScaler {
            raw: 0.0,
            alpha_max: g.alpha_max,
        };
        let mut params = ParameterSet {
            image_scaler: scaler,
            text_scaler: scaler,
            image_adapter: AdapterParams::zeros(doc.dim, doc.adapter_hidden),
            text_adapter: AdapterParams::zeros(doc.dim, doc.adapter_hidden),
            modnet: ModulationNetParams::zeros(doc.modnet_hidden),
        };
        for ((name, expected), seg) in params
            .segments()
            .into_iter()
            .map(|(n, s)| (n, s.len()))
            .zip(&doc.parameters)
        {
            if seg.values.len() != expected {
                return Err(Error::Model(format!(
                    "segment {name} has {} values, expected {expected}",
                    seg.values.len()
                )));
            }
        }
        let flat: Vec<f64> = doc.parameters.into_iter().flat_map(|s| s.values).collect();
        params.assign_flat(&flat)?;
        Ok(Self {
            geometry: g,
            params,
            metadata: doc.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn fmt_f64(v: f64) -> Result<String> {
    if v.is_finite() {
        Ok(format!("{v:.16e}"))
    } else {
        Err(Error::Model(format!(
            "cannot serialize non-finite value {v}"
        )))
    }
}

fn raw_f64(v: f64) -> Result<Box<RawValue>> {
    RawValue::from_string(fmt_f64(v)?).map_err(|e| Error::Model(e.to_string()))
}

fn raw_array(values: &[f64]) -> Result<Box<RawValue>> {
    let parts = values
        .iter()
        .map(|&v| fmt_f64(v))
        .collect::<Result<Vec<_>>>()?;
    RawValue::from_string(format!("[{}]", parts.join(","))).map_err(|e| Error::Model(e.to_string()))
}

#[derive(Serialize)]
struct GeometryOut {
    curvature: Box<RawValue>,
    k: Box<RawValue>,
    contraction: Box<RawValue>,
    alpha_max: Box<RawValue>,
}

#[derive(Serialize)]
struct SegmentOut {
    name: &'static str,
    values: Box<RawValue>,
}

#[derive(Serialize)]
struct MetadataOut {
    seed: u64,
    epochs_run: usize,
    best_val_srcc: Option<Box<RawValue>>,
}

#[derive(Serialize)]
struct DocOut {
    format: &'static str,
    version: u32,
    geometry: GeometryOut,
    dim: usize,
    adapter_hidden: usize,
    modnet_hidden: usize,
    parameters: Vec<SegmentOut>,
    metadata: MetadataOut,
}

#[derive(Deserialize)]
struct SegmentIn {
    name: String,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct DocIn {
    format: String,
    version: u32,
    geometry: Geometry,
    dim: usize,
    adapter_hidden: usize,
    modnet_hidden: usize,
    parameters: Vec<SegmentIn>,
    metadata: ModelMetadata,
}
