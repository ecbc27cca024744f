//! Checkpoints: `manifest.json` + `params.f32` + `loss.tsv`.
//!
//! The manifest lists every parameter with its shape and byte range in the
//! blob; the ranges tile the blob exactly, in name order. It also carries
//! the encoder and training configuration, the seed and the preprocessing
//! manifest needed to prepare new slides for this model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stexp_core::contrastive::{TrainConfig, TrainOutcome};
use stexp_core::data::{PatchShape, PreprocessManifest};
use stexp_core::encoders::{EncoderConfig, Model, PatchInput};
use stexp_core::{ParamSet, Tensor};

use crate::config::{EncoderSection, TrainSection};
use crate::format::{read_f32, read_json, write_f32, write_json, PatchMeta};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.f32";
pub const LOSS: &str = "loss.tsv";
const FORMAT_TAG: &str = "stexp-checkpoint-v1";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub target_sum: f64,
    pub log1p: bool,
    pub hvg_num: usize,
    pub hvg_indices: Vec<usize>,
    pub hvg_variances: Vec<f64>,
    /// Names of the selected genes, in model column order.
    pub gene_names: Vec<String>,
    pub train_ids: Vec<String>,
    pub dropped_spots: Vec<(String, usize)>,
}

impl PreprocessSection {
    pub fn new(m: &PreprocessManifest, gene_names: &[String]) -> Self {
        Self {
            target_sum: m.target_sum,
            log1p: m.log1p,
            hvg_num: m.hvg_num,
            hvg_indices: m.hvg_indices.clone(),
            hvg_variances: m.hvg_variances.clone(),
            gene_names: gene_names.to_vec(),
            train_ids: m.train_ids.clone(),
            dropped_spots: m.dropped_spots.clone(),
        }
    }

    pub fn to_core(&self) -> PreprocessManifest {
        PreprocessManifest {
            target_sum: self.target_sum,
            log1p: self.log1p,
            hvg_num: self.hvg_num,
            train_ids: self.train_ids.clone(),
            hvg_indices: self.hvg_indices.clone(),
            hvg_variances: self.hvg_variances.clone(),
            dropped_spots: self.dropped_spots.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub total_bytes: usize,
    pub params: Vec<ParamEntry>,
    pub encoder: EncoderSection,
    pub hvg_num: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feat_dim: Option<usize>,
    pub train: TrainSection,
    pub seed: u64,
    pub epoch: usize,
    pub final_loss: Option<f64>,
    pub preprocess: PreprocessSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub epoch_losses: Vec<f64>,
    pub preprocess: PreprocessSection,
}

impl Checkpoint {
    pub fn from_outcome(
        outcome: TrainOutcome,
        train: &TrainConfig,
        preprocess: PreprocessSection,
    ) -> Self {
        Self {
            model: outcome.model,
            train: train.clone(),
            epoch_losses: outcome.epoch_losses,
            preprocess,
        }
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &ckpt.model.config;
    let mut blob = Vec::with_capacity(ckpt.model.params.numel());
    let mut entries = Vec::new();
    for (name, p) in ckpt.model.params.iter() {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset: blob.len() * 4,
            bytes: p.value.numel() * 4,
            frozen: p.frozen,
        });
        blob.extend_from_slice(p.value.data());
    }
    let (patch, feat_dim) = match cfg.patch_input {
        PatchInput::Pixels(p) => (
            Some(PatchMeta {
                c: p.c,
                h: p.h,
                w: p.w,
            }),
            None,
        ),
        PatchInput::Features { dim } => (None, Some(dim)),
    };
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        dtype: DTYPE.into(),
        total_bytes: blob.len() * 4,
        params: entries,
        encoder: EncoderSection::from_core(cfg),
        hvg_num: cfg.hvg_num,
        patch,
        feat_dim,
        train: TrainSection::from_core(&ckpt.train),
        seed: ckpt.train.seed,
        epoch: ckpt.epoch_losses.len(),
        final_loss: ckpt.epoch_losses.last().copied(),
        preprocess: ckpt.preprocess.clone(),
    };
    write_f32(&dir.join(PARAMS), &blob)?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    let mut tsv = String::from("epoch\tmean_loss\n");
    for (e, l) in ckpt.epoch_losses.iter().enumerate() {
        let _ = writeln!(tsv, "{e}\t{l}");
    }
    fs::write(dir.join(LOSS), tsv).map_err(|e| Error::io(dir.join(LOSS), e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST);
    let m: Manifest = read_json(&mpath)?;
    if m.format != FORMAT_TAG || m.dtype != DTYPE {
        return Err(Error::format(
            &mpath,
            "format",
            format!("unsupported {} / {}", m.format, m.dtype),
        ));
    }
    let mut expected_offset = 0;
    for p in &m.params {
        let numel: usize = p.shape.iter().product();
        if p.offset != expected_offset || p.bytes != numel * 4 {
            return Err(Error::format(
                &mpath,
                format!("params.{}", p.name),
                format!("byte range {}+{} does not tile the blob", p.offset, p.bytes),
            ));
        }
        expected_offset += p.bytes;
    }
    if expected_offset != m.total_bytes {
        return Err(Error::format(
            &mpath,
            "total_bytes",
            "does not match parameter ranges",
        ));
    }
    let blob = read_f32(&dir.join(PARAMS), "params", m.total_bytes / 4)?;
    let mut params = ParamSet::new();
    for p in &m.params {
        let start = p.offset / 4;
        let t = Tensor::new(&p.shape, blob[start..start + p.bytes / 4].to_vec())?;
        if p.frozen {
            params.insert_frozen(p.name.clone(), t)?;
        } else {
            params.insert(p.name.clone(), t)?;
        }
    }
    let patch_input = match (m.patch, m.feat_dim) {
        (Some(p), None) => PatchInput::Pixels(PatchShape::from(p)),
        (None, Some(dim)) => PatchInput::Features { dim },
        _ => {
            return Err(Error::format(
                &mpath,
                "patch",
                "exactly one of `patch` and `feat_dim` required",
            ))
        }
    };
    let coord_max = m
        .encoder
        .coord_max
        .ok_or_else(|| Error::format(&mpath, "encoder.coord_max", "missing"))?;
    let mut cfg: EncoderConfig = EncoderConfig {
        hvg_num: m.hvg_num,
        coord_max,
        patch_input,
        ..EncoderConfig::default()
    };
    cfg.d_embed = m.encoder.d_embed;
    cfg.n_heads = m.encoder.n_heads;
    cfg.conv_channels = m.encoder.conv_channels.clone();
    cfg.proj_hidden = m.encoder.proj_hidden;
    cfg.mhsa_layers = m.encoder.mhsa_layers;
    cfg.positional = m.encoder.positional;
    cfg.patch_backbone = match m.encoder.backbone {
        crate::config::BackboneSection::Conv => stexp_core::encoders::PatchBackbone::Conv,
        crate::config::BackboneSection::Identity => stexp_core::encoders::PatchBackbone::Identity,
    };
    cfg.freeze_patch_encoder = m.encoder.freeze_patch_encoder;
    let model = Model::new(cfg, params)?;
    let losses = read_losses(&dir.join(LOSS))?;
    Ok(Checkpoint {
        model,
        train: m.train.to_core(m.seed),
        epoch_losses: losses,
        preprocess: m.preprocess,
    })
}

fn read_losses(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let value = line
            .split('\t')
            .nth(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| {
                Error::format(
                    path,
                    format!("line {}", i + 1),
                    "expected `epoch<TAB>mean_loss`",
                )
            })?;
        out.push(value);
    }
    Ok(out)
}
