//! JSON run configuration. Every section has defaults, unknown keys are
//! rejected, and the fully resolved configuration is echoed next to every
//! output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stexp_core::contrastive::TrainConfig;
use stexp_core::data::{GenConfig, ImageKind, PatchShape, Slide, SlideImage};
use stexp_core::encoders::{EncoderConfig, PatchBackbone, PatchInput};
use stexp_core::inference::DEFAULT_K;

use crate::format::read_json;
use crate::{Error, Result};

/// Environment variable consulted when neither `--seed` nor the config sets one.
pub const SEED_ENV: &str = "STEXP_SEED";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub inference: InferenceSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset root; when absent, the dataset is generated from `generate`.
    pub path: Option<PathBuf>,
    pub generate: GenSection,
    pub hvg_num: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            generate: GenSection::default(),
            hvg_num: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSection {
    Patches { c: usize, h: usize, w: usize },
    Features { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub slides: usize,
    pub spots_per_slide: usize,
    pub gene_num: usize,
    pub domains: usize,
    pub signal: f64,
    pub image: ImageSection,
    pub coord_max: u32,
    pub latent_dim: usize,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection::from(&GenConfig::default())
    }
}

impl From<&GenConfig> for GenSection {
    fn from(g: &GenConfig) -> Self {
        Self {
            slides: g.slides,
            spots_per_slide: g.spots_per_slide,
            gene_num: g.gene_num,
            domains: g.domains,
            signal: g.signal,
            image: match g.image {
                ImageKind::Patches(p) => ImageSection::Patches {
                    c: p.c,
                    h: p.h,
                    w: p.w,
                },
                ImageKind::Features { dim } => ImageSection::Features { dim },
            },
            coord_max: g.coord_max,
            latent_dim: g.latent_dim,
        }
    }
}

impl GenSection {
    pub fn to_core(&self) -> GenConfig {
        GenConfig {
            slides: self.slides,
            spots_per_slide: self.spots_per_slide,
            gene_num: self.gene_num,
            domains: self.domains,
            signal: self.signal,
            image: match self.image {
                ImageSection::Patches { c, h, w } => ImageKind::Patches(PatchShape { c, h, w }),
                ImageSection::Features { dim } => ImageKind::Features { dim },
            },
            coord_max: self.coord_max,
            latent_dim: self.latent_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSection {
    Conv,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_embed: usize,
    pub n_heads: usize,
    /// Defaults to the largest `coord_max` in the dataset.
    pub coord_max: Option<usize>,
    pub conv_channels: Vec<usize>,
    pub proj_hidden: usize,
    pub mhsa_layers: usize,
    pub positional: bool,
    pub backbone: BackboneSection,
    pub freeze_patch_encoder: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            d_embed: e.d_embed,
            n_heads: e.n_heads,
            coord_max: None,
            conv_channels: e.conv_channels,
            proj_hidden: e.proj_hidden,
            mhsa_layers: e.mhsa_layers,
            positional: e.positional,
            backbone: BackboneSection::Conv,
            freeze_patch_encoder: e.freeze_patch_encoder,
        }
    }
}

impl EncoderSection {
    /// Completes the encoder configuration from the dataset it will see.
    pub fn to_core(&self, hvg_num: usize, slides: &[Slide]) -> Result<EncoderConfig> {
        let first = slides
            .first()
            .ok_or_else(|| Error::Config("dataset has no slides".into()))?;
        let patch_input = match &first.image {
            SlideImage::Patches(_) => {
                PatchInput::Pixels(first.image.patch_shape().expect("patches"))
            }
            SlideImage::Features(_) => PatchInput::Features {
                dim: first.image.feat_dim().expect("features"),
            },
        };
        let coord_max = match self.coord_max {
            Some(n) => n,
            None => slides
                .iter()
                .map(|s| s.coord_max as usize)
                .max()
                .unwrap_or(1),
        };
        let cfg = EncoderConfig {
            d_embed: self.d_embed,
            n_heads: self.n_heads,
            hvg_num,
            coord_max,
            conv_channels: self.conv_channels.clone(),
            proj_hidden: self.proj_hidden,
            mhsa_layers: self.mhsa_layers,
            positional: self.positional,
            patch_input,
            patch_backbone: match self.backbone {
                BackboneSection::Conv => PatchBackbone::Conv,
                BackboneSection::Identity => PatchBackbone::Identity,
            },
            freeze_patch_encoder: self.freeze_patch_encoder,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_core(cfg: &EncoderConfig) -> Self {
        Self {
            d_embed: cfg.d_embed,
            n_heads: cfg.n_heads,
            coord_max: Some(cfg.coord_max),
            conv_channels: cfg.conv_channels.clone(),
            proj_hidden: cfg.proj_hidden,
            mhsa_layers: cfg.mhsa_layers,
            positional: cfg.positional,
            backbone: match cfg.patch_backbone {
                PatchBackbone::Conv => BackboneSection::Conv,
                PatchBackbone::Identity => BackboneSection::Identity,
            },
            freeze_patch_encoder: cfg.freeze_patch_encoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub learnable_temperature: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::from_core(&TrainConfig::default())
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            temperature: self.temperature,
            learnable_temperature: self.learnable_temperature,
            seed,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
        }
    }

    pub fn from_core(t: &TrainConfig) -> Self {
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            temperature: t.temperature,
            learnable_temperature: t.learnable_temperature,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub k: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// PCA dimensions before clustering.
    pub pca_components: usize,
    /// Cluster count; defaults to the number of distinct ground-truth labels.
    pub clusters: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            pca_components: 10,
            clusters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Any of `no_positional_encoding`, `no_mhsa`, `no_image_path`.
    pub toggles: Vec<String>,
    /// Values of `k` to sweep with the full model.
    pub k_values: Vec<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// `--seed` flag, then the config, then `STEXP_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let seed = match (flag, self.seed) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                })?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        Ok(seed)
    }
}
