//! Leave-one-slide-out cross-validation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::contrastive::{fit, TrainConfig};
use crate::data::{preprocess, PreprocessManifest, Slide};
use crate::encoders::{EncoderConfig, Model};
use crate::evaluation::metrics::{compute_metrics, mean_record, MetricsRecord};
use crate::inference::{
    build_index, predict_slide, random_retrieval_prediction, train_mean_prediction, DEFAULT_K,
};
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvConfig {
    pub hvg_num: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub k: usize,
}

impl Default for LoocvConfig {
    fn default() -> Self {
        Self {
            hvg_num: 64,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            k: DEFAULT_K,
        }
    }
}

impl LoocvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder.hvg_num != self.hvg_num {
            return Err(Error::invalid(
                "hvg_num",
                format!(
                    "encoder expects {}, preprocessing selects {}",
                    self.encoder.hvg_num, self.hvg_num
                ),
            ));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "must be >= 1"));
        }
        self.encoder.validate()?;
        self.train.validate()
    }
}

/// Everything produced by one held-out slide.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub test_id: String,
    pub metrics: MetricsRecord,
    /// Training-mean predictor on the same fold.
    pub mean_baseline: MetricsRecord,
    /// Aggregation over randomly retrieved reference spots.
    pub random_baseline: MetricsRecord,
    pub prediction: Tensor<f32>,
    pub observed: Tensor<f32>,
    pub epoch_losses: Vec<f64>,
    pub manifest: PreprocessManifest,
    pub model: Model,
}

/// Trains on every slide except `test_id`, then predicts and scores it.
/// Gene selection uses training slides only.
pub fn run_fold(slides: &[Slide], test_id: &str, cfg: &LoocvConfig) -> Result<FoldOutcome> {
    cfg.validate()?;
    if !slides.iter().any(|s| s.slide_id == test_id) {
        return Err(Error::invalid(
            "test slide",
            format!("unknown slide {test_id}"),
        ));
    }
    let train_ids: Vec<String> = slides
        .iter()
        .filter(|s| s.slide_id != test_id)
        .map(|s| s.slide_id.clone())
        .collect();
    let ds = preprocess(slides, cfg.hvg_num, &train_ids)?;
    let outcome = fit(&ds, &cfg.encoder, &cfg.train)?;
    let train = ds.train_slides();
    let index = build_index(&outcome.model, &train)?;
    let test = ds.slide(test_id).ok_or_else(|| {
        Error::invalid(
            "test slide",
            format!("{test_id} lost all spots in preprocessing"),
        )
    })?;
    let k = cfg.k.min(index.len());
    if k != cfg.k {
        log::warn!(
            "k = {} exceeds the {} reference spots; using {k}",
            cfg.k,
            index.len()
        );
    }
    let prediction = predict_slide(&outcome.model, &index, test, k)?;
    let metrics = compute_metrics(test_id, &ds.gene_names, &prediction, &test.expression)?;
    let mean_pred = train_mean_prediction(&index, test.spot_num())?;
    let mean_baseline = compute_metrics(test_id, &ds.gene_names, &mean_pred, &test.expression)?;
    let rand_pred = random_retrieval_prediction(
        &index,
        test.spot_num(),
        k,
        rng::derive_seed(cfg.train.seed, &[5]),
    )?;
    let random_baseline = compute_metrics(test_id, &ds.gene_names, &rand_pred, &test.expression)?;
    log::info!(
        "fold {test_id}: pcc_acg {:.4} (mean baseline {:.4}, random retrieval {:.4})",
        metrics.pcc_acg,
        mean_baseline.pcc_acg,
        random_baseline.pcc_acg
    );
    Ok(FoldOutcome {
        test_id: test_id.into(),
        metrics,
        mean_baseline,
        random_baseline,
        prediction,
        observed: test.expression.clone(),
        epoch_losses: outcome.epoch_losses,
        manifest: ds.manifest,
        model: outcome.model,
    })
}

/// Re-predicts a finished fold with a different `k`, reusing its trained
/// model and preprocessing.
pub fn rescore_fold(slides: &[Slide], fold: &FoldOutcome, k: usize) -> Result<MetricsRecord> {
    let processed = fold.manifest.apply(slides)?;
    let train: Vec<&Slide> = processed
        .iter()
        .filter(|s| fold.manifest.train_ids.contains(&s.slide_id))
        .collect();
    let test = processed
        .iter()
        .find(|s| s.slide_id == fold.test_id)
        .ok_or_else(|| Error::invalid("test slide", format!("{} missing", fold.test_id)))?;
    let index = build_index(&fold.model, &train)?;
    let prediction = predict_slide(&fold.model, &index, test, k.min(index.len()))?;
    compute_metrics(
        &fold.test_id,
        &test.gene_names,
        &prediction,
        &test.expression,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvReport {
    pub folds: Vec<FoldOutcome>,
    pub mean: MetricsRecord,
}

impl LoocvReport {
    /// Per-slide rows followed by the mean row.
    pub fn table(&self) -> Vec<&MetricsRecord> {
        self.folds
            .iter()
            .map(|f| &f.metrics)
            .chain(core::iter::once(&self.mean))
            .collect()
    }

    pub fn from_folds(folds: Vec<FoldOutcome>) -> Result<Self> {
        let records: Vec<MetricsRecord> = folds.iter().map(|f| f.metrics.clone()).collect();
        let mean = mean_record(&records)?;
        Ok(Self { folds, mean })
    }

    pub fn mean_of(&self, pick: fn(&FoldOutcome) -> &MetricsRecord) -> Result<MetricsRecord> {
        let records: Vec<MetricsRecord> = self.folds.iter().map(|f| pick(f).clone()).collect();
        mean_record(&records)
    }
}

/// Runs one fold per slide, in slide order.
pub fn loocv(slides: &[Slide], cfg: &LoocvConfig) -> Result<LoocvReport> {
    if slides.len() < 2 {
        return Err(Error::invalid(
            "slides",
            format!("need at least 2, got {}", slides.len()),
        ));
    }
    let folds = slides
        .iter()
        .map(|s| run_fold(slides, &s.slide_id, cfg))
        .collect::<Result<Vec<_>>>()?;
    LoocvReport::from_folds(folds)
}
