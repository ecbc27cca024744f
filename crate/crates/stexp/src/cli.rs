//! Command-line surface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stexp_core::contrastive::{clip_grad_check, fit, grad_check_encoder};
use stexp_core::data::{preprocess, synth_generate, Slide};
use stexp_core::encoders::PatchBackbone;
use stexp_core::evaluation::{
    ari, compute_metrics, detect_domains, mean_record, rescore_fold, run_fold, FoldOutcome,
    LoocvConfig, LoocvReport, MetricsRecord,
};
use stexp_core::gradcheck::primitive_suite;
use stexp_core::inference::{build_index, predict_slide};
use stexp_core::Tensor;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, PreprocessSection};
use crate::config::RunConfig;
use crate::format::{
    read_dataset, read_f32, read_json, read_u32, write_dataset, write_f32, write_json, write_u32,
};
use crate::index_io::{load_index, save_index};
use crate::output::Staging;
use crate::tables::{write_genes, write_labels, write_metrics, write_table};
use crate::{Error, Result};

/// File name of the resolved-configuration echo written with every output.
pub const RESOLVED: &str = "config.resolved.json";

#[derive(Debug, Parser)]
#[command(
    name = "stexp",
    version,
    about = "Contrastive histology/expression embedding and retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed and STEXP_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (written atomically).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Image/expression coupling in [0, 1].
        #[arg(long)]
        signal: Option<f64>,
    },
    /// Train both encoders and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Slides excluded from training (repeatable).
        #[arg(long = "hold-out")]
        hold_out: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Encode the checkpoint's training spots into a retrieval index.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict expression for one slide by top-k retrieval.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        slide: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a prediction against the observed slide.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Leave-one-slide-out cross-validation.
    Loocv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Cross-validate model variants side by side.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// no_positional_encoding, no_mhsa or no_image_path (repeatable).
        #[arg(long = "toggle")]
        toggles: Vec<String>,
        /// Comma-separated k values evaluated with the full model.
        #[arg(long = "k-sweep", value_delimiter = ',')]
        k_sweep: Vec<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference check of the full loss gradient on a reduced model.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Number of (patch, spot) pairs in the batch.
        #[arg(long, default_value_t = 4)]
        pairs: usize,
        #[arg(long)]
        learnable_temperature: bool,
    },
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { common, signal } => gen_data(common, signal),
        Command::Train {
            common,
            data,
            hold_out,
            epochs,
        } => train(common, data, hold_out, epochs),
        Command::Embed {
            common,
            checkpoint,
            data,
        } => embed(common, &checkpoint, data),
        Command::Predict {
            common,
            checkpoint,
            index,
            data,
            slide,
            k,
        } => predict(common, &checkpoint, &index, data, &slide, k),
        Command::Eval {
            common,
            pred,
            checkpoint,
            data,
        } => eval(common, &pred, &checkpoint, data),
        Command::Loocv {
            common,
            data,
            k,
            epochs,
        } => loocv_cmd(common, data, k, epochs),
        Command::Ablate {
            common,
            data,
            toggles,
            k_sweep,
            epochs,
        } => ablate(common, data, toggles, k_sweep, epochs),
        Command::GradCheck {
            common,
            tol,
            eps,
            pairs,
            learnable_temperature,
        } => grad_check_cmd(common, tol, eps, pairs, learnable_temperature),
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    staging: Staging,
}

fn begin(common: &Common) -> Result<Ctx> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve_seed(common.seed)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Usage("--out is required (or set `out` in the config)".into()))?;
    cfg.out = Some(out.clone());
    let staging = Staging::new(&out, common.force)?;
    Ok(Ctx { cfg, seed, staging })
}

impl Ctx {
    fn finish(self) -> Result<()> {
        write_json(&self.staging.path().join(RESOLVED), &self.cfg)?;
        let out = self.staging.commit()?;
        log::info!("wrote {}", out.display());
        Ok(())
    }

    fn file(&self, name: &str) -> PathBuf {
        self.staging.path().join(name)
    }

    /// Reads `--data`, else `data.path`, else generates from `data.generate`.
    fn load_slides(&mut self, flag: Option<PathBuf>) -> Result<Vec<Slide>> {
        if let Some(p) = flag {
            self.cfg.data.path = Some(p);
        }
        match &self.cfg.data.path {
            Some(p) => read_dataset(p),
            None => Ok(synth_generate(
                &self.cfg.data.generate.to_core(),
                self.seed,
            )?),
        }
    }
}

fn gen_data(common: Common, signal: Option<f64>) -> Result<()> {
    let mut ctx = begin(&common)?;
    if let Some(s) = signal {
        ctx.cfg.data.generate.signal = s;
    }
    let slides = synth_generate(&ctx.cfg.data.generate.to_core(), ctx.seed)?;
    write_dataset(ctx.staging.path(), &slides)?;
    ctx.finish()
}

fn train(
    common: Common,
    data: Option<PathBuf>,
    hold_out: Vec<String>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut ctx = begin(&common)?;
    if let Some(e) = epochs {
        ctx.cfg.train.epochs = e;
    }
    let slides = ctx.load_slides(data)?;
    for h in &hold_out {
        if !slides.iter().any(|s| &s.slide_id == h) {
            return Err(Error::Usage(format!("--hold-out {h}: no such slide")));
        }
    }
    let train_ids: Vec<String> = slides
        .iter()
        .map(|s| s.slide_id.clone())
        .filter(|id| !hold_out.contains(id))
        .collect();
    let ds = preprocess(&slides, ctx.cfg.data.hvg_num, &train_ids)?;
    let enc = ctx.cfg.encoder.to_core(ds.hvg_num(), &slides)?;
    let tc = ctx.cfg.train.to_core(ctx.seed);
    let outcome = fit(&ds, &enc, &tc)?;
    let pre = PreprocessSection::new(&ds.manifest, &ds.gene_names);
    save_checkpoint(
        ctx.staging.path(),
        &Checkpoint::from_outcome(outcome, &tc, pre),
    )?;
    ctx.finish()
}

/// Slides prepared exactly as the checkpoint's training data was.
fn prepare(ckpt: &Checkpoint, slides: &[Slide]) -> Result<Vec<Slide>> {
    Ok(ckpt.preprocess.to_core().apply(slides)?)
}

fn embed(common: Common, checkpoint: &Path, data: Option<PathBuf>) -> Result<()> {
    let mut ctx = begin(&common)?;
    let ckpt = load_checkpoint(checkpoint)?;
    echo_checkpoint(&mut ctx.cfg, &ckpt);
    let slides = ctx.load_slides(data)?;
    let processed = prepare(&ckpt, &slides)?;
    let train: Vec<&Slide> = processed
        .iter()
        .filter(|s| ckpt.preprocess.train_ids.contains(&s.slide_id))
        .collect();
    let index = build_index(&ckpt.model, &train)?;
    save_index(ctx.staging.path(), &index, &ckpt.preprocess.gene_names)?;
    ctx.finish()
}

fn echo_checkpoint(cfg: &mut RunConfig, ckpt: &Checkpoint) {
    cfg.encoder = crate::config::EncoderSection::from_core(&ckpt.model.config);
    cfg.train = crate::config::TrainSection::from_core(&ckpt.train);
    cfg.data.hvg_num = ckpt.preprocess.hvg_num;
}

/// Metadata written next to a prediction's `expression.f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionMeta {
    pub slide_id: String,
    pub spot_num: usize,
    pub gene_num: usize,
    pub gene_names: Vec<String>,
    pub k: usize,
}

fn predict(
    common: Common,
    checkpoint: &Path,
    index_dir: &Path,
    data: Option<PathBuf>,
    slide_id: &str,
    k: Option<usize>,
) -> Result<()> {
    let mut ctx = begin(&common)?;
    if let Some(k) = k {
        ctx.cfg.inference.k = k;
    }
    let ckpt = load_checkpoint(checkpoint)?;
    echo_checkpoint(&mut ctx.cfg, &ckpt);
    let (index, genes) = load_index(index_dir)?;
    if genes != ckpt.preprocess.gene_names {
        return Err(Error::Usage(
            "index and checkpoint select different genes".into(),
        ));
    }
    let slides = ctx.load_slides(data)?;
    let slide = slides
        .into_iter()
        .find(|s| s.slide_id == slide_id)
        .ok_or_else(|| Error::Usage(format!("--slide {slide_id}: no such slide")))?;
    let test = prepare(&ckpt, std::slice::from_ref(&slide))?.remove(0);
    let pred = predict_slide(&ckpt.model, &index, &test, ctx.cfg.inference.k)?;
    let meta = PredictionMeta {
        slide_id: test.slide_id.clone(),
        spot_num: test.spot_num(),
        gene_num: test.gene_num(),
        gene_names: test.gene_names.clone(),
        k: ctx.cfg.inference.k,
    };
    write_json(&ctx.file("meta.json"), &meta)?;
    write_f32(&ctx.file("expression.f32"), pred.data())?;
    let coords: Vec<u32> = test.coords.iter().flatten().copied().collect();
    write_u32(&ctx.file("coords.u32"), &coords)?;
    ctx.finish()
}

fn eval(common: Common, pred_dir: &Path, checkpoint: &Path, data: Option<PathBuf>) -> Result<()> {
    let mut ctx = begin(&common)?;
    let ckpt = load_checkpoint(checkpoint)?;
    echo_checkpoint(&mut ctx.cfg, &ckpt);
    let meta: PredictionMeta = read_json(&pred_dir.join("meta.json"))?;
    let pred = Tensor::new(
        &[meta.spot_num, meta.gene_num],
        read_f32(
            &pred_dir.join("expression.f32"),
            "expression",
            meta.spot_num * meta.gene_num,
        )?,
    )?;
    let slides = ctx.load_slides(data)?;
    let slide = slides
        .into_iter()
        .find(|s| s.slide_id == meta.slide_id)
        .ok_or_else(|| Error::Usage(format!("slide {} not in the dataset", meta.slide_id)))?;
    let obs = prepare(&ckpt, std::slice::from_ref(&slide))?.remove(0);
    let coords_flat = read_u32(&pred_dir.join("coords.u32"), "coords", meta.spot_num * 2)?;
    let same_spots = coords_flat
        .chunks_exact(2)
        .zip(&obs.coords)
        .all(|(a, b)| a[0] == b[0] && a[1] == b[1]);
    if obs.spot_num() != meta.spot_num || !same_spots {
        return Err(Error::Usage(
            "prediction spots do not match the observed slide".into(),
        ));
    }
    let record = compute_metrics(&obs.slide_id, &obs.gene_names, &pred, &obs.expression)?;
    let mean = mean_record(std::slice::from_ref(&record))?;
    write_metrics(&ctx.file("metrics.tsv"), &[&record, &mean])?;
    write_genes(&ctx.file("genes.tsv"), &record)?;
    if let Some(a) = write_domains(&ctx, &obs, &pred, "")? {
        write_table(
            &ctx.file("domains.tsv"),
            &["slide_id", "ari"],
            &[vec![obs.slide_id.clone(), format!("{a:.6}")]],
        )?;
    }
    ctx.finish()
}

/// PCA + k-means on the prediction; `labels.tsv` plus ARI when ground truth exists.
fn write_domains(ctx: &Ctx, slide: &Slide, pred: &Tensor<f32>, name: &str) -> Result<Option<f64>> {
    let truth = slide.labels.as_deref();
    let clusters = match (ctx.cfg.eval.clusters, truth) {
        (Some(k), _) => k,
        (None, Some(t)) => {
            let mut d: Vec<u16> = t.to_vec();
            d.sort_unstable();
            d.dedup();
            d.len()
        }
        (None, None) => 4,
    };
    let (s, g) = pred.dims2()?;
    let c = ctx.cfg.eval.pca_components.min(s).min(g);
    let km = detect_domains(pred, c, clusters.min(s), ctx.seed)?;
    let file = if name.is_empty() {
        "labels.tsv".to_string()
    } else {
        format!("labels_{name}.tsv")
    };
    write_labels(&ctx.file(&file), &slide.coords, &km.labels, truth)?;
    Ok(match truth {
        Some(t) => Some(ari(&km.labels, t)?),
        None => None,
    })
}

fn loocv_config(ctx: &Ctx, slides: &[Slide]) -> Result<LoocvConfig> {
    let hvg = ctx.cfg.data.hvg_num;
    Ok(LoocvConfig {
        hvg_num: hvg,
        encoder: ctx.cfg.encoder.to_core(hvg, slides)?,
        train: ctx.cfg.train.to_core(ctx.seed),
        k: ctx.cfg.inference.k,
    })
}

/// All folds, run concurrently; each fold trains sequentially.
pub fn run_loocv(slides: &[Slide], cfg: &LoocvConfig) -> Result<LoocvReport> {
    if slides.len() < 2 {
        return Err(Error::Usage(format!(
            "leave-one-out needs at least 2 slides, got {}",
            slides.len()
        )));
    }
    let folds = slides
        .par_iter()
        .map(|s| run_fold(slides, &s.slide_id, cfg))
        .collect::<stexp_core::Result<Vec<FoldOutcome>>>()?;
    Ok(LoocvReport::from_folds(folds)?)
}

fn loocv_cmd(
    common: Common,
    data: Option<PathBuf>,
    k: Option<usize>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut ctx = begin(&common)?;
    if let Some(k) = k {
        ctx.cfg.inference.k = k;
    }
    if let Some(e) = epochs {
        ctx.cfg.train.epochs = e;
    }
    let slides = ctx.load_slides(data)?;
    let cfg = loocv_config(&ctx, &slides)?;
    let report = run_loocv(&slides, &cfg)?;
    write_metrics(&ctx.file("metrics.tsv"), &report.table())?;
    let mean_base = report.mean_of(|f| &f.mean_baseline)?;
    let rand_base = report.mean_of(|f| &f.random_baseline)?;
    let mut rows = Vec::new();
    for f in &report.folds {
        rows.push(vec![
            f.test_id.clone(),
            format!("{:.6}", f.metrics.pcc_acg),
            format!("{:.6}", f.mean_baseline.pcc_acg),
            format!("{:.6}", f.random_baseline.pcc_acg),
        ]);
    }
    rows.push(vec![
        "mean".into(),
        format!("{:.6}", report.mean.pcc_acg),
        format!("{:.6}", mean_base.pcc_acg),
        format!("{:.6}", rand_base.pcc_acg),
    ]);
    write_table(
        &ctx.file("baselines.tsv"),
        &[
            "slide_id",
            "model_pcc_acg",
            "train_mean_pcc_acg",
            "random_retrieval_pcc_acg",
        ],
        &rows,
    )?;
    let mut domain_rows = Vec::new();
    for f in &report.folds {
        write_genes(&ctx.file(&format!("genes_{}.tsv", f.test_id)), &f.metrics)?;
        let mut tsv = String::from("epoch\tmean_loss\n");
        for (e, l) in f.epoch_losses.iter().enumerate() {
            tsv.push_str(&format!("{e}\t{l}\n"));
        }
        std::fs::write(ctx.file(&format!("loss_{}.tsv", f.test_id)), tsv)
            .map_err(|e| Error::io(ctx.file("loss.tsv"), e))?;
        let processed = f.manifest.apply(&slides)?;
        let test = processed
            .iter()
            .find(|s| s.slide_id == f.test_id)
            .expect("fold slide present");
        if let Some(a) = write_domains(&ctx, test, &f.prediction, &f.test_id)? {
            domain_rows.push(vec![f.test_id.clone(), format!("{a:.6}")]);
        }
    }
    if !domain_rows.is_empty() {
        write_table(&ctx.file("domains.tsv"), &["slide_id", "ari"], &domain_rows)?;
    }
    ctx.finish()
}

/// Ablation toggles understood by `ablate`.
pub const TOGGLES: [&str; 3] = ["no_positional_encoding", "no_mhsa", "no_image_path"];

fn apply_toggle(cfg: &mut LoocvConfig, toggle: &str) -> Result<()> {
    match toggle {
        "no_positional_encoding" => cfg.encoder.positional = false,
        "no_mhsa" => cfg.encoder.mhsa_layers = 0,
        "no_image_path" => cfg.encoder.patch_backbone = PatchBackbone::Identity,
        other => {
            return Err(Error::Usage(format!(
                "unknown toggle `{other}` (expected one of {})",
                TOGGLES.join(", ")
            )))
        }
    }
    Ok(())
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub mean: MetricsRecord,
}

/// Runs the full model plus every toggle and k value.
pub fn run_ablation(
    slides: &[Slide],
    base: &LoocvConfig,
    toggles: &[String],
    ks: &[usize],
) -> Result<Vec<Variant>> {
    if toggles.is_empty() && ks.is_empty() {
        return Err(Error::Usage(
            "ablate needs at least one --toggle or --k-sweep value".into(),
        ));
    }
    for t in toggles {
        apply_toggle(&mut base.clone(), t)?;
    }
    let full = run_loocv(slides, base)?;
    ablation_variants(slides, base, &full, toggles, ks)
}

/// Variants around an already computed full-model cross-validation; the
/// k values reuse its trained folds.
pub fn ablation_variants(
    slides: &[Slide],
    base: &LoocvConfig,
    full: &LoocvReport,
    toggles: &[String],
    ks: &[usize],
) -> Result<Vec<Variant>> {
    let mut out = vec![Variant {
        name: "full".into(),
        mean: full.mean.clone(),
    }];
    for t in toggles {
        let mut cfg = base.clone();
        apply_toggle(&mut cfg, t)?;
        let r = run_loocv(slides, &cfg)?;
        out.push(Variant {
            name: t.clone(),
            mean: r.mean,
        });
    }
    for &k in ks {
        let records = full
            .folds
            .par_iter()
            .map(|f| rescore_fold(slides, f, k))
            .collect::<stexp_core::Result<Vec<_>>>()?;
        let mut mean = mean_record(&records)?;
        mean.slide_id = format!("k={k}");
        out.push(Variant {
            name: format!("k={k}"),
            mean,
        });
    }
    Ok(out)
}

pub const ABLATION_HEADER: [&str; 5] = ["variant", "pcc_acg", "pcc_heg", "mse", "mae"];

pub fn ablation_rows(variants: &[Variant]) -> Vec<Vec<String>> {
    variants
        .iter()
        .map(|v| {
            vec![
                v.name.clone(),
                format!("{:.6}", v.mean.pcc_acg),
                format!("{:.6}", v.mean.pcc_heg),
                format!("{:.6}", v.mean.mse),
                format!("{:.6}", v.mean.mae),
            ]
        })
        .collect()
}

fn ablate(
    common: Common,
    data: Option<PathBuf>,
    toggles: Vec<String>,
    k_sweep: Vec<usize>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut ctx = begin(&common)?;
    if let Some(e) = epochs {
        ctx.cfg.train.epochs = e;
    }
    ctx.cfg.ablate.toggles.extend(toggles);
    ctx.cfg.ablate.k_values.extend(k_sweep);
    let slides = ctx.load_slides(data)?;
    let base = loocv_config(&ctx, &slides)?;
    let variants = run_ablation(
        &slides,
        &base,
        &ctx.cfg.ablate.toggles,
        &ctx.cfg.ablate.k_values,
    )?;
    write_table(
        &ctx.file("ablation.tsv"),
        &ABLATION_HEADER,
        &ablation_rows(&variants),
    )?;
    ctx.finish()
}

fn grad_check_cmd(common: Common, tol: f64, eps: f64, pairs: usize, learnable: bool) -> Result<()> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve_seed(common.seed)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut worst = 0.0f64;
    for c in primitive_suite(seed, eps, tol)? {
        let err = c.report.max_rel_err();
        worst = worst.max(err);
        rows.push(vec![c.primitive.to_string(), format!("{err:.3e}")]);
    }
    let check = clip_grad_check(&grad_check_encoder(), pairs, learnable, seed, eps, tol)?;
    for p in &check.report.params {
        worst = worst.max(p.max_rel_err);
        rows.push(vec![
            format!("loss:{}", p.name),
            format!("{:.3e}", p.max_rel_err),
        ]);
    }
    println!("check\tmax_rel_err");
    for r in &rows {
        println!("{}\t{}", r[0], r[1]);
    }
    println!("max relative error {worst:.3e} (tol {tol:.1e}, eps {eps:.1e}, {pairs} pairs)");
    if let Some(out) = common.out.clone().or(cfg.out.clone()) {
        let staging = Staging::new(&out, common.force)?;
        write_table(
            &staging.path().join("gradcheck.tsv"),
            &["check", "max_rel_err"],
            &rows,
        )?;
        cfg.out = Some(out);
        write_json(&staging.path().join(RESOLVED), &cfg)?;
        staging.commit()?;
    }
    if worst <= tol {
        Ok(())
    } else {
        Err(Error::GradCheck(format!(
            "max relative error {worst:.3e} exceeds {tol:e}"
        )))
    }
}
