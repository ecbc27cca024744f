//! Symmetric contrastive objective and the training loop.
//!
//! For a batch of `N` matched (patch, spot) pairs with unit-norm embeddings,
//! the logits are `L = h_patch · h_spotᵀ / τ`; the image loss is the
//! cross-entropy of each row of `L` against its diagonal entry, the spot
//! loss the same on `Lᵀ`, and the objective is their average.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{epoch_batches, PatchShape, ProcessedDataset, Slide};
use crate::encoders::{
    encode_patches, encode_spots, init_params, names, EncoderConfig, Model, PatchInput,
};
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{self, Graph, Var};
use crate::params::ParamSet;
use crate::rng;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Maximum deviation from unit norm accepted by [`similarity`].
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Cosine similarity of unit-norm rows: `a · bᵀ`, `[N × M]`.
pub fn similarity<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    for (name, t) in [("h_a", a), ("h_b", b)] {
        for (i, n) in t.row_norms()?.into_iter().enumerate() {
            if (n.to_f64() - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(
                    "similarity",
                    format!("{name} row {i} has norm {}", n.to_f64()),
                ));
            }
        }
    }
    a.matmul(&b.transpose2()?)
}

/// Temperature of the logits, fixed or carried by a graph node holding `ln τ`.
#[derive(Debug, Clone, Copy)]
pub enum Temperature<T> {
    Fixed(T),
    LogLearnable(Var),
}

/// Symmetric cross-entropy of already-scaled logits `[N × N]` with the
/// diagonal as targets.
pub fn symmetric_cross_entropy_graph<T: Real>(g: &mut Graph<T>, logits: Var) -> Result<Var> {
    let (n, m) = g.value(logits).dims2()?;
    if n != m {
        return Err(Error::shape(
            "clip_loss",
            format!("logits {n}x{m} are not square"),
        ));
    }
    if n < 2 {
        return Err(Error::invalid(
            "batch_size",
            format!("need at least 2 pairs, got {n}"),
        ));
    }
    let targets: Vec<usize> = (0..n).collect();
    let image = g.cross_entropy(logits, &targets)?;
    let lt = g.transpose(logits)?;
    let spot = g.cross_entropy(lt, &targets)?;
    let sum = g.add(image, spot)?;
    Ok(g.scale(sum, T::from_f64(0.5)))
}

/// `(Loss_image + Loss_spot) / 2` on `h_patch · h_spotᵀ / τ`.
pub fn clip_loss_graph<T: Real>(
    g: &mut Graph<T>,
    h_patch: Var,
    h_spot: Var,
    tau: Temperature<T>,
) -> Result<Var> {
    if g.shape(h_patch) != g.shape(h_spot) {
        return Err(Error::shape(
            "clip_loss",
            format!("{:?} vs {:?}", g.shape(h_patch), g.shape(h_spot)),
        ));
    }
    let st = g.transpose(h_spot)?;
    let sim = g.matmul(h_patch, st)?;
    let logits = match tau {
        Temperature::Fixed(t) => {
            if t.is_nan() || t <= T::zero() {
                return Err(Error::invalid("temperature", "must be positive"));
            }
            g.scale(sim, T::one() / t)
        }
        Temperature::LogLearnable(log_tau) => {
            let neg = g.scale(log_tau, -T::one());
            let inv_tau = g.exp(neg);
            g.scale_by(sim, inv_tau)?
        }
    };
    symmetric_cross_entropy_graph(g, logits)
}

/// Loss value for two embedding matrices whose rows are matched pairs.
pub fn clip_loss<T: Real>(h_patch: &Tensor<T>, h_spot: &Tensor<T>, tau: T) -> Result<T> {
    let mut g = Graph::new();
    let a = g.input(h_patch.clone());
    let b = g.input(h_spot.clone());
    let l = clip_loss_graph(&mut g, a, b, Temperature::Fixed(tau))?;
    Ok(g.value(l).data()[0])
}

/// Loss value for precomputed (already temperature-scaled) logits.
pub fn clip_loss_from_logits<T: Real>(logits: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let out = symmetric_cross_entropy_graph(&mut g, l)?;
    Ok(g.value(out).data()[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    /// Optimise `ln τ` alongside the encoders.
    pub learnable_temperature: bool,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 40,
            learning_rate: 3e-4,
            temperature: 0.1,
            learnable_temperature: false,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size",
                format!("must be >= 2, got {}", self.batch_size),
            ));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::invalid(
                "temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta", "moment decays must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected first/second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: ParamSet<f32>,
    v: ParamSet<f32>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &ParamSet<f32>) -> Result<()> {
        self.step += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let step_size = (self.lr * libm::sqrt(c2) / c1) as f32;
        let eps_hat = (self.eps * libm::sqrt(c2)) as f32;
        for (name, grad) in grads.iter() {
            if !self.m.contains(name) {
                self.m.insert(name, Tensor::zeros(grad.value.shape()))?;
                self.v.insert(name, Tensor::zeros(grad.value.shape()))?;
            }
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            let w = params.get_mut(name)?.data_mut();
            for i in 0..w.len() {
                let gi = grad.value.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                w[i] -= step_size * m[i] / (libm::sqrtf(v[i]) + eps_hat);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_ids: Vec<String>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// One loss-and-gradient evaluation on a batch of a single slide.
pub fn batch_loss_and_grads(
    params: &ParamSet<f32>,
    enc: &EncoderConfig,
    train: &TrainConfig,
    slide: &Slide,
    batch: &[usize],
) -> Result<(f64, ParamSet<f32>)> {
    let expression = slide.expression.select(batch)?;
    let coords: Vec<[u32; 2]> = batch.iter().map(|&i| slide.coords[i]).collect();
    let image = slide.image.select(batch)?;
    let (value, grads) = graph::evaluate_with_gradients(params, |g, p| {
        let hp = encode_patches(g, p, enc, image.tensor().clone())?;
        let hs = encode_spots(g, p, enc, expression, &coords)?;
        let tau = if p.contains(names::LOG_TAU) {
            Temperature::LogLearnable(g.param(p, names::LOG_TAU)?)
        } else {
            Temperature::Fixed(train.temperature as f32)
        };
        clip_loss_graph(g, hp, hs, tau)
    })?;
    Ok((value.data()[0] as f64, grads))
}

/// Trains both encoders on the training slides of `dataset`.
pub fn fit(
    dataset: &ProcessedDataset,
    enc: &EncoderConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    fit_slides(&dataset.train_slides(), enc, train)
}

/// Trains both encoders on `slides`. Batches never mix slides; within an
/// epoch, the per-slide batches are visited in a seeded random order.
pub fn fit_slides(
    slides: &[&Slide],
    enc: &EncoderConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    train.validate()?;
    enc.validate()?;
    if slides.is_empty() {
        return Err(Error::invalid("dataset", "no training slides"));
    }
    for s in slides {
        enc.check_image(&s.image)?;
        if s.gene_num() != enc.hvg_num {
            return Err(Error::shape(
                "fit",
                format!(
                    "slide {} has {} genes, encoder expects {}",
                    s.slide_id,
                    s.gene_num(),
                    enc.hvg_num
                ),
            ));
        }
        if s.spot_num() < train.batch_size {
            return Err(Error::invalid(
                "batch_size",
                format!(
                    "{} exceeds the {} spots of slide {}",
                    train.batch_size,
                    s.spot_num(),
                    s.slide_id
                ),
            ));
        }
    }

    let mut params = init_params(enc, rng::derive_seed(train.seed, &[1]))?;
    if train.learnable_temperature {
        params.insert(
            names::LOG_TAU,
            Tensor::scalar(libm::log(train.temperature) as f32),
        )?;
    }
    let mut adam = Adam::new(train);
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut last_finite = f64::NAN;
    for epoch in 0..train.epochs {
        let mut plan = Vec::new();
        for (si, s) in slides.iter().enumerate() {
            let seed = rng::derive_seed(train.seed, &[3, epoch as u64, si as u64]);
            for b in epoch_batches(s.spot_num(), train.batch_size, seed)? {
                plan.push((si, b));
            }
        }
        plan.shuffle(&mut rng::stream(train.seed, &[4, epoch as u64]));

        let mut total = 0.0;
        for (step, (si, batch)) in plan.iter().enumerate() {
            let (loss, grads) = batch_loss_and_grads(&params, enc, train, slides[*si], batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    diagnostic: divergence_report(loss, last_finite, slides[*si], &params, &grads),
                });
            }
            last_finite = loss;
            total += loss;
            adam.update(&mut params, &grads)?;
        }
        let mean = total / plan.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model: Model {
            config: enc.clone(),
            params,
        },
        epoch_losses,
        train_ids: slides.iter().map(|s| s.slide_id.clone()).collect(),
    })
}

fn divergence_report(
    loss: f64,
    last_finite: f64,
    slide: &Slide,
    params: &ParamSet<f32>,
    grads: &ParamSet<f32>,
) -> String {
    let bad_params: Vec<&str> = params
        .iter()
        .filter(|(_, p)| !p.value.is_finite())
        .map(|(n, _)| n)
        .collect();
    let bad_grads: Vec<&str> = grads
        .iter()
        .filter(|(_, p)| !p.value.is_finite())
        .map(|(n, _)| n)
        .collect();
    format!(
        "loss {loss} on slide {} (last finite {last_finite}); non-finite params {bad_params:?}; non-finite grads {bad_grads:?}",
        slide.slide_id
    )
}

/// Reduced encoder used for finite-difference checks of the full loss.
pub fn grad_check_encoder() -> EncoderConfig {
    EncoderConfig {
        d_embed: 8,
        n_heads: 2,
        hvg_num: 8,
        coord_max: 16,
        conv_channels: alloc::vec![4, 4],
        proj_hidden: 8,
        patch_input: PatchInput::Pixels(PatchShape { c: 3, h: 8, w: 8 }),
        ..EncoderConfig::default()
    }
}

/// Result of [`clip_grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    /// Derived seed of the accepted draw.
    pub seed: u64,
    pub attempts: usize,
    /// Smallest `|x|` entering a ReLU at the checked point.
    pub relu_margin: Option<f64>,
}

/// Smallest accepted distance of any ReLU input from the kink.
pub const RELU_MARGIN: f64 = 1e-4;
const MAX_DRAWS: usize = 64;

/// Checks the gradient of the full contrastive loss (both encoders, fixed
/// or learnable temperature) against central differences in f64 on a
/// random batch of `n` pairs. Parameter/batch draws whose ReLU inputs come
/// closer than [`RELU_MARGIN`] to the kink are skipped.
pub fn clip_grad_check(
    enc: &EncoderConfig,
    n: usize,
    learnable_tau: bool,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<ModelGradCheck> {
    enc.validate()?;
    for attempt in 0..MAX_DRAWS {
        let s = rng::derive_seed(seed, &[6, attempt as u64]);
        let mut params: ParamSet<f64> = init_params(enc, s)?.cast();
        if learnable_tau {
            params.insert(names::LOG_TAU, Tensor::scalar(libm::log(0.7)))?;
        }
        let mut r = rng::stream(s, &[7]);
        let expression = Tensor::new(
            &[n, enc.hvg_num],
            (0..n * enc.hvg_num)
                .map(|_| r.gen_range(0.0..3.0))
                .collect(),
        )?;
        let coords: Vec<[u32; 2]> = (0..n)
            .map(|_| {
                [
                    r.gen_range(0..enc.coord_max as u32),
                    r.gen_range(0..enc.coord_max as u32),
                ]
            })
            .collect();
        let image_shape: Vec<usize> = match enc.patch_input {
            PatchInput::Pixels(p) => alloc::vec![n, p.c, p.h, p.w],
            PatchInput::Features { dim } => alloc::vec![n, dim],
        };
        let numel: usize = image_shape.iter().product();
        let image = Tensor::new(
            &image_shape,
            (0..numel).map(|_| r.gen_range(0.0..1.0)).collect(),
        )?;
        let build = |g: &mut Graph<f64>, p: &ParamSet<f64>| -> Result<Var> {
            let hp = encode_patches(g, p, enc, image.clone())?;
            let hs = encode_spots(g, p, enc, expression.clone(), &coords)?;
            let tau = if p.contains(names::LOG_TAU) {
                Temperature::LogLearnable(g.param(p, names::LOG_TAU)?)
            } else {
                Temperature::Fixed(1.0)
            };
            clip_loss_graph(g, hp, hs, tau)
        };
        let mut g = Graph::new();
        build(&mut g, &params)?;
        let margin = g.relu_margin();
        if margin.is_some_and(|m| m < RELU_MARGIN) {
            continue;
        }
        let report = grad_check(&params, eps, tol, build)?;
        return Ok(ModelGradCheck {
            report,
            seed: s,
            attempts: attempt + 1,
            relu_margin: margin,
        });
    }
    Err(Error::invalid(
        "seed",
        format!(
            "no draw within {MAX_DRAWS} attempts keeps ReLU inputs {RELU_MARGIN} from the kink"
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn similarity_examples() {
        let a = Tensor::new(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(similarity(&a, &a).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
        let v = Tensor::new(&[1, 2], vec![0.6f64, 0.8]).unwrap();
        assert!((similarity(&v, &v).unwrap().data()[0] - 1.0).abs() < 1e-15);
        let raw = Tensor::new(&[1, 2], vec![3.0f64, 4.0]).unwrap();
        assert!(similarity(&raw, &v).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let l = Tensor::<f64>::zeros(&[2, 2]);
        let loss = clip_loss_from_logits(&l).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(format!("{loss:.4}"), "0.6931");
    }

    #[test]
    fn dominant_diagonal_gives_near_zero_loss() {
        let l = Tensor::new(&[2, 2], vec![20.0f64, -20.0, -20.0, 20.0]).unwrap();
        let loss = clip_loss_from_logits(&l).unwrap();
        // ln(1 + e^-40) ≈ 4.2e-18
        assert!((0.0..1e-8).contains(&loss), "{loss}");
    }

    #[test]
    fn single_pair_is_rejected() {
        let h = Tensor::new(&[1, 2], vec![1.0f64, 0.0]).unwrap();
        assert!(clip_loss(&h, &h, 1.0).is_err());
        assert!(clip_loss(&h, &h, 0.0).is_err());
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[]);
        let mut v: Vec<f64> = (0..n * d).map(|_| rng::normal(&mut r)).collect();
        for row in v.chunks_mut(d) {
            let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Tensor::new(&[n, d], v).unwrap()
    }

    #[test]
    fn loss_is_symmetric_in_its_arguments() {
        for seed in 0..8 {
            let (a, b) = (unit_rows(6, 5, seed), unit_rows(6, 5, seed + 100));
            assert_eq!(
                clip_loss(&a, &b, 0.3).unwrap(),
                clip_loss(&b, &a, 0.3).unwrap()
            );
        }
    }

    #[test]
    fn scaling_logits_and_tau_together_changes_nothing() {
        let logits = similarity(&unit_rows(5, 4, 1), &unit_rows(5, 4, 2)).unwrap();
        for (tau, c) in [(0.5, 2.0), (0.1, 4.0), (1.0, 0.25)] {
            let base = clip_loss_from_logits(&logits.map(|v| v / tau)).unwrap();
            let scaled = clip_loss_from_logits(&logits.map(|v| (v * c) / (tau * c))).unwrap();
            assert_eq!(base, scaled);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[2], vec![1.0f32, -1.0]).unwrap())
            .unwrap();
        let mut g = ParamSet::new();
        g.insert("w", Tensor::new(&[2], vec![0.5f32, -3.0]).unwrap())
            .unwrap();
        let mut adam = Adam::new(&TrainConfig::default());
        adam.update(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 3e-4)).abs() < 1e-6, "{w:?}");
        assert!((w[1] - (-1.0 + 3e-4)).abs() < 1e-6, "{w:?}");
    }
}
