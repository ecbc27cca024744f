//! Synthetic slides with a planted image ↔ expression correspondence.
//!
//! Each spot carries a latent program `u ∈ [0,1]^L`: the centre of its
//! spatial domain plus a smooth spatial field and a little jitter. Counts are
//! log-linear in `u`. The patch is rendered from texture parameters
//! `t = s·u + (1 − s)·v` with `v` fresh uniform noise, so the signal strength
//! `s` moves the image from fully informative (`s = 1`) to independent of
//! expression (`s = 0`). The first `C` latent coordinates set per-channel
//! brightness; the remaining ones set the amplitude of oriented gratings.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng;

use crate::data::{PatchShape, Slide, SlideImage};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageKind {
    Patches(PatchShape),
    Features { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub slides: usize,
    pub spots_per_slide: usize,
    pub gene_num: usize,
    pub domains: usize,
    /// Image/expression coupling `s ∈ [0, 1]`.
    pub signal: f64,
    pub image: ImageKind,
    pub coord_max: u32,
    pub latent_dim: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            slides: 4,
            spots_per_slide: 128,
            gene_num: 96,
            domains: 4,
            signal: 1.0,
            image: ImageKind::Patches(PatchShape { c: 3, h: 32, w: 32 }),
            coord_max: 256,
            latent_dim: 4,
        }
    }
}

const FIELD_AMPLITUDE: f64 = 0.12;
const LATENT_JITTER: f64 = 0.03;
const COUNT_NOISE: f64 = 0.1;
const BRIGHTNESS_GAIN: f64 = 0.3;
const GRATING_GAIN: f64 = 0.25;
const GRATING_PERIOD: f64 = 6.0;
const PIXEL_NOISE: f64 = 0.03;
const FEATURE_NOISE: f64 = 0.03;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::invalid(name, reason));
        if self.slides == 0 {
            return bad("slides", "need at least one slide".into());
        }
        if self.spots_per_slide == 0 {
            return bad("spots_per_slide", "need at least one spot".into());
        }
        if self.gene_num == 0 {
            return bad("gene_num", "need at least one gene".into());
        }
        if self.domains == 0 || self.domains > u16::MAX as usize {
            return bad(
                "domains",
                format!("must be in 1..=65535, got {}", self.domains),
            );
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return bad("signal", format!("must lie in [0, 1], got {}", self.signal));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be positive".into());
        }
        match self.image {
            ImageKind::Patches(p) if p.numel() == 0 => return bad("patch", "empty patch".into()),
            ImageKind::Features { dim: 0 } => return bad("feat_dim", "must be positive".into()),
            _ => {}
        }
        let side = grid_side(self.spots_per_slide);
        if (self.coord_max as usize) < side + 1 {
            return bad(
                "coord_max",
                format!("{} too small for a {side}-wide spot grid", self.coord_max),
            );
        }
        Ok(())
    }
}

fn grid_side(spots: usize) -> usize {
    let mut side = 1;
    while side * side < spots {
        side += 1;
    }
    side
}

struct Programs {
    centers: Vec<Vec<f64>>,
    baseline: Vec<f64>,
    loadings: Vec<Vec<f64>>,
    feature_map: Vec<Vec<f64>>,
}

/// Generates `cfg.slides` slides; identical `(cfg, seed)` gives identical
/// output.
pub fn synth_generate(cfg: &GenConfig, seed: u64) -> Result<Vec<Slide>> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, &[0]);
    let l = cfg.latent_dim;
    let centers = (0..cfg.domains)
        .map(|_| (0..l).map(|_| rng.gen_range(0.15..0.85)).collect())
        .collect();
    let baseline = (0..cfg.gene_num)
        .map(|_| libm::log(rng.gen_range(10.0..100.0)))
        .collect();
    let loadings = (0..cfg.gene_num)
        .map(|_| {
            let weight = rng.gen_range(0.1..1.0);
            (0..l)
                .map(|_| 2.4 * weight * rng::normal(&mut rng))
                .collect()
        })
        .collect();
    let feature_map = match cfg.image {
        ImageKind::Features { dim } => (0..dim)
            .map(|_| (0..l).map(|_| rng::normal(&mut rng)).collect())
            .collect(),
        ImageKind::Patches(_) => Vec::new(),
    };
    let programs = Programs {
        centers,
        baseline,
        loadings,
        feature_map,
    };
    let gene_names: Vec<String> = (0..cfg.gene_num).map(|g| format!("gene_{g:04}")).collect();
    (0..cfg.slides)
        .map(|s| {
            generate_slide(
                cfg,
                &programs,
                &gene_names,
                s,
                &mut rng::stream(seed, &[1, s as u64]),
            )
        })
        .collect()
}

fn generate_slide(
    cfg: &GenConfig,
    programs: &Programs,
    gene_names: &[String],
    index: usize,
    rng: &mut StreamRng,
) -> Result<Slide> {
    let n = cfg.spots_per_slide;
    let l = cfg.latent_dim;
    let side = grid_side(n);
    let coord_max = cfg.coord_max as usize;
    let spacing = (coord_max / (side + 1)).max(1);
    let extent = (side - 1) * spacing;
    let ox = rng.gen_range(0..coord_max - extent);
    let oy = rng.gen_range(0..coord_max - extent);
    let coords: Vec<[u32; 2]> = (0..n)
        .map(|i| {
            [
                (ox + (i % side) * spacing) as u32,
                (oy + (i / side) * spacing) as u32,
            ]
        })
        .collect();

    let seeds: Vec<[f64; 2]> = (0..cfg.domains)
        .map(|_| {
            [
                ox as f64 + rng.gen::<f64>() * extent as f64,
                oy as f64 + rng.gen::<f64>() * extent as f64,
            ]
        })
        .collect();
    let scale = extent.max(1) as f64;
    let waves: Vec<[f64; 3]> = (0..l)
        .map(|_| {
            [
                rng.gen_range(0.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(0.0..TAU),
            ]
        })
        .collect();

    let mut labels = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for c in &coords {
        let (x, y) = (c[0] as f64, c[1] as f64);
        let domain = nearest(&seeds, x, y);
        labels.push(domain as u16);
        let u: Vec<f64> = (0..l)
            .map(|k| {
                let [a, b, phase] = waves[k];
                let field = libm::sin(TAU * (a * x + b * y) / scale + phase);
                let v = programs.centers[domain][k]
                    + FIELD_AMPLITUDE * field
                    + LATENT_JITTER * rng::normal(rng);
                v.clamp(0.0, 1.0)
            })
            .collect();
        latent.push(u);
    }

    let mut expression = Vec::with_capacity(n * cfg.gene_num);
    for u in &latent {
        for g in 0..cfg.gene_num {
            let drive: f64 = programs.loadings[g]
                .iter()
                .zip(u)
                .map(|(a, x)| a * (x - 0.5))
                .sum();
            let rate = libm::exp(programs.baseline[g] + drive + COUNT_NOISE * rng::normal(rng));
            expression.push(libm::round(rate) as f32);
        }
    }

    let texture: Vec<Vec<f64>> = latent
        .iter()
        .map(|u| {
            u.iter()
                .map(|&x| {
                    let noise: f64 = rng.gen();
                    cfg.signal * x + (1.0 - cfg.signal) * noise
                })
                .collect()
        })
        .collect();

    let image = match cfg.image {
        ImageKind::Patches(shape) => {
            let mut data = Vec::with_capacity(n * shape.numel());
            for t in &texture {
                render_patch(shape, t, rng, &mut data);
            }
            SlideImage::Patches(Tensor::new(&[n, shape.c, shape.h, shape.w], data)?)
        }
        ImageKind::Features { dim } => {
            let mut data = Vec::with_capacity(n * dim);
            for t in &texture {
                for row in &programs.feature_map {
                    let v: f64 = row.iter().zip(t).map(|(a, x)| a * x).sum();
                    data.push((v + FEATURE_NOISE * rng::normal(rng)) as f32);
                }
            }
            SlideImage::Features(Tensor::new(&[n, dim], data)?)
        }
    };

    let slide = Slide {
        slide_id: format!("slide_{index:02}"),
        gene_names: gene_names.to_vec(),
        expression: Tensor::new(&[n, cfg.gene_num], expression)?,
        coords,
        coord_max: cfg.coord_max,
        image,
        labels: Some(labels),
    };
    slide.validate()?;
    Ok(slide)
}

fn nearest(seeds: &[[f64; 2]], x: f64, y: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, s) in seeds.iter().enumerate() {
        let d = (s[0] - x) * (s[0] - x) + (s[1] - y) * (s[1] - y);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn render_patch(shape: PatchShape, t: &[f64], rng: &mut StreamRng, out: &mut Vec<f32>) {
    let gratings: Vec<(f64, f64, f64)> = t
        .iter()
        .enumerate()
        .skip(shape.c)
        .map(|(k, &amp)| {
            let angle = PI * (k - shape.c) as f64 / (t.len() - shape.c + 1) as f64;
            (libm::cos(angle), libm::sin(angle), GRATING_GAIN * amp)
        })
        .collect();
    for c in 0..shape.c {
        let brightness = t.get(c).map_or(0.0, |&x| BRIGHTNESS_GAIN * (x - 0.5));
        for y in 0..shape.h {
            for x in 0..shape.w {
                let mut v = 0.5 + brightness;
                for &(cx, cy, amp) in &gratings {
                    v += amp * libm::sin(TAU * (cx * x as f64 + cy * y as f64) / GRATING_PERIOD);
                }
                v += PIXEL_NOISE * rng::normal(rng);
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            slides: 2,
            spots_per_slide: 20,
            gene_num: 12,
            domains: 3,
            image: ImageKind::Patches(PatchShape { c: 3, h: 8, w: 8 }),
            coord_max: 64,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&small(), 7).unwrap();
        let b = synth_generate(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn output_is_valid() {
        for s in synth_generate(&small(), 1).unwrap() {
            s.validate().unwrap();
            assert_eq!(s.spot_num(), 20);
            assert!(s.labels.as_ref().unwrap().iter().all(|&l| l < 3));
        }
        let cfg = GenConfig {
            image: ImageKind::Features { dim: 5 },
            ..small()
        };
        let slides = synth_generate(&cfg, 1).unwrap();
        assert_eq!(slides[0].image.feat_dim(), Some(5));
    }

    #[test]
    fn rejects_invalid_configs() {
        for cfg in [
            GenConfig {
                spots_per_slide: 0,
                ..small()
            },
            GenConfig {
                signal: 1.5,
                ..small()
            },
            GenConfig {
                signal: -0.1,
                ..small()
            },
            GenConfig {
                slides: 0,
                ..small()
            },
            GenConfig {
                coord_max: 3,
                ..small()
            },
        ] {
            assert!(synth_generate(&cfg, 0).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_signal_keeps_expression() {
        // the seed drives expression identically regardless of s
        let a = synth_generate(&small(), 3).unwrap();
        let b = synth_generate(
            &GenConfig {
                signal: 0.0,
                ..small()
            },
            3,
        )
        .unwrap();
        assert_eq!(a[0].expression, b[0].expression);
        assert_ne!(a[0].image, b[0].image);
    }
}
