//! Patch and spot encoders with their projection heads.
//!
//! Patch path: a stack of stride-2 blocks, each emitting
//! `concat(avgpool2(x), relu(conv3x3_s2(x)))` so earlier channels are carried
//! forward, followed by a global average pool. Precomputed features pass
//! through unchanged.
//!
//! Spot path: `project(mhsa(expression + S_x + S_y))`, where `S_x`/`S_y` are
//! rows of learnable per-axis positional tables selected by the spot
//! coordinates (a one-hot product inside the graph).
//!
//! Both heads are `linear → GELU → linear → row L2-normalise`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{PatchShape, SlideImage};
use crate::graph::{self, Graph, Var};
use crate::params::{uniform_fan_in, ParamSet};
use crate::rng;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Added to the row norm before projecting onto the unit sphere.
pub const NORM_EPS: f64 = 1e-8;

/// What the patch encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchInput {
    Pixels(PatchShape),
    Features { dim: usize },
}

/// Backbone applied to pixel patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchBackbone {
    Conv,
    /// Flattened pixels go straight to the projection head.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d_embed: usize,
    pub n_heads: usize,
    pub hvg_num: usize,
    /// Positional table size per axis; coordinates must be below it.
    pub coord_max: usize,
    pub conv_channels: Vec<usize>,
    pub proj_hidden: usize,
    pub mhsa_layers: usize,
    pub positional: bool,
    pub patch_input: PatchInput,
    pub patch_backbone: PatchBackbone,
    pub freeze_patch_encoder: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_embed: 256,
            n_heads: 4,
            hvg_num: 64,
            coord_max: 256,
            conv_channels: vec![8, 8, 8],
            proj_hidden: 256,
            mhsa_layers: 1,
            positional: true,
            patch_input: PatchInput::Pixels(PatchShape { c: 3, h: 32, w: 32 }),
            patch_backbone: PatchBackbone::Conv,
            freeze_patch_encoder: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::invalid(name, reason));
        if self.d_embed == 0 || self.proj_hidden == 0 || self.hvg_num == 0 {
            return bad("d_embed", "dimensions must be positive".into());
        }
        if self.n_heads == 0 || !self.hvg_num.is_multiple_of(self.n_heads) {
            return bad(
                "n_heads",
                format!(
                    "hvg_num {} not divisible by {} heads",
                    self.hvg_num, self.n_heads
                ),
            );
        }
        if self.coord_max == 0 {
            return bad("coord_max", "must be positive".into());
        }
        match self.patch_input {
            PatchInput::Pixels(p) => {
                if p.numel() == 0 {
                    return bad("patch", "empty patch shape".into());
                }
                if self.patch_backbone == PatchBackbone::Conv {
                    let factor = 1usize << self.conv_channels.len();
                    if p.h % factor != 0 || p.w % factor != 0 {
                        return bad(
                            "patch",
                            format!(
                                "{}x{} not divisible by 2^{} conv blocks",
                                p.h,
                                p.w,
                                self.conv_channels.len()
                            ),
                        );
                    }
                    if self.conv_channels.contains(&0) {
                        return bad("conv_channels", "zero-width block".into());
                    }
                }
            }
            PatchInput::Features { dim: 0 } => return bad("feat_dim", "must be positive".into()),
            PatchInput::Features { .. } => {}
        }
        Ok(())
    }

    /// Width of `z_patch`.
    pub fn feat_dim(&self) -> usize {
        match (self.patch_input, self.patch_backbone) {
            (PatchInput::Features { dim }, _) => dim,
            (PatchInput::Pixels(p), PatchBackbone::Identity) => p.numel(),
            (PatchInput::Pixels(p), PatchBackbone::Conv) => {
                p.c + self.conv_channels.iter().sum::<usize>()
            }
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hvg_num / self.n_heads
    }

    fn uses_conv(&self) -> bool {
        matches!(self.patch_input, PatchInput::Pixels(_))
            && self.patch_backbone == PatchBackbone::Conv
    }

    /// Checks that `image` matches the configured patch input.
    pub fn check_image(&self, image: &SlideImage) -> Result<()> {
        let ok = match (self.patch_input, image) {
            (PatchInput::Pixels(p), SlideImage::Patches(_)) => image.patch_shape() == Some(p),
            (PatchInput::Features { dim }, SlideImage::Features(_)) => {
                image.feat_dim() == Some(dim)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "encode_patch",
                format!(
                    "image {:?} does not match {:?}",
                    image.tensor().shape(),
                    self.patch_input
                ),
            ))
        }
    }
}

pub mod names {
    use alloc::format;
    use alloc::string::String;

    pub fn conv(block: usize) -> String {
        format!("patch.conv{block}.weight")
    }
    pub const POS_X: &str = "spot.pos.wx";
    pub const POS_Y: &str = "spot.pos.wy";
    pub fn query(layer: usize, head: usize) -> String {
        format!("spot.mhsa{layer}.wq{head}")
    }
    pub fn key(layer: usize, head: usize) -> String {
        format!("spot.mhsa{layer}.wk{head}")
    }
    pub fn value(layer: usize, head: usize) -> String {
        format!("spot.mhsa{layer}.wv{head}")
    }
    pub fn out(layer: usize) -> String {
        format!("spot.mhsa{layer}.wo")
    }
    pub const PATCH_HEAD: &str = "patch.proj";
    pub const SPOT_HEAD: &str = "spot.proj";
    pub const LOG_TAU: &str = "log_tau";
}

/// Seeded initial parameters: uniform(±1/√fan_in) weights, zero biases.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, &[2]);
    let mut p = ParamSet::new();
    let freeze = cfg.freeze_patch_encoder;
    if let (true, PatchInput::Pixels(shape)) = (cfg.uses_conv(), cfg.patch_input) {
        let mut cin = shape.c;
        for (b, &cout) in cfg.conv_channels.iter().enumerate() {
            let w = uniform_fan_in(&[cout, cin, 3, 3], cin * 9, &mut rng);
            if freeze {
                p.insert_frozen(names::conv(b), w)?;
            } else {
                p.insert(names::conv(b), w)?;
            }
            cin += cout;
        }
    }
    insert_head(&mut p, names::PATCH_HEAD, cfg.feat_dim(), cfg, &mut rng)?;

    let (n, h) = (cfg.coord_max, cfg.hvg_num);
    if cfg.positional {
        p.insert(names::POS_X, uniform_fan_in(&[n, h], n, &mut rng))?;
        p.insert(names::POS_Y, uniform_fan_in(&[n, h], n, &mut rng))?;
    }
    for layer in 0..cfg.mhsa_layers {
        for head in 0..cfg.n_heads {
            p.insert(
                names::query(layer, head),
                uniform_fan_in(&[h, cfg.head_dim()], h, &mut rng),
            )?;
            p.insert(
                names::key(layer, head),
                uniform_fan_in(&[h, cfg.head_dim()], h, &mut rng),
            )?;
            p.insert(
                names::value(layer, head),
                uniform_fan_in(&[h, cfg.head_dim()], h, &mut rng),
            )?;
        }
        p.insert(names::out(layer), uniform_fan_in(&[h, h], h, &mut rng))?;
    }
    insert_head(&mut p, names::SPOT_HEAD, h, cfg, &mut rng)?;
    Ok(p)
}

fn insert_head(
    p: &mut ParamSet<f32>,
    prefix: &str,
    input: usize,
    cfg: &EncoderConfig,
    rng: &mut rng::StreamRng,
) -> Result<()> {
    let hidden = cfg.proj_hidden;
    p.insert(
        format!("{prefix}.w1"),
        uniform_fan_in(&[input, hidden], input, rng),
    )?;
    p.insert(format!("{prefix}.b1"), Tensor::zeros(&[hidden]))?;
    p.insert(
        format!("{prefix}.w2"),
        uniform_fan_in(&[hidden, cfg.d_embed], hidden, rng),
    )?;
    p.insert(format!("{prefix}.b2"), Tensor::zeros(&[cfg.d_embed]))?;
    Ok(())
}

/// `z_patch` for a batch: `[B, C, H, W]` pixels or `[B, F]` features → `[B, feat_dim]`.
pub fn patch_features<T: Real>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    cfg: &EncoderConfig,
    input: Tensor<T>,
) -> Result<Var> {
    match cfg.patch_input {
        PatchInput::Features { dim } => {
            if input.rank() != 2 || input.shape()[1] != dim {
                return Err(Error::shape(
                    "encode_patch",
                    format!("features {:?}, expected [B, {dim}]", input.shape()),
                ));
            }
            Ok(g.input(input))
        }
        PatchInput::Pixels(shape) => {
            let s = input.shape().to_vec();
            if s.len() != 4 || s[1..] != [shape.c, shape.h, shape.w] {
                return Err(Error::shape(
                    "encode_patch",
                    format!(
                        "patches {s:?}, expected [B, {}, {}, {}]",
                        shape.c, shape.h, shape.w
                    ),
                ));
            }
            if cfg.patch_backbone == PatchBackbone::Identity {
                return Ok(g.input(input.reshape(&[s[0], shape.numel()])?));
            }
            let mut x = g.input(input);
            let mut cin = shape.c;
            for (b, &cout) in cfg.conv_channels.iter().enumerate() {
                let w = g.param(p, &names::conv(b))?;
                let conv = g.conv2d(x, w, 2, 1)?;
                let act = g.relu(conv);
                let pool_kernel = g.input(avg_pool_kernel(cin));
                let pooled = g.conv2d(x, pool_kernel, 2, 0)?;
                x = g.concat(&[pooled, act], 1)?;
                cin += cout;
            }
            g.mean_from(x, 2)
        }
    }
}

/// Depthwise 2×2 averaging expressed as a dense `[C, C, 2, 2]` kernel.
fn avg_pool_kernel<T: Real>(c: usize) -> Tensor<T> {
    let mut w = Tensor::zeros(&[c, c, 2, 2]);
    let quarter = T::from_f64(0.25);
    for ch in 0..c {
        let base = (ch * c + ch) * 4;
        w.data_mut()[base..base + 4].fill(quarter);
    }
    w
}

/// `linear → GELU → linear → L2-normalise rows`.
pub fn project<T: Real>(g: &mut Graph<T>, p: &ParamSet<T>, prefix: &str, z: Var) -> Result<Var> {
    let w1 = g.param(p, &format!("{prefix}.w1"))?;
    let b1 = g.param(p, &format!("{prefix}.b1"))?;
    let w2 = g.param(p, &format!("{prefix}.w2"))?;
    let b2 = g.param(p, &format!("{prefix}.b2"))?;
    let h = g.matmul(z, w1)?;
    let h = g.add(h, b1)?;
    let h = g.gelu(h);
    let h = g.matmul(h, w2)?;
    let h = g.add(h, b2)?;
    g.l2_normalize_rows(h, T::from_f64(NORM_EPS))
}

/// `[N × n]` one-hot rows for one coordinate axis.
pub fn one_hot<T: Real>(coords: &[u32], n: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[coords.len().max(1), n]);
    for (i, &c) in coords.iter().enumerate() {
        if c as usize >= n {
            return Err(Error::invalid(
                "coords",
                format!("spot {i}: coordinate {c} >= table size {n}"),
            ));
        }
        t.data_mut()[i * n + c as usize] = T::one();
    }
    Ok(t)
}

fn split_axes(coords: &[[u32; 2]]) -> (Vec<u32>, Vec<u32>) {
    coords.iter().map(|c| (c[0], c[1])).unzip()
}

/// `(S_x, S_y)` as one-hot products with the positional tables, inside the graph.
pub fn positional_encode_graph<T: Real>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    cfg: &EncoderConfig,
    coords: &[[u32; 2]],
) -> Result<(Var, Var)> {
    let (xs, ys) = split_axes(coords);
    let px = g.input(one_hot(&xs, cfg.coord_max)?);
    let py = g.input(one_hot(&ys, cfg.coord_max)?);
    let wx = g.param(p, names::POS_X)?;
    let wy = g.param(p, names::POS_Y)?;
    Ok((g.matmul(px, wx)?, g.matmul(py, wy)?))
}

/// `(S_x, S_y)` by direct row lookup in the tables.
pub fn positional_encode<T: Real>(
    p: &ParamSet<T>,
    coords: &[[u32; 2]],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (xs, ys) = split_axes(coords);
    let lookup = |table: &Tensor<T>, axis: &[u32]| -> Result<Tensor<T>> {
        let idx: Vec<usize> = axis.iter().map(|&c| c as usize).collect();
        if let Some((i, c)) = idx.iter().enumerate().find(|(_, &c)| c >= table.shape()[0]) {
            return Err(Error::invalid(
                "coords",
                format!(
                    "spot {i}: coordinate {c} >= table size {}",
                    table.shape()[0]
                ),
            ));
        }
        table.select(&idx)
    };
    Ok((
        lookup(p.get(names::POS_X)?, &xs)?,
        lookup(p.get(names::POS_Y)?, &ys)?,
    ))
}

/// Output of one self-attention layer plus its per-head attention maps.
pub struct MhsaOutput {
    pub out: Var,
    pub attention: Vec<Var>,
}

/// Multi-head self-attention with `Q = K = V = x`:
/// `concat_i(softmax(x Wq_i (x Wk_i)ᵀ / √d_k) x Wv_i) · W_0`.
pub fn mhsa<T: Real>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    cfg: &EncoderConfig,
    layer: usize,
    x: Var,
) -> Result<MhsaOutput> {
    let scale = T::one() / T::from_f64(cfg.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut attention = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let wq = g.param(p, &names::query(layer, h))?;
        let wk = g.param(p, &names::key(layer, h))?;
        let wv = g.param(p, &names::value(layer, h))?;
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.row_softmax(scores)?;
        heads.push(g.matmul(attn, v)?);
        attention.push(attn);
    }
    let cat = g.concat(&heads, 1)?;
    let wo = g.param(p, &names::out(layer))?;
    Ok(MhsaOutput {
        out: g.matmul(cat, wo)?,
        attention,
    })
}

/// Spot embeddings `[N × d_embed]` for one slide's spots.
pub fn encode_spots<T: Real>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    cfg: &EncoderConfig,
    expression: Tensor<T>,
    coords: &[[u32; 2]],
) -> Result<Var> {
    let (n, genes) = expression.dims2()?;
    if genes != cfg.hvg_num || coords.len() != n {
        return Err(Error::shape(
            "encode_spots",
            format!(
                "expression {:?} with {} coords, expected [N, {}]",
                expression.shape(),
                coords.len(),
                cfg.hvg_num
            ),
        ));
    }
    let mut x = g.input(expression);
    if cfg.positional {
        let (sx, sy) = positional_encode_graph(g, p, cfg, coords)?;
        x = g.add(x, sx)?;
        x = g.add(x, sy)?;
    }
    for layer in 0..cfg.mhsa_layers {
        x = mhsa(g, p, cfg, layer, x)?.out;
    }
    project(g, p, names::SPOT_HEAD, x)
}

/// Patch embeddings `[B × d_embed]`.
pub fn encode_patches<T: Real>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    cfg: &EncoderConfig,
    input: Tensor<T>,
) -> Result<Var> {
    let z = patch_features(g, p, cfg, input)?;
    project(g, p, names::PATCH_HEAD, z)
}

/// Encoder configuration plus trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ParamSet<f32>,
}

/// Patches encoded per forward pass in [`Model::embed_image`].
const PATCH_CHUNK: usize = 64;

impl Model {
    pub fn new(config: EncoderConfig, params: ParamSet<f32>) -> Result<Self> {
        config.validate()?;
        let expected = init_params(&config, 0)?;
        for (name, param) in expected.iter() {
            let got = params.get(name)?;
            if got.shape() != param.value.shape() {
                return Err(Error::shape(
                    "model",
                    format!(
                        "{name}: {:?}, expected {:?}",
                        got.shape(),
                        param.value.shape()
                    ),
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Embeds all spots of a slide jointly (one attention context).
    pub fn embed_spots(
        &self,
        expression: &Tensor<f32>,
        coords: &[[u32; 2]],
    ) -> Result<Tensor<f32>> {
        graph::evaluate(&self.params, |g, p| {
            encode_spots(g, p, &self.config, expression.clone(), coords)
        })
    }

    /// Embeds every patch (or feature row) of `image`.
    pub fn embed_image(&self, image: &SlideImage) -> Result<Tensor<f32>> {
        self.config.check_image(image)?;
        let t = image.tensor();
        let total = t.shape()[0];
        let mut rows = Vec::with_capacity(total * self.config.d_embed);
        let mut start = 0;
        while start < total {
            let end = (start + PATCH_CHUNK).min(total);
            let idx: Vec<usize> = (start..end).collect();
            let batch = t.select(&idx)?;
            let h = graph::evaluate(&self.params, |g, p| {
                encode_patches(g, p, &self.config, batch)
            })?;
            rows.extend_from_slice(h.data());
            start = end;
        }
        Tensor::new(&[total, self.config.d_embed], rows)
    }
}
