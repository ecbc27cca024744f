//! Retrieval index and expression prediction.
//!
//! A test patch is embedded, the `k` stored spot embeddings with the highest
//! cosine similarity are retrieved, and their observed expressions are
//! averaged with weights proportional to the inverse squared Euclidean
//! distance in the embedding space.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::contrastive::UNIT_NORM_TOL;
use crate::data::Slide;
use crate::encoders::Model;
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Default number of retrieved neighbours.
pub const DEFAULT_K: usize = 50;

/// Distances below this return the neighbour's expression unchanged.
pub const PASSTHROUGH_EPS: f64 = 1e-8;

/// Where an index row came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub slide_id: String,
    pub spot: usize,
}

/// Flat store of reference spot embeddings and their observed expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    embeddings: Tensor<f32>,
    expressions: Tensor<f32>,
    provenance: Vec<Provenance>,
}

impl RetrievalIndex {
    pub fn new(
        embeddings: Tensor<f32>,
        expressions: Tensor<f32>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let (n, _) = embeddings.dims2()?;
        let (m, _) = expressions.dims2()?;
        if n != m || n != provenance.len() {
            return Err(Error::shape(
                "retrieval_index",
                format!(
                    "{n} embeddings, {m} expressions, {} provenance rows",
                    provenance.len()
                ),
            ));
        }
        for (i, norm) in embeddings.row_norms()?.into_iter().enumerate() {
            if (f64::from(norm) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(
                    "embeddings",
                    format!("row {i} has norm {norm}"),
                ));
            }
        }
        Ok(Self {
            embeddings,
            expressions,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn d_embed(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn gene_num(&self) -> usize {
        self.expressions.shape()[1]
    }

    pub fn embeddings(&self) -> &Tensor<f32> {
        &self.embeddings
    }

    pub fn expressions(&self) -> &Tensor<f32> {
        &self.expressions
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn contains_slide(&self, slide_id: &str) -> bool {
        self.provenance.iter().any(|p| p.slide_id == slide_id)
    }

    /// Distinct slide ids in row order.
    pub fn slide_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for p in &self.provenance {
            if ids.last() != Some(&p.slide_id.as_str()) && !ids.contains(&p.slide_id.as_str()) {
                ids.push(&p.slide_id);
            }
        }
        ids
    }
}

/// Encodes every spot of every reference slide (each slide as one attention
/// context) and stores it with its observed expression.
pub fn build_index(model: &Model, slides: &[&Slide]) -> Result<RetrievalIndex> {
    if slides.is_empty() {
        return Err(Error::invalid("slides", "no reference slides"));
    }
    let g = model.config.hvg_num;
    let d = model.config.d_embed;
    let mut emb = Vec::new();
    let mut expr = Vec::new();
    let mut provenance = Vec::new();
    for s in slides {
        if s.gene_num() != g {
            return Err(Error::shape(
                "build_index",
                format!(
                    "slide {} has {} genes, model expects {g}",
                    s.slide_id,
                    s.gene_num()
                ),
            ));
        }
        let h = model.embed_spots(&s.expression, &s.coords)?;
        emb.extend_from_slice(h.data());
        expr.extend_from_slice(s.expression.data());
        provenance.extend((0..s.spot_num()).map(|spot| Provenance {
            slide_id: s.slide_id.clone(),
            spot,
        }));
    }
    let n = provenance.len();
    RetrievalIndex::new(
        Tensor::new(&[n, d], emb)?,
        Tensor::new(&[n, g], expr)?,
        provenance,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub cosine: f64,
    pub distance: f64,
}

/// The `k` rows most cosine-similar to `query`, best first; equal cosines
/// keep the lower row id first.
pub fn query_topk(index: &RetrievalIndex, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must lie in 1..={n}, got {k}")));
    }
    if query.len() != index.d_embed() {
        return Err(Error::shape(
            "query_topk",
            format!("query has {} dims, index {}", query.len(), index.d_embed()),
        ));
    }
    let norm = libm::sqrt(
        query
            .iter()
            .map(|&q| f64::from(q) * f64::from(q))
            .sum::<f64>(),
    );
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid("query", format!("norm {norm} is not 1")));
    }
    let mut all: Vec<Neighbor> = (0..n)
        .map(|row| {
            let e = index.embeddings.row(row);
            let mut dot = 0.0;
            let mut sq = 0.0;
            for (&a, &b) in query.iter().zip(e) {
                let (a, b) = (f64::from(a), f64::from(b));
                dot += a * b;
                sq += (a - b) * (a - b);
            }
            Neighbor {
                row,
                cosine: dot,
                distance: libm::sqrt(sq),
            }
        })
        .collect();
    all.sort_by(|a, b| match b.cosine.total_cmp(&a.cosine) {
        Ordering::Equal => a.row.cmp(&b.row),
        o => o,
    });
    all.truncate(k);
    Ok(all)
}

/// Normalised inverse-square weights. A neighbour closer than
/// [`PASSTHROUGH_EPS`] takes all the weight (first such neighbour wins).
pub fn weights(distances: &[f64]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::invalid("neighbors", "empty"));
    }
    if let Some(hit) = distances.iter().position(|&d| d < PASSTHROUGH_EPS) {
        let mut w = alloc::vec![0.0; distances.len()];
        w[hit] = 1.0;
        return Ok(w);
    }
    let raw: Vec<f64> = distances.iter().map(|&d| 1.0 / (d * d)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted mean of the neighbours' stored expressions.
pub fn aggregate(neighbors: &[Neighbor], index: &RetrievalIndex) -> Result<Vec<f64>> {
    let dist: Vec<f64> = neighbors.iter().map(|n| n.distance).collect();
    aggregate_rows(&dist, |j| index.expressions.row(neighbors[j].row))
}

/// `Σ_j d_j⁻² e_j / Σ_j d_j⁻²` with exact passthrough for `d < ε`.
pub fn aggregate_rows<'a>(distances: &[f64], row: impl Fn(usize) -> &'a [f32]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::invalid("neighbors", "empty"));
    }
    if let Some(hit) = distances.iter().position(|&d| d < PASSTHROUGH_EPS) {
        return Ok(row(hit).iter().map(|&v| f64::from(v)).collect());
    }
    if distances.len() == 1 {
        return Ok(row(0).iter().map(|&v| f64::from(v)).collect());
    }
    let mut acc = alloc::vec![0.0; row(0).len()];
    let mut total = 0.0;
    for (j, &d) in distances.iter().enumerate() {
        let w = 1.0 / (d * d);
        total += w;
        for (a, &v) in acc.iter_mut().zip(row(j)) {
            *a += w * f64::from(v);
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(acc)
}

/// Predicts `[spot_num × hvg_num]` for a slide that is not in the index.
pub fn predict_slide(
    model: &Model,
    index: &RetrievalIndex,
    slide: &Slide,
    k: usize,
) -> Result<Tensor<f32>> {
    if index.contains_slide(&slide.slide_id) {
        return Err(Error::Leakage(format!(
            "slide {} is part of the reference index",
            slide.slide_id
        )));
    }
    if model.config.d_embed != index.d_embed() {
        return Err(Error::shape(
            "predict_slide",
            format!(
                "model embeds to {}, index holds {}",
                model.config.d_embed,
                index.d_embed()
            ),
        ));
    }
    let h = model.embed_image(&slide.image)?;
    predict_from_embeddings(index, &h, k)
}

/// Retrieval and aggregation for precomputed query embeddings.
pub fn predict_from_embeddings(
    index: &RetrievalIndex,
    queries: &Tensor<f32>,
    k: usize,
) -> Result<Tensor<f32>> {
    let (s, _) = queries.dims2()?;
    let mut out = Vec::with_capacity(s * index.gene_num());
    for i in 0..s {
        let nb = query_topk(index, queries.row(i), k)?;
        out.extend(aggregate(&nb, index)?.into_iter().map(|v| v as f32));
    }
    Tensor::new(&[s, index.gene_num()], out)
}

/// Baseline: every spot predicted as the mean reference expression.
pub fn train_mean_prediction(index: &RetrievalIndex, spot_num: usize) -> Result<Tensor<f32>> {
    let g = index.gene_num();
    let mut mean = alloc::vec![0.0f64; g];
    for r in 0..index.len() {
        for (m, &v) in mean.iter_mut().zip(index.expressions.row(r)) {
            *m += f64::from(v);
        }
    }
    let row: Vec<f32> = mean
        .iter()
        .map(|m| (m / index.len() as f64) as f32)
        .collect();
    let mut out = Vec::with_capacity(spot_num * g);
    for _ in 0..spot_num {
        out.extend_from_slice(&row);
    }
    Tensor::new(&[spot_num, g], out)
}

/// Baseline: retrieval and aggregation driven by uniformly random unit
/// query vectors instead of image embeddings.
pub fn random_retrieval_prediction(
    index: &RetrievalIndex,
    spot_num: usize,
    k: usize,
    seed: u64,
) -> Result<Tensor<f32>> {
    let d = index.d_embed();
    let mut r = rng::stream(seed, &[]);
    let mut q = Vec::with_capacity(spot_num * d);
    for _ in 0..spot_num {
        let v: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        q.extend(v.iter().map(|x| (x / n) as f32));
    }
    let queries = Tensor::new(&[spot_num, d], q)?;
    // f32 rounding of the normalised vector stays far inside the unit-norm tolerance.
    predict_from_embeddings(index, &queries, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy_index() -> RetrievalIndex {
        let e = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]).unwrap();
        let x = Tensor::new(&[3, 1], vec![10.0, 20.0, 30.0]).unwrap();
        let prov = (0..3)
            .map(|spot| Provenance {
                slide_id: "a".into(),
                spot,
            })
            .collect();
        RetrievalIndex::new(e, x, prov).unwrap()
    }

    #[test]
    fn hand_computed_aggregation() {
        let rows = [[10.0f32], [20.0]];
        let p = aggregate_rows(&[1.0, 2.0], |j| &rows[j]).unwrap();
        assert_eq!(p, vec![12.0]);
        let w = weights(&[1.0, 2.0]).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn equidistant_is_arithmetic_mean() {
        let rows = [[1.0f32], [2.0], [6.0]];
        let p = aggregate_rows(&[0.5, 0.5, 0.5], |j| &rows[j]).unwrap();
        assert!((p[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_distance_passes_through() {
        let rows = [[1.5f32], [7.0]];
        assert_eq!(
            aggregate_rows(&[0.3, 0.0], |j| &rows[j]).unwrap(),
            vec![7.0]
        );
        assert!(aggregate_rows(&[], |j| &rows[j]).is_err());
    }

    #[test]
    fn topk_order_and_distance() {
        let idx = toy_index();
        let nb = query_topk(&idx, &[1.0, 0.0], 3).unwrap();
        assert_eq!(nb.iter().map(|n| n.row).collect::<Vec<_>>(), vec![0, 2, 1]);
        for n in &nb {
            assert!((n.distance * n.distance - (2.0 - 2.0 * n.cosine)).abs() < 1e-5);
        }
        assert!(query_topk(&idx, &[1.0, 0.0], 4).is_err());
        assert!(query_topk(&idx, &[1.0, 0.0], 0).is_err());
        assert!(query_topk(&idx, &[2.0, 0.0], 1).is_err());
    }

    #[test]
    fn ties_keep_lower_row() {
        let e = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let prov = (0..2)
            .map(|spot| Provenance {
                slide_id: "a".into(),
                spot,
            })
            .collect();
        let idx = RetrievalIndex::new(e, x, prov).unwrap();
        let nb = query_topk(&idx, &[1.0, 0.0], 1).unwrap();
        assert_eq!(nb[0].row, 0);
    }

    #[test]
    fn index_rejects_inconsistent_rows() {
        let e = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let x = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        assert!(RetrievalIndex::new(e.clone(), x, vec![]).is_err());
        let bad = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
        let x1 = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let prov = vec![Provenance {
            slide_id: "a".into(),
            spot: 0,
        }];
        assert!(RetrievalIndex::new(bad, x1, prov).is_err());
    }

    #[test]
    fn baselines_have_expected_shape() {
        let idx = toy_index();
        let m = train_mean_prediction(&idx, 4).unwrap();
        assert_eq!(m.shape(), &[4, 1]);
        assert!(m.data().iter().all(|&v| (v - 20.0).abs() < 1e-6));
        let r = random_retrieval_prediction(&idx, 5, 2, 3).unwrap();
        assert_eq!(r.shape(), &[5, 1]);
        assert!(r.data().iter().all(|&v| (10.0..=30.0).contains(&v)));
    }
}
