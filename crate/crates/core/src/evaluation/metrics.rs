use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::evaluation::stats::neg_log10_p;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Size of the highly-expressed gene set.
pub const HEG_NUM: usize = 50;

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneScore {
    pub gene: String,
    pub r: f64,
    pub neg_log10_p: f64,
    /// Prediction or observation was constant; `r` is reported as 0.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub slide_id: String,
    pub pcc_acg: f64,
    pub pcc_heg: f64,
    pub mse: f64,
    pub mae: f64,
    /// Column indices of the highly-expressed genes.
    pub heg: Vec<usize>,
    /// One entry per gene, in column order.
    pub per_gene: Vec<GeneScore>,
}

impl MetricsRecord {
    /// Per-gene scores sorted by `neg_log10_p` descending (column order on ties).
    pub fn ranked_genes(&self) -> Vec<&GeneScore> {
        let mut v: Vec<&GeneScore> = self.per_gene.iter().collect();
        v.sort_by(|a, b| b.neg_log10_p.total_cmp(&a.neg_log10_p));
        v
    }
}

/// Columns of the `min(HEG_NUM, G)` genes with the largest mean observed
/// expression, lower index first on ties.
pub fn heg_indices(obs: &Tensor<f32>) -> Result<Vec<usize>> {
    let (s, g) = obs.dims2()?;
    let mut means = alloc::vec![0.0f64; g];
    for i in 0..s {
        for (m, &v) in means.iter_mut().zip(obs.row(i)) {
            *m += f64::from(v);
        }
    }
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    order.truncate(HEG_NUM.min(g));
    Ok(order)
}

/// Scores a prediction against the observed expression of one slide.
pub fn compute_metrics(
    slide_id: &str,
    gene_names: &[String],
    pred: &Tensor<f32>,
    obs: &Tensor<f32>,
) -> Result<MetricsRecord> {
    if pred.shape() != obs.shape() {
        return Err(Error::shape(
            "compute_metrics",
            format!(
                "prediction {:?} vs observation {:?}",
                pred.shape(),
                obs.shape()
            ),
        ));
    }
    let (s, g) = obs.dims2()?;
    if s < 3 {
        return Err(Error::invalid("spots", format!("need at least 3, got {s}")));
    }
    if gene_names.len() != g {
        return Err(Error::shape(
            "compute_metrics",
            format!("{} gene names for {g} columns", gene_names.len()),
        ));
    }
    let column = |t: &Tensor<f32>, j: usize| -> Vec<f64> {
        (0..s).map(|i| f64::from(t.row(i)[j])).collect()
    };
    let mut per_gene = Vec::with_capacity(g);
    for (j, name) in gene_names.iter().enumerate() {
        let (p, o) = (column(pred, j), column(obs, j));
        let score = match pearson(&p, &o) {
            Some(r) => GeneScore {
                gene: name.clone(),
                r,
                neg_log10_p: neg_log10_p(r, s)?,
                zero_variance: false,
            },
            None => GeneScore {
                gene: name.clone(),
                r: 0.0,
                neg_log10_p: 0.0,
                zero_variance: true,
            },
        };
        per_gene.push(score);
    }
    let heg = heg_indices(obs)?;
    let pcc_acg = per_gene.iter().map(|x| x.r).sum::<f64>() / g as f64;
    let pcc_heg = heg.iter().map(|&j| per_gene[j].r).sum::<f64>() / heg.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (&p, &o) in pred.data().iter().zip(obs.data()) {
        let d = f64::from(p) - f64::from(o);
        se += d * d;
        ae += d.abs();
    }
    let n = (s * g) as f64;
    Ok(MetricsRecord {
        slide_id: slide_id.into(),
        pcc_acg,
        pcc_heg,
        mse: se / n,
        mae: ae / n,
        heg,
        per_gene,
    })
}

/// Arithmetic mean of the summary columns, labelled `mean`.
pub fn mean_record(records: &[MetricsRecord]) -> Result<MetricsRecord> {
    if records.is_empty() {
        return Err(Error::invalid("records", "nothing to average"));
    }
    let n = records.len() as f64;
    let avg = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Ok(MetricsRecord {
        slide_id: "mean".into(),
        pcc_acg: avg(|r| r.pcc_acg),
        pcc_heg: avg(|r| r.pcc_heg),
        mse: avg(|r| r.mse),
        mae: avg(|r| r.mae),
        heg: Vec::new(),
        per_gene: Vec::new(),
    })
}
