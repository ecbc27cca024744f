//! Library-size normalisation, log1p and highly-variable-gene selection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Slide;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_TARGET_SUM: f64 = 1e4;

/// Everything needed to replay preprocessing on new slides.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessManifest {
    pub target_sum: f64,
    pub log1p: bool,
    pub hvg_num: usize,
    pub train_ids: Vec<String>,
    /// Selected gene columns of the raw matrix, variance descending.
    pub hvg_indices: Vec<usize>,
    /// Training-spot variance of each selected gene, same order.
    pub hvg_variances: Vec<f64>,
    /// `(slide_id, raw spot index)` of spots dropped for zero total count.
    pub dropped_spots: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedDataset {
    /// Normalised slides restricted to the selected genes.
    pub slides: Vec<Slide>,
    pub gene_names: Vec<String>,
    pub manifest: PreprocessManifest,
}

impl ProcessedDataset {
    pub fn hvg_indices(&self) -> &[usize] {
        &self.manifest.hvg_indices
    }

    pub fn hvg_num(&self) -> usize {
        self.manifest.hvg_num
    }

    pub fn slide(&self, id: &str) -> Option<&Slide> {
        self.slides.iter().find(|s| s.slide_id == id)
    }

    pub fn is_train(&self, id: &str) -> bool {
        self.manifest.train_ids.iter().any(|t| t == id)
    }

    pub fn train_slides(&self) -> Vec<&Slide> {
        self.slides
            .iter()
            .filter(|s| self.is_train(&s.slide_id))
            .collect()
    }

    pub fn test_slides(&self) -> Vec<&Slide> {
        self.slides
            .iter()
            .filter(|s| !self.is_train(&s.slide_id))
            .collect()
    }
}

/// Scales counts to sum `target_sum`, then applies `ln(1 + x)`. Returns
/// `None` for an all-zero row.
pub fn normalize_counts(counts: &[f32], target_sum: f64) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    if total <= 0.0 {
        return None;
    }
    Some(
        counts
            .iter()
            .map(|&c| libm::log1p(c as f64 * target_sum / total))
            .collect(),
    )
}

/// Normalises every slide and keeps the `hvg_num` genes with the largest
/// variance over all spots of the training slides `train_ids` (variance
/// descending, lower gene index first on ties). Spots with zero total count
/// are dropped and recorded in the manifest.
pub fn preprocess(
    slides: &[Slide],
    hvg_num: usize,
    train_ids: &[String],
) -> Result<ProcessedDataset> {
    let gene_num = check_slides(slides)?;
    if hvg_num == 0 || hvg_num > gene_num {
        return Err(Error::invalid(
            "hvg_num",
            format!("must be in 1..={gene_num}, got {hvg_num}"),
        ));
    }
    if train_ids.is_empty() {
        return Err(Error::invalid("train_ids", "no training slides"));
    }
    for id in train_ids {
        if !slides.iter().any(|s| &s.slide_id == id) {
            return Err(Error::invalid("train_ids", format!("unknown slide {id}")));
        }
    }

    let mut dropped = Vec::new();
    let normalized = slides
        .iter()
        .map(|s| normalize_slide(s, DEFAULT_TARGET_SUM, &mut dropped))
        .collect::<Result<Vec<_>>>()?;

    let mut n = 0usize;
    let mut mean = vec![0.0f64; gene_num];
    for (s, rows) in &normalized {
        if train_ids.contains(&s.slide_id) {
            for row in rows {
                n += 1;
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid(
            "train_ids",
            "every training spot was dropped",
        ));
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; gene_num];
    for (s, rows) in &normalized {
        if train_ids.contains(&s.slide_id) {
            for row in rows {
                for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);

    let mut order: Vec<usize> = (0..gene_num).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    order.truncate(hvg_num);

    let manifest = PreprocessManifest {
        target_sum: DEFAULT_TARGET_SUM,
        log1p: true,
        hvg_num,
        train_ids: train_ids.to_vec(),
        hvg_variances: order.iter().map(|&g| var[g]).collect(),
        hvg_indices: order,
        dropped_spots: dropped,
    };
    let gene_names = manifest
        .hvg_indices
        .iter()
        .map(|&g| slides[0].gene_names[g].clone())
        .collect();
    let slides = normalized
        .into_iter()
        .map(|(s, rows)| restrict(s, &rows, &manifest.hvg_indices))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProcessedDataset {
        slides,
        gene_names,
        manifest,
    })
}

impl PreprocessManifest {
    /// Replays normalisation and the recorded gene selection on `slides`
    /// without re-estimating anything.
    pub fn apply(&self, slides: &[Slide]) -> Result<Vec<Slide>> {
        let gene_num = check_slides(slides)?;
        if let Some(&g) = self.hvg_indices.iter().find(|&&g| g >= gene_num) {
            return Err(Error::invalid(
                "hvg_indices",
                format!("gene {g} out of range for {gene_num} genes"),
            ));
        }
        let mut dropped = Vec::new();
        slides
            .iter()
            .map(|s| {
                let (s, rows) = normalize_slide(s, self.target_sum, &mut dropped)?;
                restrict(s, &rows, &self.hvg_indices)
            })
            .collect()
    }
}

fn check_slides(slides: &[Slide]) -> Result<usize> {
    let first = slides
        .first()
        .ok_or_else(|| Error::invalid("slides", "empty dataset"))?;
    let gene_num = first.gene_num();
    for s in slides {
        s.validate()?;
        if s.gene_names != first.gene_names {
            return Err(Error::InvalidSlide {
                slide: s.slide_id.clone(),
                field: "gene_names",
                reason: format!("genes differ from slide {}", first.slide_id),
            });
        }
    }
    Ok(gene_num)
}

/// Normalised rows of the kept spots, with the slide reduced to those spots.
fn normalize_slide(
    slide: &Slide,
    target_sum: f64,
    dropped: &mut Vec<(String, usize)>,
) -> Result<(Slide, Vec<Vec<f64>>)> {
    let mut keep = Vec::with_capacity(slide.spot_num());
    let mut rows = Vec::with_capacity(slide.spot_num());
    for i in 0..slide.spot_num() {
        match normalize_counts(slide.expression.row(i), target_sum) {
            Some(r) => {
                keep.push(i);
                rows.push(r);
            }
            None => {
                log::warn!(
                    "slide {}: dropping spot {i} with zero total count",
                    slide.slide_id
                );
                dropped.push((slide.slide_id.clone(), i));
            }
        }
    }
    if keep.is_empty() {
        return Err(Error::InvalidSlide {
            slide: slide.slide_id.clone(),
            field: "expression",
            reason: "every spot has zero total count".into(),
        });
    }
    let reduced = if keep.len() == slide.spot_num() {
        slide.clone()
    } else {
        slide.select_spots(&keep)?
    };
    Ok((reduced, rows))
}

fn restrict(mut slide: Slide, rows: &[Vec<f64>], genes: &[usize]) -> Result<Slide> {
    let data = rows
        .iter()
        .flat_map(|r| genes.iter().map(move |&g| r[g] as f32))
        .collect();
    slide.expression = Tensor::new(&[rows.len(), genes.len()], data)?;
    slide.gene_names = genes.iter().map(|&g| slide.gene_names[g].clone()).collect();
    Ok(slide)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SlideImage;
    use alloc::string::ToString;

    fn slide(id: &str, counts: &[&[f32]]) -> Slide {
        let genes = counts[0].len();
        let spots = counts.len();
        Slide {
            slide_id: id.into(),
            gene_names: (0..genes).map(|g| format!("g{g}")).collect(),
            expression: Tensor::new(&[spots, genes], counts.concat()).unwrap(),
            coords: (0..spots as u32).map(|i| [i, 0]).collect(),
            coord_max: 64,
            image: SlideImage::Features(Tensor::zeros(&[spots, 2])),
            labels: None,
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_arithmetic() {
        let r = normalize_counts(&[1.0, 1.0, 2.0], 1e4).unwrap();
        // 2500, 2500, 5000 before log1p
        let expected = [7.824, 7.824, 8.517];
        for (x, e) in r.iter().zip(expected) {
            assert!((x - e).abs() < 5e-4, "{x} vs {e}");
        }
        assert_eq!(r[0], libm::log1p(2500.0));
        assert_eq!(r[2], libm::log1p(5000.0));
        assert!(normalize_counts(&[0.0, 0.0], 1e4).is_none());
    }

    #[test]
    fn constant_gene_is_never_selected() {
        // gene 0 normalises to the same value in every spot
        let s = slide(
            "a",
            &[
                &[5.0, 1.0, 4.0],
                &[5.0, 3.0, 2.0],
                &[5.0, 4.0, 1.0],
                &[5.0, 0.0, 5.0],
            ],
        );
        let ds = preprocess(&[s], 2, &ids(&["a"])).unwrap();
        assert!(!ds.hvg_indices().contains(&0));
        assert_eq!(ds.slides[0].expression.shape(), &[4, 2]);
    }

    #[test]
    fn full_selection_orders_by_variance() {
        let s = slide(
            "a",
            &[&[1.0, 10.0, 3.0], &[9.0, 10.0, 4.0], &[1.0, 12.0, 3.0]],
        );
        let ds = preprocess(&[s], 3, &ids(&["a"])).unwrap();
        let v = &ds.manifest.hvg_variances;
        assert_eq!(ds.hvg_indices().len(), 3);
        assert!(v.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(ds.gene_names.len(), 3);
    }

    #[test]
    fn ties_prefer_lower_index() {
        // genes 0 and 1 are mirror images, identical variance
        let s = slide("a", &[&[1.0, 3.0, 2.0], &[3.0, 1.0, 2.0]]);
        let ds = preprocess(&[s], 1, &ids(&["a"])).unwrap();
        assert_eq!(ds.hvg_indices(), &[0]);
    }

    #[test]
    fn zero_count_spot_is_dropped() {
        let s = slide("a", &[&[1.0, 2.0], &[0.0, 0.0], &[2.0, 1.0]]);
        let ds = preprocess(&[s], 2, &ids(&["a"])).unwrap();
        assert_eq!(ds.manifest.dropped_spots, vec![("a".to_string(), 1)]);
        assert_eq!(ds.slides[0].spot_num(), 2);
        assert_eq!(ds.slides[0].coords, vec![[0, 0], [2, 0]]);
    }

    #[test]
    fn selection_ignores_test_slides() {
        let a = slide("a", &[&[1.0, 5.0, 2.0], &[4.0, 5.0, 2.0], &[2.0, 6.0, 1.0]]);
        let b = slide("b", &[&[1.0, 1.0, 9.0], &[1.0, 9.0, 1.0], &[9.0, 1.0, 1.0]]);
        let c = slide("c", &[&[3.0, 1.0, 1.0], &[1.0, 3.0, 1.0], &[1.0, 1.0, 3.0]]);
        let train = ids(&["a"]);
        let one = preprocess(&[a.clone(), b.clone(), c.clone()], 2, &train).unwrap();
        let two = preprocess(&[c, a, b], 2, &train).unwrap();
        assert_eq!(one.hvg_indices(), two.hvg_indices());
    }

    #[test]
    fn manifest_replay_is_identical() {
        let a = slide("a", &[&[1.0, 5.0, 2.0], &[4.0, 5.0, 2.0], &[2.0, 6.0, 1.0]]);
        let b = slide("b", &[&[1.0, 1.0, 9.0], &[1.0, 9.0, 1.0], &[9.0, 1.0, 1.0]]);
        let raw = [a, b];
        let ds = preprocess(&raw, 2, &ids(&["a"])).unwrap();
        assert_eq!(ds.manifest.apply(&raw).unwrap(), ds.slides);
    }

    #[test]
    fn argument_errors() {
        let a = slide("a", &[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(preprocess(core::slice::from_ref(&a), 3, &ids(&["a"])).is_err());
        assert!(preprocess(core::slice::from_ref(&a), 0, &ids(&["a"])).is_err());
        assert!(preprocess(core::slice::from_ref(&a), 1, &[]).is_err());
        assert!(preprocess(&[a], 1, &ids(&["zzz"])).is_err());
    }
}
