//! PCA, k-means and the adjusted Rand index for spatial domain detection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;

/// Maximum Lloyd iterations.
pub const KMEANS_MAX_ITER: usize = 300;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending, lower index first on ties) and the
/// matching eigenvectors as columns of a row-major `n × n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::shape(
            "symmetric_eigen",
            format!("{} entries for {n}x{n}", a.len()),
        ));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = libm::sqrt(m.iter().map(|x| x * x).sum::<f64>());
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = libm::sqrt(
            (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i * n + j] * m[i * n + j])
                .sum::<f64>(),
        );
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[b * n + b].total_cmp(&m[a * n + a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + new] = v[k * n + old];
        }
    }
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `[G × c]`, orthonormal columns.
    pub components: Tensor<f64>,
    /// `[S × c]`.
    pub scores: Tensor<f64>,
    /// Covariance eigenvalue per component.
    pub explained_variance: Vec<f64>,
    /// Total variance (trace of the covariance).
    pub total_variance: f64,
}

/// Principal components of the mean-centred rows of `x`. Each component is
/// signed so that its largest-magnitude entry is positive.
pub fn pca(x: &Tensor<f64>, c: usize) -> Result<Pca> {
    let (s, g) = x.dims2()?;
    if c == 0 || c > s.min(g) {
        return Err(Error::invalid(
            "components",
            format!("must lie in 1..={}, got {c}", s.min(g)),
        ));
    }
    let mut mean = vec![0.0; g];
    for i in 0..s {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= s as f64;
    }
    let centred: Vec<f64> = (0..s)
        .flat_map(|i| {
            x.row(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| v - m)
                .collect::<Vec<_>>()
        })
        .collect();
    let denom = if s > 1 { (s - 1) as f64 } else { 1.0 };
    let mut cov = vec![0.0; g * g];
    for i in 0..s {
        let r = &centred[i * g..(i + 1) * g];
        for a in 0..g {
            if r[a] == 0.0 {
                continue;
            }
            for b in a..g {
                cov[a * g + b] += r[a] * r[b];
            }
        }
    }
    for a in 0..g {
        for b in a..g {
            let v = cov[a * g + b] / denom;
            cov[a * g + b] = v;
            cov[b * g + a] = v;
        }
    }
    let total_variance = (0..g).map(|a| cov[a * g + a]).sum();
    let (values, vectors) = symmetric_eigen(&cov, g)?;
    let mut comp = vec![0.0; g * c];
    for j in 0..c {
        let col: Vec<f64> = (0..g).map(|k| vectors[k * g + j]).collect();
        let mut pivot = 0;
        for k in 1..g {
            if col[k].abs() > col[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..g {
            comp[k * c + j] = sign * col[k];
        }
    }
    let components = Tensor::new(&[g, c], comp)?;
    let scores = Tensor::new(&[s, g], centred)?.matmul(&components)?;
    Ok(Pca {
        components,
        scores,
        explained_variance: values[..c].iter().map(|v| v.max(0.0)).collect(),
        total_variance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `[k × c]`.
    pub centroids: Tensor<f64>,
    /// Within-cluster SSE after each assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    /// Number of empty-cluster reseeds performed.
    pub reseeds: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is a
/// fixpoint or [`KMEANS_MAX_ITER`] is reached. An empty cluster is reseeded
/// at the point farthest from its assigned centroid (lowest index on ties).
pub fn kmeans(scores: &Tensor<f64>, k: usize, seed: u64) -> Result<KMeans> {
    let (s, dim) = scores.dims2()?;
    if k == 0 || k > s {
        return Err(Error::invalid("k", format!("must lie in 1..={s}, got {k}")));
    }
    let points: Vec<&[f64]> = (0..s).map(|i| scores.row(i)).collect();
    let mut r = rng::stream(seed, &[]);

    let mut centroids: Vec<Vec<f64>> = vec![points[r.gen_range(0..s)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = r.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = s - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            r.gen_range(0..s)
        };
        centroids.push(points[pick].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut labels = vec![usize::MAX; s];
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    let mut reseeds = 0;
    loop {
        let mut changed = false;
        let mut sse = 0.0;
        let mut dist = vec![0.0; s];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            dist[i] = d;
            sse += d;
        }
        sse_history.push(sse);
        if !changed || iterations == KMEANS_MAX_ITER {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (a, &v) in sums[labels[i]].iter_mut().zip(p.iter()) {
                *a += v;
            }
        }
        let mut taken = vec![false; s];
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|v| v / counts[j] as f64).collect();
            } else {
                let mut far = None;
                for i in 0..s {
                    if taken[i] {
                        continue;
                    }
                    if far.is_none_or(|f: usize| dist[i] > dist[f]) {
                        far = Some(i);
                    }
                }
                let far = far.unwrap_or(0);
                taken[far] = true;
                centroids[j] = points[far].to_vec();
                reseeds += 1;
                log::debug!("kmeans: cluster {j} empty, reseeded at point {far}");
            }
        }
    }
    let flat: Vec<f64> = centroids.concat();
    Ok(KMeans {
        labels,
        centroids: Tensor::new(&[k, dim], flat)?,
        sse_history,
        iterations,
        reseeds,
    })
}

fn comb2(n: u64) -> i128 {
    i128::from(n) * i128::from(n.saturating_sub(1)) / 2
}

/// Adjusted Rand index from the contingency table, in exact integer
/// arithmetic with a single final division. Two labelings that are both a
/// single cluster (or both all singletons) score 1.
pub fn ari<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "ari",
            format!("{} vs {} labels", a.len(), b.len()),
        ));
    }
    let n = a.len() as u64;
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: i128 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: i128 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: i128 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0 {
        return Ok(1.0);
    }
    // (index − sa·sb/total) / ((sa + sb)/2 − sa·sb/total), scaled by 2·total.
    let num = 2 * (index * total - sum_a * sum_b);
    let den = (sum_a + sum_b) * total - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// PCA to `components` dimensions, then k-means with `k` clusters.
pub fn detect_domains(
    expression: &Tensor<f32>,
    components: usize,
    k: usize,
    seed: u64,
) -> Result<KMeans> {
    let p = pca(&expression.cast::<f64>(), components)?;
    kmeans(&p.scores, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal_and_2x2() {
        let (v, _) = symmetric_eigen(&[1.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert_eq!(v, vec![3.0, 1.0]);
        let (v, vec2) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        assert!((vec2[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn line_data_has_one_component() {
        let x = Tensor::new(&[4, 2], vec![0.0, 0.0, 1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let p = pca(&x, 2).unwrap();
        assert!((p.explained_variance[0] / p.total_variance - 1.0).abs() < 1e-12);
        assert!(p.explained_variance[1].abs() < 1e-12);
        assert!(pca(&x, 3).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 6.0]).unwrap();
        let km = kmeans(&x, 1, 0).unwrap();
        assert_eq!(km.labels, vec![0, 0, 0]);
        assert!((km.centroids.data()[0] - 3.0).abs() < 1e-12);
        assert!(kmeans(&x, 4, 0).is_err());
    }

    #[test]
    fn ari_basics() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert!(ari(&[0, 1], &[0]).is_err());
        assert!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() < 0.0);
    }
}
