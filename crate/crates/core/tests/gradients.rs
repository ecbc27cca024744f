//! Finite-difference checks of every graph primitive and of the full
//! contrastive loss, in f64 with eps 1e-5 and relative tolerance 1e-4.

use std::time::Instant;

use rand::Rng;
use stexp_core::contrastive::{clip_grad_check, grad_check_encoder};
use stexp_core::gradcheck::grad_check;
use stexp_core::graph::Activation;
use stexp_core::rng::{stream, StreamRng};
use stexp_core::{Graph, ParamSet, Result, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 4;

fn uniform(r: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Random values whose magnitude stays at least `gap` away from zero.
fn away_from_zero(r: &mut StreamRng, shape: &[usize], gap: f64) -> Tensor<f64> {
    uniform(r, shape, -1.0, 1.0).map(|v| if v < 0.0 { v - gap } else { v + gap })
}

/// Reduces an arbitrary output to a scalar with non-uniform weights:
/// `mean((y + r)²)` for a fixed random `r`.
fn reduce(g: &mut Graph<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let shaped = r.clone().reshape(g.shape(y))?;
    let r = g.input(shaped);
    let s = g.add(y, r)?;
    let sq = g.activation(s, Activation::Square);
    g.mean(sq)
}

fn check<F>(label: &str, params: ParamSet<f64>, out_numel: usize, seed: u64, f: F)
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut r = stream(seed, &[99]);
    let weights = uniform(&mut r, &[out_numel], -1.0, 1.0);
    let report = grad_check(&params, EPS, TOL, |g, p| {
        let y = f(g, p)?;
        reduce(g, y, &weights)
    })
    .unwrap();
    assert!(report.passed(), "{label}: {report:?}");
}

fn set(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(n, t).unwrap();
    }
    p
}

#[test]
fn matmul_add_and_broadcast() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[1]);
        let p = set(vec![
            ("a", uniform(&mut r, &[3, 4], -1.0, 1.0)),
            ("b", uniform(&mut r, &[4, 2], -1.0, 1.0)),
            ("c", uniform(&mut r, &[3, 2], -1.0, 1.0)),
            ("bias", uniform(&mut r, &[2], -1.0, 1.0)),
        ]);
        check("matmul/add", p, 6, t, |g, p| {
            let a = g.param(p, "a")?;
            let b = g.param(p, "b")?;
            let c = g.param(p, "c")?;
            let bias = g.param(p, "bias")?;
            let ab = g.matmul(a, b)?;
            let s = g.add(ab, c)?;
            g.add(s, bias)
        });
    }
}

#[test]
fn scale_scale_by_and_transpose() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[2]);
        let p = set(vec![
            ("x", uniform(&mut r, &[3, 5], -1.0, 1.0)),
            ("s", uniform(&mut r, &[1], 0.5, 2.0)),
        ]);
        check("scale/scale_by/transpose", p, 15, t, |g, p| {
            let x = g.param(p, "x")?;
            let s = g.param(p, "s")?;
            let y = g.scale(x, -1.7);
            let y = g.scale_by(y, s)?;
            g.transpose(y)
        });
    }
}

#[test]
fn row_softmax_log_exp() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[3]);
        let p = set(vec![
            ("x", uniform(&mut r, &[4, 5], -2.0, 2.0)),
            ("pos", uniform(&mut r, &[4, 5], 0.2, 3.0)),
        ]);
        check("softmax/log/exp", p, 20, t, |g, p| {
            let x = g.param(p, "x")?;
            let pos = g.param(p, "pos")?;
            let sm = g.row_softmax(x)?;
            let lg = g.log(pos);
            let ex = g.exp(x);
            let a = g.add(sm, lg)?;
            g.add(a, ex)
        });
    }
}

#[test]
fn l2_normalize_rows() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[4]);
        let p = set(vec![("x", uniform(&mut r, &[4, 6], -1.0, 1.0))]);
        check("l2norm", p, 24, t, |g, p| {
            let x = g.param(p, "x")?;
            g.l2_normalize_rows(x, 1e-8)
        });
    }
}

#[test]
fn concat_both_axes() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[5]);
        let p = set(vec![
            ("a", uniform(&mut r, &[2, 3], -1.0, 1.0)),
            ("b", uniform(&mut r, &[2, 3], -1.0, 1.0)),
            ("c", uniform(&mut r, &[2, 2, 3], -1.0, 1.0)),
            ("d", uniform(&mut r, &[2, 1, 3], -1.0, 1.0)),
        ]);
        check("concat axis 0", p.clone(), 12, t, |g, p| {
            let a = g.param(p, "a")?;
            let b = g.param(p, "b")?;
            g.concat(&[a, b], 0)
        });
        check("concat axis 1", p, 18, t, |g, p| {
            let c = g.param(p, "c")?;
            let d = g.param(p, "d")?;
            g.concat(&[c, d], 1)
        });
    }
}

#[test]
fn conv2d_strides_and_padding() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[6]);
        let p = set(vec![
            ("x", uniform(&mut r, &[2, 2, 5, 5], -1.0, 1.0)),
            ("w", uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0)),
        ]);
        check(
            "conv stride 1 pad 1",
            p.clone(),
            2 * 3 * 5 * 5,
            t,
            |g, p| {
                let x = g.param(p, "x")?;
                let w = g.param(p, "w")?;
                g.conv2d(x, w, 1, 1)
            },
        );
        check(
            "conv stride 2 pad 1",
            p.clone(),
            2 * 3 * 3 * 3,
            t,
            |g, p| {
                let x = g.param(p, "x")?;
                let w = g.param(p, "w")?;
                g.conv2d(x, w, 2, 1)
            },
        );
        check("conv stride 2 pad 0", p, 2 * 3 * 2 * 2, t, |g, p| {
            let x = g.param(p, "x")?;
            let w = g.param(p, "w")?;
            g.conv2d(x, w, 2, 0)
        });
    }
}

#[test]
fn pointwise_activations() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[7]);
        let p = set(vec![("x", away_from_zero(&mut r, &[3, 4], 0.05))]);
        for act in [
            Activation::Relu,
            Activation::Gelu,
            Activation::Tanh,
            Activation::Square,
        ] {
            check(&format!("{act:?}"), p.clone(), 12, t, move |g, p| {
                let x = g.param(p, "x")?;
                Ok(g.activation(x, act))
            });
        }
    }
}

#[test]
fn means_and_pooling() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[8]);
        let p = set(vec![("x", uniform(&mut r, &[2, 3, 4, 4], -1.0, 1.0))]);
        check("global average pool", p.clone(), 6, t, |g, p| {
            let x = g.param(p, "x")?;
            g.mean_from(x, 2)
        });
        check("mean", p, 1, t, |g, p| {
            let x = g.param(p, "x")?;
            g.mean(x)
        });
    }
}

#[test]
fn cross_entropy_with_targets() {
    for t in 0..TRIALS {
        let mut r = stream(t, &[9]);
        let p = set(vec![("z", uniform(&mut r, &[4, 4], -3.0, 3.0))]);
        let targets: Vec<usize> = (0..4).map(|_| r.gen_range(0..4)).collect();
        let report = grad_check(&p, EPS, TOL, |g, p| {
            let z = g.param(p, "z")?;
            g.cross_entropy(z, &targets)
        })
        .unwrap();
        assert!(report.passed(), "cross_entropy: {report:?}");
    }
}

#[test]
fn full_contrastive_loss_on_four_pair_batches() {
    let start = Instant::now();
    let enc = grad_check_encoder();
    for seed in 0..TRIALS {
        for learnable in [false, true] {
            let c = clip_grad_check(&enc, 4, learnable, seed, EPS, TOL).unwrap();
            assert!(
                c.report.passed(),
                "seed {seed} learnable {learnable}: max rel err {:.3e} {:?}",
                c.report.max_rel_err(),
                c.report
            );
        }
    }
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
}
