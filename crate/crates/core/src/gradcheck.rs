//! Central finite-difference verification of reverse-mode gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::graph::{self, Activation, Graph, Var};
use crate::params::ParamSet;
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Denominator floor for the relative error, so that gradients which are
/// zero up to round-off compare absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of the scalar built by `build` against
/// central differences with step `eps`, entry by entry, for every non-frozen
/// parameter.
pub fn grad_check<F>(
    params: &ParamSet<f64>,
    eps: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(
            "eps",
            format!("must be positive, got {eps}"),
        ));
    }
    if !params.is_finite() {
        return Err(Error::invalid("params", "non-finite entries"));
    }
    let (_, analytic) = graph::evaluate_with_gradients(params, &build)?;
    let mut report = GradCheckReport {
        params: Vec::new(),
        tol,
    };
    let mut probe = params.clone();
    for (name, grad) in analytic.iter() {
        let mut worst = (0.0f64, 0usize);
        for i in 0..grad.value.numel() {
            let orig = probe.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + eps;
            let plus = scalar(&probe, &build)?;
            probe.get_mut(name)?.data_mut()[i] = orig - eps;
            let minus = scalar(&probe, &build)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.value.data()[i], numeric);
            if err > worst.0 {
                worst = (err, i);
            }
        }
        report.params.push(ParamCheck {
            name: name.into(),
            max_rel_err: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(report)
}

fn scalar<F>(params: &ParamSet<f64>, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let v = graph::evaluate(params, build)?;
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss {
            shape: v.shape().to_vec(),
        });
    }
    Ok(v.data()[0])
}

/// One entry of [`primitive_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCheck {
    pub primitive: &'static str,
    pub report: GradCheckReport,
}

type Build = fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>;

fn uniform<R: Rng>(r: &mut R, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect())
}

fn p(g: &mut Graph<f64>, ps: &ParamSet<f64>, name: &str) -> Result<Var> {
    g.param(ps, name)
}

/// `(name, builder, parameters as (name, shape, lo, hi))` for every primitive.
/// Ranges keep `log` inputs positive and ReLU/tanh inputs off zero.
#[allow(clippy::type_complexity)]
fn cases() -> Vec<(
    &'static str,
    Build,
    Vec<(&'static str, Vec<usize>, f64, f64)>,
)> {
    let m = |n: &'static str, s: &[usize]| (n, s.to_vec(), -1.0, 1.0);
    alloc::vec![
        (
            "matmul",
            (|g, ps| {
                let (a, b) = (p(g, ps, "a")?, p(g, ps, "b")?);
                g.matmul(a, b)
            }) as Build,
            alloc::vec![m("a", &[3, 4]), m("b", &[4, 2])]
        ),
        (
            "add",
            |g, ps| {
                let (a, b) = (p(g, ps, "a")?, p(g, ps, "b")?);
                g.add(a, b)
            },
            alloc::vec![m("a", &[3, 2]), m("b", &[3, 2])]
        ),
        (
            "add_row_broadcast",
            |g, ps| {
                let (a, b) = (p(g, ps, "a")?, p(g, ps, "b")?);
                g.add(a, b)
            },
            alloc::vec![m("a", &[3, 2]), m("b", &[2])]
        ),
        (
            "scale",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.scale(a, -1.7))
            },
            alloc::vec![m("a", &[2, 3])]
        ),
        (
            "scale_by",
            |g, ps| {
                let (a, s) = (p(g, ps, "a")?, p(g, ps, "s")?);
                g.scale_by(a, s)
            },
            alloc::vec![m("a", &[2, 3]), ("s", alloc::vec![1], 0.5, 2.0)]
        ),
        (
            "row_softmax",
            |g, ps| {
                let a = p(g, ps, "a")?;
                g.row_softmax(a)
            },
            alloc::vec![("a", alloc::vec![3, 4], -2.0, 2.0)]
        ),
        (
            "log",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.log(a))
            },
            alloc::vec![("a", alloc::vec![2, 3], 0.2, 3.0)]
        ),
        (
            "exp",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.exp(a))
            },
            alloc::vec![m("a", &[2, 3])]
        ),
        (
            "l2_normalize_rows",
            |g, ps| {
                let a = p(g, ps, "a")?;
                g.l2_normalize_rows(a, 1e-8)
            },
            alloc::vec![m("a", &[3, 4])]
        ),
        (
            "transpose",
            |g, ps| {
                let a = p(g, ps, "a")?;
                g.transpose(a)
            },
            alloc::vec![m("a", &[2, 3])]
        ),
        (
            "concat",
            |g, ps| {
                let (a, b) = (p(g, ps, "a")?, p(g, ps, "b")?);
                g.concat(&[a, b], 1)
            },
            alloc::vec![m("a", &[2, 2]), m("b", &[2, 3])]
        ),
        (
            "conv2d",
            |g, ps| {
                let (x, w) = (p(g, ps, "x")?, p(g, ps, "w")?);
                g.conv2d(x, w, 2, 1)
            },
            alloc::vec![m("x", &[2, 2, 5, 5]), m("w", &[3, 2, 3, 3])]
        ),
        (
            "relu",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.activation(a, Activation::Relu))
            },
            alloc::vec![("a", alloc::vec![2, 3], 0.05, 1.0)]
        ),
        (
            "relu_negative",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.activation(a, Activation::Relu))
            },
            alloc::vec![("a", alloc::vec![2, 3], -1.0, -0.05)]
        ),
        (
            "gelu",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.activation(a, Activation::Gelu))
            },
            alloc::vec![("a", alloc::vec![2, 3], -3.0, 3.0)]
        ),
        (
            "tanh",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.activation(a, Activation::Tanh))
            },
            alloc::vec![m("a", &[2, 3])]
        ),
        (
            "square",
            |g, ps| {
                let a = p(g, ps, "a")?;
                Ok(g.activation(a, Activation::Square))
            },
            alloc::vec![m("a", &[2, 3])]
        ),
        (
            "mean_from",
            |g, ps| {
                let a = p(g, ps, "a")?;
                g.mean_from(a, 2)
            },
            alloc::vec![m("a", &[2, 3, 3, 3])]
        ),
        (
            "mean",
            |g, ps| {
                let a = p(g, ps, "a")?;
                g.mean(a)
            },
            alloc::vec![m("a", &[2, 3])]
        ),
        (
            "cross_entropy",
            |g, ps| {
                let a = p(g, ps, "a")?;
                g.cross_entropy(a, &[2, 0, 3, 2])
            },
            alloc::vec![("a", alloc::vec![4, 4], -3.0, 3.0)]
        ),
    ]
}

/// Checks every graph primitive on random inputs. Non-scalar outputs are
/// reduced by `mean((y + r)²)` with a fixed random `r`, so each output entry
/// carries a different weight.
pub fn primitive_suite(seed: u64, eps: f64, tol: f64) -> Result<Vec<PrimitiveCheck>> {
    let mut out = Vec::new();
    for (i, (primitive, build, shapes)) in cases().into_iter().enumerate() {
        let mut r = rng::stream(seed, &[8, i as u64]);
        let mut params = ParamSet::new();
        for (name, shape, lo, hi) in &shapes {
            params.insert(*name, uniform(&mut r, shape, *lo, *hi)?)?;
        }
        let out_numel = graph::evaluate(&params, build)?.numel();
        let weights = uniform(&mut r, &[out_numel], -1.0, 1.0)?;
        let report = grad_check(&params, eps, tol, |g, ps| {
            let y = build(g, ps)?;
            if out_numel == 1 {
                return Ok(y);
            }
            let shaped = weights.clone().reshape(g.shape(y))?;
            let w = g.input(shaped);
            let s = g.add(y, w)?;
            let sq = g.activation(s, Activation::Square);
            g.mean(sq)
        })?;
        out.push(PrimitiveCheck { primitive, report });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use alloc::vec;

    fn one_param(name: &str, shape: &[usize], data: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::new(shape, data.to_vec()).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn rejects_non_positive_eps() {
        let p = one_param("x", &[1, 1], &[1.0]);
        let build = |g: &mut Graph<f64>, p: &ParamSet<f64>| g.param(p, "x");
        assert!(grad_check(&p, 0.0, 1e-4, build).is_err());
        assert!(grad_check(&p, -1.0, 1e-4, build).is_err());
    }

    #[test]
    fn linear_graph_is_exact() {
        let p = one_param("x", &[1, 3], &[0.3, -1.2, 2.0]);
        let report = grad_check(&p, 1e-5, 1e-10, |g, p| {
            let x = g.param(p, "x")?;
            let w = g.input(Tensor::new(&[3, 1], vec![1.5, -2.0, 0.25]).unwrap());
            g.matmul(x, w)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn quadratic_graph_passes() {
        let p = one_param("x", &[1, 4], &[0.3, -1.2, 2.0, 0.7]);
        let report = grad_check(&p, 1e-5, 1e-4, |g, p| {
            let x = g.param(p, "x")?;
            let sq = g.activation(x, crate::graph::Activation::Square);
            g.mean(sq)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // zero tolerance trips on the truncation error of a curved function
        let p = one_param("x", &[1, 1], &[2.0]);
        let report = grad_check(&p, 1e-2, 0.0, |g, p| {
            let x = g.param(p, "x")?;
            let e = g.exp(x);
            g.mean(e)
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn primitive_suite_covers_every_primitive_and_passes() {
        let checks = primitive_suite(1, 1e-5, 1e-4).unwrap();
        assert_eq!(checks.len(), 20);
        for c in &checks {
            assert!(c.report.passed(), "{}: {:?}", c.primitive, c.report);
        }
    }
}
