//! Two-sided p-values of Pearson correlations via the Student t distribution.

use alloc::format;

use crate::{Error, Result};

/// Upper bound on reported `-log10 p`.
pub const NEG_LOG10_P_CAP: f64 = 300.0;

const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// `ln I_x(a, b)`, the log of the regularised incomplete beta function.
pub fn ln_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let ln_front = a * libm::log(x) + b * libm::log1p(-x) - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front + libm::log(beta_cf(a, b, x)) - libm::log(a)
    } else {
        let tail = libm::exp(ln_front + libm::log(beta_cf(b, a, 1.0 - x)) - libm::log(b));
        libm::log1p(-tail)
    }
}

/// `-log10` of the two-sided p-value of correlation `r` over `n` samples,
/// from `t = r √(n−2) / √(1−r²)` with `n − 2` degrees of freedom.
pub fn neg_log10_p(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::invalid(
            "samples",
            format!("need at least 3, got {n}"),
        ));
    }
    if !r.is_finite() || r.abs() > 1.0 {
        return Err(Error::invalid("r", format!("{r} is not a correlation")));
    }
    if r.abs() == 1.0 {
        return Ok(NEG_LOG10_P_CAP);
    }
    let nu = (n - 2) as f64;
    // ν / (ν + t²) simplifies to 1 − r².
    let x = 1.0 - r * r;
    let ln_p = ln_incomplete_beta(nu / 2.0, 0.5, x);
    let v = -ln_p / core::f64::consts::LN_10;
    Ok(v.clamp(0.0, NEG_LOG10_P_CAP))
}

/// The t statistic for correlation `r` over `n` samples.
pub fn t_statistic(r: f64, n: usize) -> f64 {
    r * libm::sqrt((n as f64) - 2.0) / libm::sqrt(1.0 - r * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moderate_correlation() {
        assert_eq!(alloc::format!("{:.3}", t_statistic(0.5, 20)), "2.449");
        // Reference two-sided p = 0.0247695588041097 (Student t, 18 dof).
        let v = neg_log10_p(0.5, 20).unwrap();
        assert!((v - 1.606081729007504).abs() < 1e-9, "{v}");
        assert!((libm::pow(10.0, -v) - 0.0247).abs() < 1e-4);
    }

    #[test]
    fn null_and_degenerate() {
        assert!(neg_log10_p(0.0, 10).unwrap().abs() < 1e-6);
        assert_eq!(neg_log10_p(1.0, 10).unwrap(), NEG_LOG10_P_CAP);
        assert_eq!(neg_log10_p(-1.0, 10).unwrap(), NEG_LOG10_P_CAP);
        assert!(neg_log10_p(0.5, 2).is_err());
        assert!(neg_log10_p(1.5, 5).is_err());
    }

    #[test]
    fn extreme_correlation_is_capped_not_infinite() {
        let v = neg_log10_p(1.0 - 1e-15, 10_000).unwrap();
        assert_eq!(v, NEG_LOG10_P_CAP);
        let w = neg_log10_p(0.999, 50).unwrap();
        assert!(w.is_finite() && w > 50.0 && w < NEG_LOG10_P_CAP, "{w}");
    }

    #[test]
    fn one_degree_of_freedom_is_closed_form() {
        // ν = 1: p = 1 − (2/π)·atan|t|.
        for &r in &[0.1, 0.4, 0.8, 0.95] {
            let t = t_statistic(r, 3);
            let p = 1.0 - 2.0 / core::f64::consts::PI * libm::atan(t.abs());
            let expect = -libm::log10(p);
            assert!((neg_log10_p(r, 3).unwrap() - expect).abs() < 1e-10 * expect.max(1.0));
        }
    }
}
