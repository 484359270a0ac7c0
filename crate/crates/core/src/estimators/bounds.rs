use statrs::function::beta::inv_beta_reg;

use super::BinomialBound;
use crate::error::{Error, Result};
use crate::numeric::normal_quantile;
use crate::risk::BoundMethod;

fn check(k: u64, n: u64, confidence: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("binomial bound needs n >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds n = {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence {confidence} outside (0, 1)")));
    }
    Ok(())
}

/// Exact one-sided binomial upper bound.
pub fn clopper_pearson_upper(k: u64, n: u64, confidence: f64) -> Result<f64> {
    check(k, n, confidence)?;
    if k == n {
        return Ok(1.0);
    }
    if k == 0 {
        // 1 - (1 - c)^(1/n), without cancellation for large n.
        return Ok(-((1.0 - confidence).ln() / n as f64).exp_m1());
    }
    Ok(inv_beta_reg((k + 1) as f64, (n - k) as f64, confidence))
}

pub fn hoeffding_upper(k: u64, n: u64, confidence: f64) -> Result<f64> {
    check(k, n, confidence)?;
    let width = ((1.0 / (1.0 - confidence)).ln() / (2.0 * n as f64)).sqrt();
    Ok((k as f64 / n as f64 + width).min(1.0))
}

/// One-sided normal-approximation half width for `k` successes in `n`,
/// with its method. Degenerate samples (`k = 0`, `k = n`, `n < 30`) use the
/// Clopper-Pearson width instead.
pub fn clt_width(k: u64, n: u64, confidence: f64) -> Result<(f64, BoundMethod)> {
    check(k, n, confidence)?;
    let p = k as f64 / n as f64;
    if k == 0 || k == n || n < 30 {
        return Ok((clopper_pearson_upper(k, n, confidence)? - p, BoundMethod::ClopperPearson));
    }
    let nf = n as f64;
    let sample_var = p * (1.0 - p) * nf / (nf - 1.0);
    Ok((normal_quantile(confidence) * (sample_var / nf).sqrt(), BoundMethod::Clt))
}

/// Half width from a binary sample.
pub fn clt_error_bound(samples: &[bool], confidence: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let k = samples.iter().filter(|&&s| s).count() as u64;
    Ok(clt_width(k, samples.len() as u64, confidence)?.0)
}

/// Upper bound on a binomial proportion by the chosen rule.
pub fn binomial_upper(k: u64, n: u64, confidence: f64, rule: BinomialBound) -> Result<(f64, BoundMethod)> {
    match rule {
        BinomialBound::ClopperPearson => Ok((clopper_pearson_upper(k, n, confidence)?, BoundMethod::ClopperPearson)),
        BinomialBound::Hoeffding => Ok((hoeffding_upper(k, n, confidence)?, BoundMethod::Hoeffding)),
        BinomialBound::Clt => {
            let (w, m) = clt_width(k, n, confidence)?;
            Ok(((k as f64 / n as f64 + w).min(1.0), m))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clopper_pearson_reference_values() {
        assert!((clopper_pearson_upper(0, 100, 0.95).unwrap() - 0.029513).abs() < 1e-6);
        assert_eq!(clopper_pearson_upper(7, 7, 0.95).unwrap(), 1.0);
        let v = clopper_pearson_upper(0, 2996, 0.95).unwrap();
        assert!((v - 9.999e-4).abs() < 1e-6, "{v}");
    }

    #[test]
    fn clopper_pearson_inverts_the_binomial_tail() {
        // P(Bin(n, u) <= k) = 1 - c at the upper bound u.
        for &(k, n) in &[(1u64, 20u64), (5, 100), (100, 100_000), (37, 50)] {
            let u = clopper_pearson_upper(k, n, 0.95).unwrap();
            let tail = 1.0 - statrs::function::beta::beta_reg((k + 1) as f64, (n - k) as f64, u);
            assert!((tail - 0.05).abs() < 1e-9, "k={k} n={n}: {tail}");
        }
    }

    #[test]
    fn hoeffding_reference_values() {
        assert!((hoeffding_upper(0, 100, 0.95).unwrap() - 0.12239).abs() < 1e-5);
        assert!((hoeffding_upper(0, 2996, 0.95).unwrap() - 0.02236).abs() < 1e-5);
        assert_eq!(hoeffding_upper(10, 10, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn clt_reference_and_fallback() {
        let (w, m) = clt_width(100, 100_000, 0.95).unwrap();
        assert_eq!(m, BoundMethod::Clt);
        assert!((w - 1.644854 * (1e-3 * 0.999 / 1e5f64).sqrt()).abs() < 1e-8, "{w}");
        let zeros = vec![false; 500];
        let cp = clopper_pearson_upper(0, 500, 0.95).unwrap();
        assert_eq!(clt_error_bound(&zeros, 0.95).unwrap(), cp);
        assert!(clt_error_bound(&[], 0.95).is_err());
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(clopper_pearson_upper(3, 2, 0.95).is_err());
        assert!(hoeffding_upper(3, 2, 0.95).is_err());
    }

    proptest! {
        #[test]
        fn clopper_pearson_below_hoeffding_at_zero(n in 1u64..1_000_000, c in 0.5f64..0.999) {
            prop_assert!(clopper_pearson_upper(0, n, c).unwrap() <= hoeffding_upper(0, n, c).unwrap());
        }

        #[test]
        fn hoeffding_width_shrinks(k in 0u64..50, n in 100u64..10_000) {
            let a = hoeffding_upper(k, n, 0.95).unwrap() - k as f64 / n as f64;
            let b = hoeffding_upper(2 * k, 2 * n, 0.95).unwrap() - k as f64 / n as f64;
            prop_assert!(b < a);
        }

        #[test]
        fn clopper_pearson_zero_monotone_in_n(n in 1u64..1_000_000) {
            prop_assert!(clopper_pearson_upper(0, n + 1, 0.95).unwrap() <= clopper_pearson_upper(0, n, 0.95).unwrap());
        }
    }
}
