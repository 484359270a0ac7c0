//! Floating-point helpers: exactly rounded summation and normal-distribution
//! tail functions.

use std::f64::consts::SQRT_2;

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// Correctly rounded sum of `values` (Shewchuk's partials algorithm).
///
/// The result does not depend on the order of the inputs, which keeps
/// merged chunk results identical for any worker count.
pub fn exact_sum<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    // Round the partials, most significant first, with half-even correction.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        n -= 1;
        let x = hi;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Streaming Neumaier (improved Kahan-Babuska) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<T: IntoIterator<Item = f64>>(&mut self, iter: T) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Upper-tail mass `P(Z > x)` of the standard normal.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Lower-tail mass `P(Z <= x)` of the standard normal.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean and unbiased sample variance, compensated.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = exact_sum(xs.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = exact_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
    (mean, ss / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_sum_handles_cancellation() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100, 1e-9]), 1.0 + 1e-9);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn tiny_terms_survive() {
        let mut acc = CompensatedSum::new();
        acc.add(1.0);
        for _ in 0..1000 {
            acc.add(1e-19);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-16).abs() < 1e-28);
    }

    #[test]
    fn normal_tail_reference_values() {
        // High-precision references.
        let r = normal_sf(3.090232) / 1.000_001_030_895_094_6e-3 - 1.0;
        assert!(r.abs() < 1e-12, "{r:e}");
        assert!((normal_sf(4.753424) / 1.000_001_528_159_576e-6 - 1.0).abs() < 1e-12);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-12);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
    }

    proptest! {
        #[test]
        fn exact_sum_is_order_independent(mut xs in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let forward = exact_sum(xs.iter().copied());
            xs.reverse();
            prop_assert_eq!(forward, exact_sum(xs.iter().copied()));
        }

        #[test]
        fn exact_sum_is_monotone_in_nonnegative_terms(
            xs in proptest::collection::vec(0.0f64..1e-2, 1..6),
            bump in 0.0f64..1e-3,
            idx in 0usize..6,
        ) {
            let base = exact_sum(xs.iter().copied());
            let mut ys = xs.clone();
            let i = idx % ys.len();
            ys[i] += bump;
            prop_assert!(exact_sum(ys.iter().copied()) >= base);
        }
    }
}
