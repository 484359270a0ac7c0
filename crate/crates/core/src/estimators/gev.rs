use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::{EstimatorConfig, GevFitter};
use crate::error::{Error, Result};
use crate::risk::{BoundMethod, Method, OutcomeFn, RiskEstimate, ScenarioDistribution};
use crate::sampling::try_map_chunks;

const MIN_MAXIMA: usize = 20;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// 5% critical value of the Anderson-Darling statistic.
const AD_CRITICAL: f64 = 2.492;

/// `G(z) = exp(-(1 + shape (z - location) / scale)^(-1 / shape))`; shape 0
/// is the Gumbel law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GevParams {
    /// `ln G(z)`, `-inf` below a lower endpoint, 0 above an upper one.
    pub fn log_cdf(&self, z: f64) -> f64 {
        let t = (z - self.location) / self.scale;
        if self.shape.abs() < 1e-12 {
            return -(-t).exp();
        }
        let s = 1.0 + self.shape * t;
        if s <= 0.0 {
            return if self.shape > 0.0 { f64::NEG_INFINITY } else { 0.0 };
        }
        -s.powf(-1.0 / self.shape)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.log_cdf(z).exp()
    }

    fn neg_log_likelihood(&self, data: &[f64]) -> f64 {
        if !(self.scale > 0.0) {
            return f64::INFINITY;
        }
        let n = data.len() as f64;
        let mut acc = n * self.scale.ln();
        for &x in data {
            let t = (x - self.location) / self.scale;
            if self.shape.abs() < 1e-9 {
                acc += t + (-t).exp();
            } else {
                let s = 1.0 + self.shape * t;
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                acc += (1.0 + 1.0 / self.shape) * s.ln() + s.powf(-1.0 / self.shape);
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GevFit {
    pub params: GevParams,
    /// `1 - G(0)`: probability that a block maximum is nonnegative.
    pub block_exceedance: f64,
    /// Per-sample exceedance `1 - G(0)^(1 / block_size)`.
    pub sample_exceedance: f64,
    pub anderson_darling: f64,
    pub n_maxima: u64,
    pub block_size: u64,
    pub fitter: GevFitter,
    pub warnings: Vec<String>,
}

/// Maxima of consecutive blocks; a trailing partial block is dropped.
pub fn block_maxima(stream: &[f64], block_size: usize) -> Vec<f64> {
    stream
        .chunks_exact(block_size.max(1))
        .map(|b| b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// GEV fit to block maxima and the exceedance probability at zero.
///
/// Probability-weighted moments give the default fit; the likelihood
/// option refines it by Nelder-Mead. The fit carries an Anderson-Darling
/// statistic and warnings for a shape above 0.5 or a statistic above the
/// 5% critical value. This is an estimate, not a confidence bound.
pub fn gev_tail_fit(maxima: &[f64], cfg: &EstimatorConfig) -> Result<GevFit> {
    if maxima.len() < MIN_MAXIMA {
        return Err(Error::InsufficientData { needed: MIN_MAXIMA, got: maxima.len() });
    }
    if maxima.iter().any(|x| !x.is_finite()) {
        return Err(Error::FitFailure("non-finite block maximum".into()));
    }
    let mut sorted = maxima.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut params = pwm_fit(&sorted)?;
    if cfg.gev_fitter == GevFitter::Mle {
        params = mle_refine(&sorted, params);
    }
    if !(params.location.is_finite() && params.scale.is_finite() && params.scale > 0.0 && params.shape.is_finite()) {
        return Err(Error::FitFailure(format!("degenerate parameters {params:?}")));
    }

    let log_g0 = params.log_cdf(0.0);
    let block_exceedance = -log_g0.exp_m1();
    let sample_exceedance = -(log_g0 / cfg.block_size as f64).exp_m1();
    let anderson_darling = anderson_darling(&sorted, &params);

    let mut warnings = Vec::new();
    if params.shape > 0.5 {
        warnings.push(format!("shape {:.3} above 0.5: heavy tail, extrapolation unreliable", params.shape));
    }
    if anderson_darling > AD_CRITICAL {
        warnings.push(format!("Anderson-Darling {anderson_darling:.3} above the 5% critical value {AD_CRITICAL}"));
    }
    Ok(GevFit {
        params,
        block_exceedance,
        sample_exceedance,
        anderson_darling,
        n_maxima: maxima.len() as u64,
        block_size: cfg.block_size as u64,
        fitter: cfg.gev_fitter,
        warnings,
    })
}

/// Hosking's probability-weighted-moment estimator on sorted data.
fn pwm_fit(sorted: &[f64]) -> Result<GevParams> {
    let n = sorted.len() as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (i, &x) in sorted.iter().enumerate() {
        let i = i as f64;
        b0 += x;
        b1 += i / (n - 1.0) * x;
        b2 += i * (i - 1.0) / ((n - 1.0) * (n - 2.0)) * x;
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;
    let l2 = 2.0 * b1 - b0;
    if !(l2 > 0.0) {
        return Err(Error::FitFailure("block maxima have no spread".into()));
    }
    let c = l2 / (3.0 * b2 - b0) - std::f64::consts::LN_2 / 3f64.ln();
    let k = 7.8590 * c + 2.9554 * c * c;
    if !k.is_finite() {
        return Err(Error::FitFailure("moment ratio is not finite".into()));
    }
    if k.abs() < 1e-6 {
        let scale = l2 / std::f64::consts::LN_2;
        return Ok(GevParams { location: b0 - EULER_GAMMA * scale, scale, shape: 0.0 });
    }
    let g = gamma(1.0 + k);
    let scale = l2 * k / (g * (1.0 - 2f64.powf(-k)));
    let location = b0 + scale * (g - 1.0) / k;
    Ok(GevParams { location, scale, shape: -k })
}

fn anderson_darling(sorted: &[f64], params: &GevParams) -> f64 {
    let n = sorted.len();
    let floor = -700.0;
    let mut acc = 0.0;
    for i in 0..n {
        let ln_f = params.log_cdf(sorted[i]).max(floor);
        let ln_sf = (-params.log_cdf(sorted[n - 1 - i]).exp_m1()).ln().max(floor);
        acc += (2 * i + 1) as f64 * (ln_f + ln_sf);
    }
    -(n as f64) - acc / n as f64
}

/// Nelder-Mead on `(location, ln scale, shape)` from the moment fit.
fn mle_refine(data: &[f64], start: GevParams) -> GevParams {
    let to_params = |v: &[f64; 3]| GevParams { location: v[0], scale: v[1].exp(), shape: v[2] };
    let objective = |v: &[f64; 3]| {
        let val = to_params(v).neg_log_likelihood(data);
        if val.is_nan() {
            f64::INFINITY
        } else {
            val
        }
    };
    let x0 = [start.location, start.scale.ln(), start.shape];
    let steps = [0.1 * start.scale, 0.1, 0.05];
    let mut simplex: Vec<([f64; 3], f64)> = (0..4)
        .map(|j| {
            let mut v = x0;
            if j > 0 {
                v[j - 1] += steps[j - 1];
            }
            (v, objective(&v))
        })
        .collect();

    for _ in 0..5000 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        if worst.is_finite() && (worst - best).abs() <= 1e-10 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = [0.0; 3];
        for (v, _) in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += v[d] / 3.0;
            }
        }
        let along = |t: f64| -> [f64; 3] {
            let w = simplex[3].0;
            [0, 1, 2].map(|d| centroid[d] + t * (w[d] - centroid[d]))
        };
        let reflected = along(-1.0);
        let fr = objective(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = objective(&expanded);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[3].1 { along(-0.5) } else { along(0.5) };
            let fc = objective(&contracted);
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (contracted, fc);
            } else {
                let b = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let v = [0, 1, 2].map(|d| b[d] + 0.5 * (entry.0[d] - b[d]));
                    *entry = (v, objective(&v));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    if simplex[0].1 <= objective(&x0) {
        to_params(&simplex[0].0)
    } else {
        start
    }
}

/// Block-maxima fit of the bed's tail metric over `cfg.n` draws. The point
/// and upper bound are both the fitted per-sample exceedance; the bound is
/// tagged as a fit, not a confidence statement.
pub fn gev_estimate(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<RiskEstimate> {
    cfg.validate()?;
    let ys = try_map_chunks(cfg.seed, cfg.n, |range, rng| {
        range
            .map(|_| {
                f.tail_metric(&dist.sample(rng))
                    .ok_or_else(|| Error::Unsupported("GEV fitting needs a tail metric".into()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let ys: Vec<f64> = ys.into_iter().flatten().collect();
    let maxima = block_maxima(&ys, cfg.block_size);
    let fit = gev_tail_fit(&maxima, cfg)?;
    let p = fit.sample_exceedance;
    Ok(RiskEstimate::new(p, p, cfg.confidence, Method::Gev, BoundMethod::GevFit, ys.len() as u64)
        .with_diag("location", fit.params.location)
        .with_diag("scale", fit.params.scale)
        .with_diag("shape", fit.params.shape)
        .with_diag("anderson_darling", fit.anderson_darling)
        .with_diag("block_exceedance", fit.block_exceedance)
        .with_diag("n_maxima", fit.n_maxima as f64)
        .with_diag("warnings", fit.warnings.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn gumbel_sample(location: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| location - scale * (-rng.random::<f64>().ln()).ln()).collect()
    }

    #[test]
    fn gumbel_exceedance_within_factor_one_and_a_half() {
        let data = gumbel_sample(-3.0, 1.0, 500, 3);
        let analytic = -(-(-3.0f64).exp()).exp_m1();
        for fitter in [GevFitter::Pwm, GevFitter::Mle] {
            let cfg = EstimatorConfig { gev_fitter: fitter, ..EstimatorConfig::default() };
            let fit = gev_tail_fit(&data, &cfg).unwrap();
            let r = fit.block_exceedance / analytic;
            assert!(r > 1.0 / 1.5 && r < 1.5, "{fitter:?}: {} vs {analytic}", fit.block_exceedance);
        }
    }

    #[test]
    fn mle_does_not_lower_the_likelihood() {
        let data = gumbel_sample(1.0, 2.0, 200, 8);
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        let pwm = pwm_fit(&sorted).unwrap();
        let mle = mle_refine(&sorted, pwm);
        assert!(mle.neg_log_likelihood(&data) <= pwm.neg_log_likelihood(&data));
    }

    #[test]
    fn far_below_zero_gives_no_exceedance() {
        let data = gumbel_sample(-100.0, 0.01, 100, 1);
        let fit = gev_tail_fit(&data, &EstimatorConfig::default()).unwrap();
        assert!(fit.block_exceedance < 1e-12, "{}", fit.block_exceedance);
    }

    #[test]
    fn too_few_maxima() {
        let err = gev_tail_fit(&[1.0; 19], &EstimatorConfig::default()).unwrap_err();
        assert_eq!(err, Error::InsufficientData { needed: 20, got: 19 });
    }

    #[test]
    fn constant_maxima_fail_to_fit() {
        assert!(matches!(gev_tail_fit(&[1.0; 40], &EstimatorConfig::default()), Err(Error::FitFailure(_))));
    }

    #[test]
    fn heavy_tail_warns() {
        // Frechet-type maxima with shape 0.8.
        let mut rng = stream_rng(4, 0);
        let data: Vec<f64> =
            (0..400).map(|_| ((-rng.random::<f64>().ln()).powf(-0.8) - 1.0) / 0.8).collect();
        let fit = gev_tail_fit(&data, &EstimatorConfig::default()).unwrap();
        assert!(fit.params.shape > 0.5, "{:?}", fit.params);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn block_maxima_drop_partial_block() {
        assert_eq!(block_maxima(&[1.0, 3.0, 2.0, 0.0, 9.0], 2), vec![3.0, 2.0]);
    }
}
