//! Empirical checks of the tail inequalities, growth rates and limit laws
//! behind the tests.
//!
//! Every check takes its parameters, a seed and an [`Exec`](crate::par::Exec).
//! Trials use streams derived from `(seed, trial)` so reports do not depend
//! on the worker count.

mod bounds;
mod limits;
mod rates;
mod size;
mod suite;

pub use bounds::{
    moment_constant, verify_hoeffding, verify_maxnorm_bound, verify_subgaussian_sum, verify_symmetrized_bounds,
    BoundPoint, BoundReport, HoeffdingConfig, HoeffdingLaw, MaxNormConfig, SubGaussianConfig, SymmetrizedConfig,
};
pub use limits::{
    verify_clt_covariance, verify_lemma74, verify_tilde_t, CltConfig, CltReport, Lemma74Config, Lemma74Point,
    Lemma74Report, NormalizerCltReport, TildeTConfig, TildeTReport,
};
pub use rates::{
    normalizing_sequence, verify_log_dimension_scaling, verify_rate, verify_rate_exponential, verify_rate_subgaussian,
    LogScalingConfig, LogScalingReport, RateChoice, RateConfig, RateParams, RatePoint, RateReport,
};
pub use size::{pvalue_uniformity, type1_sweep, CovarianceFamily, SizeCell, SizeConfig, SizeTable, UniformityReport};
pub use suite::{run_suite, BoundCheck, Check, Suite, SuiteReport, VerifyConfig};

use crate::rng;

/// `ln(max(x, e))`; at least 1.
pub fn log_plus(x: f64) -> f64 {
    x.max(std::f64::consts::E).ln()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between the empirical law of `xs` and `cdf`.
pub fn ks_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn ks_uniform(ps: &[f64]) -> f64 {
    ks_distance(ps, |p| p.clamp(0.0, 1.0))
}

/// KS distance to the normal law with the sample mean and standard deviation.
pub fn ks_normal_fitted(xs: &[f64]) -> f64 {
    let (mean, sd) = mean_sd(xs);
    if sd == 0.0 {
        return 1.0;
    }
    ks_distance(xs, |x| std_normal_cdf((x - mean) / sd))
}

pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Binomial standard error of a proportion.
pub(crate) fn proportion_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials.max(1) as f64).sqrt()
}

pub(crate) fn trial_seed(seed: u64, trial: usize) -> u64 {
    rng::derive(seed, rng::TRIAL, trial as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_plus_examples() {
        assert_eq!(log_plus(0.0), 1.0);
        assert_eq!(log_plus(std::f64::consts::E), 1.0);
        assert!((log_plus(std::f64::consts::E.powi(2)) - 2.0).abs() < 1e-15);
        assert_eq!(log_plus(-5.0), 1.0);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((std_normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn ks_examples() {
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&grid) - 0.005).abs() < 1e-12);
        assert_eq!(ks_uniform(&[0.0; 10]), 1.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
