//! Monte Carlo calibration of the null distribution of a norm statistic.
//!
//! Draws `Y_i = L Z_i` with `L L^T = Sigma*` and keeps the sorted norms. Each
//! draw has its own counter-derived stream, so the sample does not depend on
//! how draws are scheduled across threads.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::covariance::{factorize, CovMatrix, Factor};
use crate::error::{config_err, Result};
use crate::par::Exec;
use crate::rng;
use crate::stats::{norm_slice, NormKind};

pub const DEFAULT_DRAWS: usize = 2000;
pub const DEFAULT_BANDWIDTH: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullDistribution {
    /// Sorted ascending.
    pub norm_samples: Vec<f64>,
    pub bandwidth: f64,
    pub norm_kind: NormKind,
    pub seed: u64,
    pub psd_repaired: bool,
}

impl NullDistribution {
    /// Wraps precomputed norms (sorted here).
    pub fn from_norms(mut norms: Vec<f64>, bandwidth: f64, norm_kind: NormKind, seed: u64) -> Self {
        norms.sort_by(f64::total_cmp);
        NullDistribution {
            norm_samples: norms,
            bandwidth,
            norm_kind,
            seed,
            psd_repaired: false,
        }
    }

    pub fn t(&self) -> usize {
        self.norm_samples.len()
    }
}

/// Norms of `t` Gaussian draws through `factor`, one vector per requested norm,
/// in draw order.
pub fn draw_norms(factor: &Factor, t: usize, kinds: &[NormKind], seed: u64, exec: Exec) -> Vec<Vec<f64>> {
    let dim = factor.dim();
    let per_draw = exec.map(t, |i| {
        let mut rng = rng::stream(seed, rng::MC_DRAW, i as u64);
        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y = vec![0.0; dim];
        factor.apply(&z, &mut y);
        kinds.iter().map(|&k| norm_slice(&y, k)).collect::<Vec<f64>>()
    });
    (0..kinds.len())
        .map(|k| per_draw.iter().map(|d| d[k]).collect())
        .collect()
}

/// Null distributions for several norms from one shared set of draws.
pub fn draw_null_distributions(
    sigma_star: &CovMatrix,
    t: usize,
    kinds: &[NormKind],
    bandwidth: f64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<NullDistribution>> {
    if t < 1 {
        return Err(config_err("need at least one Monte Carlo draw"));
    }
    if !(bandwidth > 0.0) {
        return Err(config_err("kernel bandwidth must be > 0"));
    }
    let factor = factorize(sigma_star)?;
    Ok(draw_norms(&factor, t, kinds, seed, exec)
        .into_iter()
        .zip(kinds)
        .map(|(norms, &kind)| NullDistribution {
            psd_repaired: factor.repaired,
            ..NullDistribution::from_norms(norms, bandwidth, kind, seed)
        })
        .collect())
}

pub fn draw_null_distribution(
    sigma_star: &CovMatrix,
    t: usize,
    kind: NormKind,
    bandwidth: f64,
    seed: u64,
    exec: Exec,
) -> Result<NullDistribution> {
    Ok(draw_null_distributions(sigma_star, t, &[kind], bandwidth, seed, exec)?
        .pop()
        .expect("one norm requested"))
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian-kernel density estimate of the norm distribution at `x`.
pub fn kde_density(nd: &NullDistribution, x: f64) -> f64 {
    let c = nd.bandwidth;
    let t = nd.t() as f64;
    nd.norm_samples.iter().map(|s| std_normal_pdf((x - s) / c)).sum::<f64>() / (t * c)
}

/// `(x, density)` on `points` evenly spaced values spanning the samples
/// plus five bandwidths either side.
pub fn density_grid(nd: &NullDistribution, points: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = match (nd.norm_samples.first(), nd.norm_samples.last()) {
        (Some(lo), Some(hi)) => (lo - 5.0 * nd.bandwidth, hi + 5.0 * nd.bandwidth),
        _ => return Vec::new(),
    };
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = lo + step * i as f64;
            (x, kde_density(nd, x))
        })
        .collect()
}

/// Add-one empirical survival: `(1 + #{norm >= observed}) / (t + 1)`.
pub fn p_value(nd: &NullDistribution, observed: f64) -> f64 {
    let below = nd.norm_samples.partition_point(|&s| s < observed);
    let exceed = nd.t() - below;
    (1 + exceed) as f64 / (nd.t() + 1) as f64
}

/// Index (1-based) of the order statistic used as critical value:
/// `ceil((1 - alpha) t)`, clamped to `[1, t]`.
pub fn critical_rank(t: usize, alpha: f64) -> usize {
    let upper = (alpha * t as f64 + 1e-9).floor() as usize;
    t.saturating_sub(upper).clamp(1, t.max(1))
}

/// `ceil((1 - alpha) t)`-th order statistic; reject when the statistic is
/// strictly larger.
pub fn critical_value(nd: &NullDistribution, alpha: f64) -> f64 {
    nd.norm_samples[critical_rank(nd.t(), alpha) - 1]
}

/// Whether `alpha` is resolvable with `t` draws (`t alpha >= 1`).
pub fn alpha_resolved(t: usize, alpha: f64) -> bool {
    t as f64 * alpha >= 1.0 - 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nd(samples: Vec<f64>) -> NullDistribution {
        NullDistribution::from_norms(samples, DEFAULT_BANDWIDTH, NormKind::Sup, 0)
    }

    #[test]
    fn zero_covariance_gives_zero_norms() {
        let d = draw_null_distribution(&CovMatrix::zeros(4), 50, NormKind::Lp(2.0), 0.7, 1, Exec::Sequential).unwrap();
        assert!(d.norm_samples.iter().all(|&x| x == 0.0));
        assert_eq!(p_value(&d, 0.0), 1.0);
    }

    #[test]
    fn half_normal_mean() {
        let d = draw_null_distribution(&CovMatrix::identity(1), 2000, NormKind::Sup, 0.7, 3, Exec::default()).unwrap();
        let mean = d.norm_samples.iter().sum::<f64>() / 2000.0;
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - target).abs() < 3.0 * sd / 2000f64.sqrt(), "mean {mean}");
    }

    #[test]
    fn draws_are_deterministic_across_exec_modes() {
        let sigma = CovMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let a = draw_null_distribution(&sigma, 300, NormKind::Lp(4.0), 0.7, 9, Exec::Sequential).unwrap();
        let b = draw_null_distribution(&sigma, 300, NormKind::Lp(4.0), 0.7, 9, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(draw_null_distribution(&sigma, 0, NormKind::Sup, 0.7, 9, Exec::Sequential).is_err());
    }

    #[test]
    fn kde_examples() {
        let d = NullDistribution::from_norms(vec![2.0], 0.7, NormKind::Sup, 0);
        assert_relative_eq!(kde_density(&d, 2.0), 0.569_917_543_430_618_5, epsilon = 1e-12);
        assert!(kde_density(&d, 2.0 + 10.5 * 0.7) < 1e-20);

        let d = nd(vec![0.3, 1.0, 1.1, 2.5, 4.0]);
        let grid = density_grid(&d, 4001);
        let step = grid[1].0 - grid[0].0;
        let integral: f64 = grid.windows(2).map(|w| 0.5 * step * (w[0].1 + w[1].1)).sum();
        assert!((0.999..=1.001).contains(&integral), "{integral}");
        assert!(grid.iter().all(|&(_, y)| y >= 0.0));
    }

    #[test]
    fn p_value_examples() {
        let samples: Vec<f64> = (1..=2000).map(f64::from).collect();
        let d = nd(samples);
        assert_eq!(p_value(&d, 0.5), 1.0);
        assert_relative_eq!(p_value(&d, 5000.0), 1.0 / 2001.0);
        // median (1000.5 lies between; take the 1000th sample itself)
        assert_relative_eq!(p_value(&d, 1001.0), 1001.0 / 2001.0);
    }

    #[test]
    fn critical_value_examples() {
        let d = nd((1..=100).map(f64::from).collect());
        let c = critical_value(&d, 0.05);
        assert_eq!(c, 95.0);
        assert_eq!(d.norm_samples.iter().filter(|&&s| s > c).count(), 5);
        assert_eq!(critical_value(&d, 0.999), 1.0);
        let flat = nd(vec![3.0; 50]);
        assert_eq!(critical_value(&flat, 0.05), 3.0);
        assert!(alpha_resolved(2000, 0.05));
        assert!(!alpha_resolved(10, 0.05));
        assert_eq!(critical_rank(100, 0.29), 71);
    }

    proptest! {
        #[test]
        fn p_value_is_monotone(mut xs in prop::collection::vec(0.0f64..10.0, 1..200), a in 0.0f64..12.0, b in 0.0f64..12.0) {
            xs.iter_mut().for_each(|x| *x = (*x * 8.0).round() / 8.0);
            let d = nd(xs);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p_value(&d, lo) >= p_value(&d, hi));
            let p = p_value(&d, lo);
            prop_assert!(p > 0.0 && p <= 1.0);
        }

        #[test]
        fn decision_routes_agree(mut xs in prop::collection::vec(0.0f64..10.0, 20..300), alpha in 0.01f64..0.5, stat in 0.0f64..12.0) {
            xs.iter_mut().for_each(|x| *x = (*x * 8.0).round() / 8.0);
            let d = nd(xs);
            let t = d.t();
            let c = critical_value(&d, alpha);
            let k = critical_rank(t, alpha);
            // statistic > c  <=>  p <= (1 + (t - k)) / (t + 1), barring ties at c
            let alpha_tilde = (1 + t - k) as f64 / (t + 1) as f64;
            let ties = d.norm_samples.iter().filter(|&&s| s == c).count() > 1;
            if !ties {
                prop_assert_eq!(stat > c, p_value(&d, stat) <= alpha_tilde + 1e-15);
            }
            prop_assert!(p_value(&d, c) > alpha_tilde - 1e-15 || ties);
        }
    }
}
