//! One- and two-sample tests of the mean profile.
//!
//! The statistic is the norm of the normalized column sums of the centered
//! data. Its null law is approximated by norms of Gaussian draws whose
//! covariance is the shrinkage estimate, rescaled to the normalizer in use.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::covariance::{normalized_sum_covariance, shrinkage_estimate, CovMatrix, ShrinkageTarget};
use crate::error::{config_err, Error, Result};
use crate::model::{center, CovarianceStructure, TriangularSample};
use crate::montecarlo::{
    alpha_resolved, critical_value, draw_null_distributions, p_value, NullDistribution, DEFAULT_BANDWIDTH,
    DEFAULT_DRAWS,
};
use crate::par::Exec;
use crate::stats::{mean_statistic, norm, normalized_sum, NormKind, NormalizerKind, StatVector};

/// How each group is centered in a two-sample test.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoSampleCenter {
    /// Each group at its specified profile; missing profiles are zero.
    #[default]
    Specified,
    /// Both groups at the coordinate-wise mean of the pooled observations.
    PooledCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSpec {
    pub norm_kind: NormKind,
    pub normalizer: NormalizerKind,
    pub alpha: f64,
    pub mc_draws: usize,
    pub bandwidth: f64,
    pub target: ShrinkageTarget,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub center: TwoSampleCenter,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TestSpec {
    fn default() -> Self {
        TestSpec {
            norm_kind: NormKind::Sup,
            normalizer: NormalizerKind::RandomColumnwise,
            alpha: 0.05,
            mc_draws: DEFAULT_DRAWS,
            bandwidth: DEFAULT_BANDWIDTH,
            target: ShrinkageTarget::CompoundSymmetric,
            lambda: None,
            seed: 0,
            center: TwoSampleCenter::Specified,
            exec: Exec::default(),
        }
    }
}

impl TestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("alpha must be in (0, 1)"));
        }
        if self.mc_draws < 1 {
            return Err(config_err("need at least one Monte Carlo draw"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(config_err("bandwidth must be > 0"));
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(config_err("lambda must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SampleSizes {
    One(usize),
    Two([usize; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub lambda: Vec<f64>,
    pub psd_repaired: bool,
    pub norm: NormKind,
    pub normalizer: NormalizerKind,
    pub n: SampleSizes,
    pub dim: usize,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// A report together with the calibrated null distribution it used.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub report: TestReport,
    pub null: NullDistribution,
}

/// Limiting covariance of the normalized sum under independent missingness:
/// off-diagonal entries scale by `p^k`, diagonal entries by `p^(k-1)`, where
/// `k = 1` for column-wise and `k = 2` for `sqrt(n)` normalizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaLimit {
    pub gamma: CovarianceStructure,
    pub p: f64,
    pub variant: u8,
}

impl GammaLimit {
    pub fn new(gamma: CovarianceStructure, p: f64, variant: u8) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(config_err("p must be in (0, 1]"));
        }
        if variant != 1 && variant != 2 {
            return Err(config_err("limit variant must be 1 or 2"));
        }
        Ok(GammaLimit { gamma, p, variant })
    }

    pub fn for_normalizer(gamma: CovarianceStructure, p: f64, normalizer: NormalizerKind) -> Result<Self> {
        let variant = match normalizer {
            NormalizerKind::RandomColumnwise => 1,
            NormalizerKind::SqrtN => 2,
        };
        Self::new(gamma, p, variant)
    }

    /// Dense row-major limit covariance.
    pub fn matrix(&self) -> Vec<f64> {
        let dim = self.gamma.dim();
        let k = self.variant as i32;
        let mut m = self.gamma.matrix();
        for u in 0..dim {
            for v in 0..dim {
                let factor = if u == v { self.p.powi(k - 1) } else { self.p.powi(k) };
                m[u * dim + v] *= factor;
            }
        }
        m
    }
}

fn padded_mean(null_mean: &[f64], dim: usize) -> Vec<f64> {
    let mut m = null_mean.to_vec();
    m.resize(dim.max(m.len()), 0.0);
    m
}

/// Calibrated covariance of the normalized sum for one group.
fn group_covariance(sample: &TriangularSample, null_mean: &[f64], spec: &TestSpec) -> Result<(CovMatrix, f64)> {
    let shrunk = shrinkage_estimate(sample, null_mean, &spec.target, spec.lambda)?;
    let centered = center(sample, null_mean);
    let weighted = normalized_sum_covariance(&shrunk.matrix, &centered, spec.normalizer);
    Ok((weighted, shrunk.lambda))
}

struct Calibrated {
    statistics: Vec<f64>,
    nulls: Vec<NullDistribution>,
    lambdas: Vec<f64>,
}

fn calibrate_one(
    sample: &TriangularSample,
    null_mean: &[f64],
    spec: &TestSpec,
    kinds: &[NormKind],
) -> Result<Calibrated> {
    spec.validate()?;
    let null_mean = padded_mean(null_mean, sample.max_dim());
    let centered = center(sample, &null_mean);
    let s_tilde = normalized_sum(&centered, spec.normalizer);
    let (cov, lambda) = group_covariance(sample, &null_mean, spec)?;
    let nulls = draw_null_distributions(&cov, spec.mc_draws, kinds, spec.bandwidth, spec.seed, spec.exec)?;
    Ok(Calibrated {
        statistics: kinds.iter().map(|&k| norm(&s_tilde, k)).collect(),
        nulls,
        lambdas: vec![lambda],
    })
}

/// Column-wise mean of the observed cells of both groups.
pub fn pooled_mean(a: &TriangularSample, b: &TriangularSample) -> Vec<f64> {
    let dim = a.max_dim().max(b.max_dim());
    let mut sums = vec![0.0; dim];
    let mut counts = vec![0usize; dim];
    for row in a.rows().iter().chain(b.rows()) {
        for (j, cell) in row.iter().enumerate() {
            if cell.observed {
                sums[j] += cell.value;
                counts[j] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

fn calibrate_two(
    a: &TriangularSample,
    b: &TriangularSample,
    means: (&[f64], &[f64]),
    spec: &TestSpec,
    kinds: &[NormKind],
) -> Result<Calibrated> {
    spec.validate()?;
    let dim = a.max_dim().max(b.max_dim());
    if dim == 0 {
        return Err(Error::Empty("two-sample dimension is zero"));
    }
    let (mean_a, mean_b) = match spec.center {
        TwoSampleCenter::Specified => (padded_mean(means.0, dim), padded_mean(means.1, dim)),
        TwoSampleCenter::PooledCenter => {
            let pooled = pooled_mean(a, b);
            (pooled.clone(), pooled)
        }
    };
    let s_a = normalized_sum(&center(a, &mean_a), spec.normalizer);
    let s_b = normalized_sum(&center(b, &mean_b), spec.normalizer);
    let diff = s_a.padded_sub(&s_b);

    let (cov_a, lambda_a) = group_covariance(a, &mean_a, spec)?;
    let (cov_b, lambda_b) = group_covariance(b, &mean_b, spec)?;
    // G1 - G2 with independent Gaussian terms has covariance Sigma1 + Sigma2.
    let cov = cov_a.padded(dim).add(&cov_b.padded(dim))?;
    let nulls = draw_null_distributions(&cov, spec.mc_draws, kinds, spec.bandwidth, spec.seed, spec.exec)?;
    Ok(Calibrated {
        statistics: kinds.iter().map(|&k| norm(&diff, k)).collect(),
        nulls,
        lambdas: vec![lambda_a, lambda_b],
    })
}

fn report(
    statistic: f64,
    null: &NullDistribution,
    spec: &TestSpec,
    lambdas: &[f64],
    n: SampleSizes,
    dim: usize,
    mode: &str,
) -> TestReport {
    let c = critical_value(null, spec.alpha);
    let mut warnings = Vec::new();
    if !alpha_resolved(null.t(), spec.alpha) {
        warnings.push(format!(
            "mc_draws * alpha = {} < 1; the critical value is the largest draw",
            null.t() as f64 * spec.alpha
        ));
    }
    if null.psd_repaired {
        warnings.push("calibration covariance was not positive definite; eigenvalues floored".into());
    }
    let mut spec_json = serde_json::to_value(spec).unwrap_or_default();
    spec_json["norm_kind"] = json!(null.norm_kind.to_string());
    TestReport {
        statistic,
        critical_value: c,
        p_value: p_value(null, statistic),
        reject: statistic > c,
        lambda: lambdas.to_vec(),
        psd_repaired: null.psd_repaired,
        norm: null.norm_kind,
        normalizer: spec.normalizer,
        n,
        dim,
        seed: spec.seed,
        config: json!({
            "mode": mode,
            "spec": spec_json,
            "covariance_estimator": "pairwise-complete, null-centered, moment divisor",
            "p_value_rule": "add-one empirical survival",
            "warnings": warnings,
        }),
    }
}

/// One-sample tests for several norms sharing the same calibration draws.
pub fn one_sample_tests(
    sample: &TriangularSample,
    null_mean: &[f64],
    spec: &TestSpec,
    kinds: &[NormKind],
) -> Result<Vec<TestOutcome>> {
    let cal = calibrate_one(sample, null_mean, spec, kinds)?;
    let dim = sample.max_dim();
    Ok(cal
        .statistics
        .iter()
        .zip(cal.nulls)
        .map(|(&stat, null)| TestOutcome {
            report: report(
                stat,
                &null,
                spec,
                &cal.lambdas,
                SampleSizes::One(sample.n()),
                dim,
                "one-sample",
            ),
            null,
        })
        .collect())
}

pub fn one_sample_outcome(sample: &TriangularSample, null_mean: &[f64], spec: &TestSpec) -> Result<TestOutcome> {
    Ok(one_sample_tests(sample, null_mean, spec, &[spec.norm_kind])?
        .pop()
        .expect("one norm requested"))
}

pub fn one_sample_test(sample: &TriangularSample, null_mean: &[f64], spec: &TestSpec) -> Result<TestReport> {
    Ok(one_sample_outcome(sample, null_mean, spec)?.report)
}

pub fn two_sample_tests(
    a: &TriangularSample,
    b: &TriangularSample,
    means: (&[f64], &[f64]),
    spec: &TestSpec,
    kinds: &[NormKind],
) -> Result<Vec<TestOutcome>> {
    let cal = calibrate_two(a, b, means, spec, kinds)?;
    let dim = a.max_dim().max(b.max_dim());
    Ok(cal
        .statistics
        .iter()
        .zip(cal.nulls)
        .map(|(&stat, null)| TestOutcome {
            report: report(
                stat,
                &null,
                spec,
                &cal.lambdas,
                SampleSizes::Two([a.n(), b.n()]),
                dim,
                "two-sample",
            ),
            null,
        })
        .collect())
}

pub fn two_sample_outcome(
    a: &TriangularSample,
    b: &TriangularSample,
    means: (&[f64], &[f64]),
    spec: &TestSpec,
) -> Result<TestOutcome> {
    Ok(two_sample_tests(a, b, means, spec, &[spec.norm_kind])?
        .pop()
        .expect("one norm requested"))
}

/// Two-sample test with both groups centered per `spec.center` (zero
/// profiles in `Specified` mode).
pub fn two_sample_test(a: &TriangularSample, b: &TriangularSample, spec: &TestSpec) -> Result<TestReport> {
    Ok(two_sample_outcome(a, b, (&[], &[]), spec)?.report)
}

/// The sample mean profile, for reporting.
pub fn mean_profile(sample: &TriangularSample) -> StatVector {
    mean_statistic(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{from_matrix, generate_sample, GenConfig, RowLengthLaw, TailFamily};

    fn gaussian(n: usize, b: usize, rho: f64, seed: u64) -> TriangularSample {
        generate_sample(&GenConfig {
            n,
            tail: TailFamily::GaussianCoords {
                covariance: CovarianceStructure::CompoundSymmetric {
                    dim: b,
                    variance: 1.0,
                    rho,
                },
            },
            row_law: RowLengthLaw::Fixed { b },
            missing_p: 1.0,
            seed,
        })
        .unwrap()
    }

    fn shifted(s: &TriangularSample, coords: &[usize], delta: f64) -> TriangularSample {
        let rows: Vec<Vec<Option<f64>>> = s
            .rows()
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, c)| c.get().map(|v| if coords.contains(&j) { v + delta } else { v }))
                    .collect()
            })
            .collect();
        from_matrix(&rows).unwrap()
    }

    #[test]
    fn data_at_null_mean_gives_zero_statistic() {
        let rows = vec![vec![Some(1.0), Some(2.0), Some(3.0)]; 6];
        let s = from_matrix(&rows).unwrap();
        let r = one_sample_test(&s, &[1.0, 2.0, 3.0], &TestSpec::default()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.reject);
    }

    #[test]
    fn large_shift_rejects() {
        // With the covariance centered at the null, the studentized shift is
        // capped near sqrt(n), so n must be well above 10 for p <= 1/2001.
        let s = shifted(&gaussian(40, 5, 0.3, 8), &[0], 10.0);
        let r = one_sample_test(&s, &[0.0; 5], &TestSpec::default()).unwrap();
        assert!(r.reject);
        assert_eq!(r.p_value, 1.0 / 2001.0);
    }

    #[test]
    fn identical_groups() {
        let s = gaussian(10, 8, 0.3, 2);
        let r = two_sample_test(&s, &s, &TestSpec::default()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n, SampleSizes::Two([10, 10]));
    }

    #[test]
    fn two_sample_is_symmetric_and_detects_shift() {
        let a = gaussian(30, 20, 0.3, 3);
        let b = shifted(&gaussian(30, 20, 0.3, 4), &[2, 7, 11], 4.0);
        let spec = TestSpec::default();
        let ab = two_sample_test(&a, &b, &spec).unwrap();
        let ba = two_sample_test(&b, &a, &spec).unwrap();
        assert_eq!(ab.statistic, ba.statistic);
        assert!(ab.reject);
        assert_eq!(ab.p_value, 1.0 / 2001.0);

        let pooled = TestSpec {
            center: TwoSampleCenter::PooledCenter,
            ..TestSpec::default()
        };
        let r = two_sample_test(&a, &b, &pooled).unwrap();
        assert!(r.reject);
    }

    #[test]
    fn unequal_dimensions_are_zero_padded() {
        let a = gaussian(12, 6, 0.2, 5);
        let b = gaussian(9, 4, 0.2, 6);
        let r = two_sample_test(&a, &b, &TestSpec::default()).unwrap();
        assert_eq!(r.dim, 6);
        assert_eq!(r.n, SampleSizes::Two([12, 9]));
    }

    #[test]
    fn scale_equivariance() {
        let s = gaussian(10, 15, 0.3, 10);
        let mu = vec![0.2; 15];
        let spec = TestSpec {
            norm_kind: NormKind::Lp(2.0),
            ..TestSpec::default()
        };
        let base = one_sample_test(&s, &mu, &spec).unwrap();
        let scaled_mu: Vec<f64> = mu.iter().map(|m| m * 10.0).collect();
        let scaled = one_sample_test(&s.scaled(10.0), &scaled_mu, &spec).unwrap();
        assert!((scaled.statistic - 10.0 * base.statistic).abs() < 1e-9 * scaled.statistic);
        assert_eq!(scaled.p_value, base.p_value);
        assert_eq!(scaled.reject, base.reject);
        assert!((scaled.lambda[0] - base.lambda[0]).abs() < 1e-12);
    }

    #[test]
    fn reject_matches_critical_value() {
        for seed in 0..10 {
            let s = gaussian(10, 10, 0.3, 100 + seed);
            let r = one_sample_test(
                &s,
                &[0.0; 10],
                &TestSpec {
                    mc_draws: 200,
                    seed,
                    ..TestSpec::default()
                },
            )
            .unwrap();
            assert_eq!(r.reject, r.statistic > r.critical_value);
            assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        }
    }

    #[test]
    fn sup_statistic_is_monotone_in_a_coordinate() {
        let base = gaussian(10, 6, 0.3, 12);
        let spec = TestSpec {
            mc_draws: 50,
            ..TestSpec::default()
        };
        let mut last = 0.0;
        for delta in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let s = shifted(&base, &[3], delta);
            let stat = one_sample_test(&s, &[0.0; 6], &spec).unwrap().statistic;
            assert!(stat >= last);
            last = stat;
        }
    }

    #[test]
    fn bad_spec_is_rejected() {
        let s = gaussian(5, 3, 0.0, 1);
        for spec in [
            TestSpec {
                alpha: 0.0,
                ..TestSpec::default()
            },
            TestSpec {
                mc_draws: 0,
                ..TestSpec::default()
            },
            TestSpec {
                lambda: Some(2.0),
                ..TestSpec::default()
            },
        ] {
            assert!(one_sample_test(&s, &[0.0; 3], &spec).is_err());
        }
    }

    #[test]
    fn gamma_limits() {
        let cs = CovarianceStructure::CompoundSymmetric {
            dim: 3,
            variance: 1.0,
            rho: 0.3,
        };
        let g1 = GammaLimit::new(cs.clone(), 0.8, 1).unwrap().matrix();
        assert!((g1[0] - 1.0).abs() < 1e-15);
        assert!((g1[1] - 0.24).abs() < 1e-15);
        let g2 = GammaLimit::new(cs.clone(), 0.8, 2).unwrap().matrix();
        assert!((g2[0] - 0.8).abs() < 1e-15);
        assert!((g2[1] - 0.192).abs() < 1e-15);
        let one = GammaLimit::new(cs.clone(), 1.0, 1).unwrap().matrix();
        assert_eq!(one, GammaLimit::new(cs.clone(), 1.0, 2).unwrap().matrix());
        assert_eq!(one, cs.matrix());
        assert!(GammaLimit::new(cs, 0.0, 1).is_err());
    }
}
