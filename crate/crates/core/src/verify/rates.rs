//! Growth envelopes for the sup-norm of the sums as `n` grows.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{log_plus, median, proportion_se, trial_seed};
use crate::error::{config_err, Result};
use crate::model::{generate_sample_with, GenConfig, RowLengthLaw, TailFamily};
use crate::par::Exec;
use crate::rng;
use crate::stats::{norm, normalized_sum, raw_sum, NormKind, NormalizerKind};

/// `(L(n + 3))^(1/2)`, the normalizing sequence for the almost-sure bound
/// on the sup-norm when `k / (16 c)` grows like `L(j + 3)`.
pub fn normalizing_sequence(n: usize) -> f64 {
    log_plus(n as f64 + 3.0).sqrt()
}

/// Free constants of an envelope; the derived ones follow from the tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateChoice {
    SubGaussian {
        #[serde(default = "one")]
        theta2: f64,
    },
    ExponentialPower {
        c1: f64,
        #[serde(default = "one")]
        c3: f64,
    },
    Polynomial {
        beta: f64,
        gamma: f64,
        #[serde(default = "nine")]
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn nine() -> f64 {
    9.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateParams {
    /// `h(n) = (L(E N*) / theta1 + theta2 L(n))^(1/2)` for `||S~||_inf`.
    SubGaussian { c: f64, k: f64, theta1: f64, theta2: f64 },
    /// `n^(1/2) s_n h(n)` for `||S||_inf` with
    /// `s_n = c1 (L(E N*) + 2 L(n))^(1/r)` and
    /// `h(n) = (L(E N*) / c2 + c3 L(n))^(1/2)`.
    ExponentialPower {
        r: f64,
        c: f64,
        k: f64,
        c1: f64,
        c2: f64,
        c3: f64,
        moment: f64,
    },
    /// `b s_n n^(1/2) L(E N*)^(1/2)` for `||S||_inf` with
    /// `s_n = (n E N*)^(1/k + beta)`.
    Polynomial {
        c: f64,
        k: f64,
        beta: f64,
        gamma: f64,
        b: f64,
        moment: f64,
    },
}

impl RateParams {
    pub fn new(tail: &TailFamily, choice: &RateChoice) -> Result<Self> {
        match *choice {
            RateChoice::SubGaussian { theta2 } => Self::subgaussian(tail, theta2),
            RateChoice::ExponentialPower { c1, c3 } => Self::exponential(tail, c1, c3),
            RateChoice::Polynomial { beta, gamma, b } => Self::polynomial(tail, beta, gamma, b),
        }
    }

    /// `theta1 = k / (16 c)`.
    pub fn subgaussian(tail: &TailFamily, theta2: f64) -> Result<Self> {
        tail.validate()?;
        let (c, k) = tail
            .subgaussian_constants()
            .ok_or_else(|| config_err("sub-Gaussian envelope needs an r = 2 family"))?;
        if !(theta2 > 0.0) {
            return Err(config_err("theta2 must be > 0"));
        }
        Ok(RateParams::SubGaussian {
            c,
            k,
            theta1: k / (16.0 * c),
            theta2,
        })
    }

    /// `c2 = k / (128 c)`; needs `c1 > 2 / k^(1/r)` and `c3 > 0`.
    pub fn exponential(tail: &TailFamily, c1: f64, c3: f64) -> Result<Self> {
        tail.validate()?;
        let (r, k, c) = match *tail {
            TailFamily::ExponentialPower { r, k, c } if r < 2.0 && k.is_finite() => (r, k, c),
            _ => {
                return Err(config_err(
                    "exponential envelope needs an exponential-power tail with r < 2",
                ))
            }
        };
        let floor = 2.0 / k.powf(1.0 / r);
        if !(c1 > floor) {
            return Err(config_err(format!("c1 must exceed 2 / k^(1/r) = {floor}")));
        }
        if !(c3 > 0.0) {
            return Err(config_err("c3 must be > 0"));
        }
        Ok(RateParams::ExponentialPower {
            r,
            c,
            k,
            c1,
            c2: k / (128.0 * c),
            c3,
            moment: super::moment_constant(tail)?,
        })
    }

    /// Needs `k > 2`, `beta > 0`, `gamma >= 1`, `b > 8` and
    /// `(gamma + 1) k beta > 1`.
    pub fn polynomial(tail: &TailFamily, beta: f64, gamma: f64, b: f64) -> Result<Self> {
        tail.validate()?;
        let (k, c) = match *tail {
            TailFamily::PolynomialTail { k, c } if k > 2.0 => (k, c),
            _ => return Err(config_err("polynomial envelope needs a polynomial tail with k > 2")),
        };
        if !(beta > 0.0) {
            return Err(config_err("beta must be > 0"));
        }
        if !(gamma >= 1.0) {
            return Err(config_err("gamma must be >= 1"));
        }
        if !(b > 8.0) {
            return Err(config_err("b must exceed 8"));
        }
        if !((gamma + 1.0) * k * beta > 1.0) {
            return Err(config_err("need (gamma + 1) k beta > 1"));
        }
        Ok(RateParams::Polynomial {
            c,
            k,
            beta,
            gamma,
            b,
            moment: super::moment_constant(tail)?,
        })
    }

    pub fn envelope(&self, n: usize, expected_max: f64) -> f64 {
        let nf = n as f64;
        let l_max = log_plus(expected_max);
        let l_n = log_plus(nf);
        match *self {
            RateParams::SubGaussian { theta1, theta2, .. } => (l_max / theta1 + theta2 * l_n).sqrt(),
            RateParams::ExponentialPower { r, c1, c2, c3, .. } => {
                let s_n = c1 * (l_max + 2.0 * l_n).powf(1.0 / r);
                let h = (l_max / c2 + c3 * l_n).sqrt();
                nf.sqrt() * s_n * h
            }
            RateParams::Polynomial { k, beta, b, .. } => {
                let s_n = (nf * expected_max).powf(1.0 / k + beta);
                b * s_n * nf.sqrt() * l_max.sqrt()
            }
        }
    }

    /// Whether the statistic is the normalized sum (else the raw sum).
    pub fn uses_normalized_sum(&self) -> bool {
        matches!(self, RateParams::SubGaussian { .. })
    }

    /// Whether the constants also make the exceedances summable over `n`.
    pub fn summable(&self) -> bool {
        match *self {
            RateParams::SubGaussian { theta1, theta2, .. } => theta1 * theta2 > 1.0,
            RateParams::ExponentialPower { c2, c3, .. } => c2 * c3 > 1.0,
            RateParams::Polynomial { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub tail: TailFamily,
    pub row_law: RowLengthLaw,
    #[serde(default = "one")]
    pub missing_p: f64,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub params: RateChoice,
    #[serde(default)]
    pub normalizer: NormalizerKind,
    /// Ceiling on the exceedance at the largest `n`.
    #[serde(default = "final_ceiling")]
    pub final_ceiling: f64,
}

fn final_ceiling() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub expected_max: f64,
    pub envelope: f64,
    pub exceedance: f64,
    pub std_error: f64,
    /// Median of statistic / envelope.
    pub median_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub params: RateParams,
    pub points: Vec<RatePoint>,
    pub summed_exceedance: f64,
    /// No step up beyond two combined standard errors.
    pub trend_ok: bool,
    /// Last value below the first, or both zero.
    pub decreased: bool,
    pub final_ok: bool,
    pub summed_ok: Option<bool>,
    pub passed: bool,
    pub config: serde_json::Value,
}

/// Exceedance of the envelope across the `n` sweep, with the decay checks.
pub fn verify_rate(cfg: &RateConfig, seed: u64, exec: Exec) -> Result<RateReport> {
    let params = RateParams::new(&cfg.tail, &cfg.params)?;
    if cfg.ns.is_empty() {
        return Err(config_err("rate sweep needs at least one n"));
    }
    if cfg.trials == 0 {
        return Err(config_err("trials must be >= 1"));
    }
    let sampler = match &cfg.tail {
        TailFamily::GaussianCoords { covariance } => Some(covariance.sampler()?),
        _ => None,
    };

    let mut points = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let gen = GenConfig {
            n,
            tail: cfg.tail.clone(),
            row_law: cfg.row_law.clone(),
            missing_p: cfg.missing_p,
            seed: 0,
        };
        gen.validate()?;
        let group = rng::derive(seed, rng::GROUP, n as u64);
        let results = exec.map(cfg.trials, |i| {
            let g = GenConfig {
                seed: trial_seed(group, i),
                ..gen.clone()
            };
            generate_sample_with(&g, sampler.as_ref()).map(|s| {
                let stat = if params.uses_normalized_sum() {
                    norm(&normalized_sum(&s, cfg.normalizer), NormKind::Sup)
                } else {
                    norm(&raw_sum(&s), NormKind::Sup)
                };
                (stat, s.max_dim())
            })
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let expected_max = cfg
            .row_law
            .expected_max(n)
            .unwrap_or_else(|| results.iter().map(|r| r.1 as f64).sum::<f64>() / results.len() as f64);
        let envelope = params.envelope(n, expected_max);
        let exceed = results.iter().filter(|r| r.0 >= envelope).count() as f64 / cfg.trials as f64;
        let ratios: Vec<f64> = results.iter().map(|r| r.0 / envelope).collect();
        points.push(RatePoint {
            n,
            expected_max,
            envelope,
            exceedance: exceed,
            std_error: proportion_se(exceed, cfg.trials),
            median_ratio: median(&ratios),
        });
    }

    let trend_ok = points.windows(2).all(|w| {
        let tol = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].exceedance <= w[0].exceedance + tol
    });
    let first = points[0].exceedance;
    let last = points[points.len() - 1].exceedance;
    let decreased = last < first || (first == 0.0 && last == 0.0);
    let final_ok = last < cfg.final_ceiling;
    let summed: f64 = points.iter().map(|p| p.exceedance).sum();
    let summed_ok = params.summable().then_some(summed < 0.1);
    let passed = trend_ok && decreased && final_ok && summed_ok.unwrap_or(true);
    Ok(RateReport {
        params,
        points,
        summed_exceedance: summed,
        trend_ok,
        decreased,
        final_ok,
        summed_ok,
        passed,
        config: json!({ "params": cfg, "seed": seed }),
    })
}

/// Sub-Gaussian envelope `h(n)` for `||S~||_inf`.
pub fn verify_rate_subgaussian(cfg: &RateConfig, seed: u64, exec: Exec) -> Result<RateReport> {
    if !matches!(cfg.params, RateChoice::SubGaussian { .. }) {
        return Err(config_err("expected sub-Gaussian envelope parameters"));
    }
    verify_rate(cfg, seed, exec)
}

/// Exponential-power and polynomial envelopes for `||S||_inf`.
pub fn verify_rate_exponential(cfg: &RateConfig, seed: u64, exec: Exec) -> Result<RateReport> {
    if matches!(cfg.params, RateChoice::SubGaussian { .. }) {
        return Err(config_err(
            "expected exponential-power or polynomial envelope parameters",
        ));
    }
    verify_rate(cfg, seed, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogScalingConfig {
    pub tail: TailFamily,
    pub ns: Vec<usize>,
    pub reps: usize,
    #[serde(default = "one")]
    pub missing_p: f64,
    /// Ceiling on max/min of the medians.
    #[serde(default = "spread_ceiling")]
    pub max_spread: f64,
}

fn spread_ceiling() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogScalingReport {
    pub ns: Vec<usize>,
    pub medians: Vec<f64>,
    pub spread: f64,
    pub passed: bool,
    pub config: serde_json::Value,
}

/// With `n^2` columns, medians of `||S~||_inf / L(n^2)^(1/2)` stay within a
/// bounded factor of each other across `n`.
pub fn verify_log_dimension_scaling(cfg: &LogScalingConfig, seed: u64, exec: Exec) -> Result<LogScalingReport> {
    if cfg.tail.subgaussian_constants().is_none() {
        return Err(config_err("log-dimension scaling needs an r = 2 family"));
    }
    if cfg.ns.is_empty() || cfg.reps == 0 {
        return Err(config_err("need at least one n and one rep"));
    }
    let mut medians = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let p = n * n;
        let gen = GenConfig {
            n,
            tail: cfg.tail.clone(),
            row_law: RowLengthLaw::Fixed { b: p },
            missing_p: cfg.missing_p,
            seed: 0,
        };
        gen.validate()?;
        let sampler = match &cfg.tail {
            TailFamily::GaussianCoords { covariance } => Some(covariance.sampler()?),
            _ => None,
        };
        let group = rng::derive(seed, rng::GROUP, n as u64);
        let scale = log_plus(p as f64).sqrt();
        let ratios = exec.map(cfg.reps, |i| {
            let g = GenConfig {
                seed: trial_seed(group, i),
                ..gen.clone()
            };
            generate_sample_with(&g, sampler.as_ref())
                .map(|s| norm(&normalized_sum(&s, NormalizerKind::RandomColumnwise), NormKind::Sup) / scale)
        });
        let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
        medians.push(median(&ratios));
    }
    let hi = medians.iter().copied().fold(f64::MIN, f64::max);
    let lo = medians.iter().copied().fold(f64::MAX, f64::min);
    let spread = hi / lo;
    Ok(LogScalingReport {
        ns: cfg.ns.clone(),
        medians,
        spread,
        passed: spread < cfg.max_spread,
        config: json!({ "params": cfg, "seed": seed }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subgaussian_tail() -> TailFamily {
        TailFamily::ExponentialPower { r: 2.0, k: 1.0, c: 1.0 }
    }

    #[test]
    fn normalizing_sequence_floor() {
        assert!((normalizing_sequence(0) - 3f64.ln().sqrt()).abs() < 1e-15);
        assert!((normalizing_sequence(100) - 103f64.ln().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn derived_constants_are_exact() {
        let tail = TailFamily::ExponentialPower { r: 2.0, k: 3.0, c: 2.0 };
        match RateParams::subgaussian(&tail, 1.0).unwrap() {
            RateParams::SubGaussian { theta1, .. } => assert_eq!(theta1, 3.0 / 32.0),
            other => panic!("{other:?}"),
        }
        let tail = TailFamily::ExponentialPower { r: 1.0, k: 2.0, c: 3.0 };
        match RateParams::exponential(&tail, 1.5, 1.0).unwrap() {
            RateParams::ExponentialPower { c2, .. } => assert_eq!(c2, 2.0 / 384.0),
            other => panic!("{other:?}"),
        }
        // c1 must strictly exceed 2 / k^(1/r) = 1.
        assert!(RateParams::exponential(&tail, 1.0, 1.0).is_err());
        assert!(RateParams::exponential(&tail, 0.5, 1.0).is_err());
        assert!(RateParams::exponential(&tail, 1.5, 0.0).is_err());
        assert!(RateParams::exponential(&subgaussian_tail(), 3.0, 1.0).is_err());
    }

    #[test]
    fn polynomial_constraints() {
        let tail = TailFamily::PolynomialTail { k: 6.0, c: 1.0 };
        assert!(RateParams::polynomial(&tail, 0.1, 1.0, 9.0).is_ok());
        assert!(RateParams::polynomial(&tail, 0.1, 1.0, 8.0).is_err());
        assert!(RateParams::polynomial(&tail, 0.05, 1.0, 9.0).is_err());
        assert!(RateParams::polynomial(&tail, 0.1, 0.5, 9.0).is_err());
        let weak = TailFamily::PolynomialTail { k: 2.0, c: 1.0 };
        assert!(RateParams::polynomial(&weak, 1.0, 1.0, 9.0).is_err());
    }

    #[test]
    fn envelope_values() {
        let p = RateParams::subgaussian(&subgaussian_tail(), 2.0).unwrap();
        let e = p.envelope(100, 1000.0);
        assert!((e - (16.0 * 1000f64.ln() + 2.0 * 100f64.ln()).sqrt()).abs() < 1e-12);
        let p = RateParams::polynomial(&TailFamily::PolynomialTail { k: 6.0, c: 1.0 }, 0.1, 1.0, 9.0).unwrap();
        let e = p.envelope(25, 25.0);
        let s_n = 625f64.powf(1.0 / 6.0 + 0.1);
        assert!((e - 9.0 * s_n * 5.0 * 25f64.ln().sqrt()).abs() < 1e-9);
    }

    #[test]
    fn subgaussian_sweep_decays() {
        let cfg = RateConfig {
            tail: subgaussian_tail(),
            row_law: RowLengthLaw::PowerOfN { gamma: 1.5 },
            missing_p: 1.0,
            ns: vec![10, 20, 40],
            trials: 200,
            params: RateChoice::SubGaussian { theta2: 20.0 },
            normalizer: NormalizerKind::RandomColumnwise,
            final_ceiling: 0.05,
        };
        let r = verify_rate_subgaussian(&cfg, 1, Exec::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.summed_ok, Some(true));
        assert!(r.points.iter().all(|p| p.median_ratio < 1.0));
        assert!(verify_rate_exponential(&cfg, 1, Exec::default()).is_err());
    }

    #[test]
    fn log_dimension_scaling() {
        let cfg = LogScalingConfig {
            tail: subgaussian_tail(),
            ns: vec![5, 10, 20, 40],
            reps: 100,
            missing_p: 1.0,
            max_spread: 3.0,
        };
        let r = verify_log_dimension_scaling(&cfg, 2, Exec::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
