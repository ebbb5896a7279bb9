//! Named groups of checks with default configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{config_err, Error, Result};
use crate::model::{CountLaw, CovarianceStructure, GenConfig, RowLengthLaw, TailFamily};
use crate::par::Exec;
use crate::rng;
use crate::stats::NormalizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bounds,
    Rates,
    Clt,
    Lemma74,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounds" => Ok(Suite::Bounds),
            "rates" => Ok(Suite::Rates),
            "clt" => Ok(Suite::Clt),
            "lemma74" => Ok(Suite::Lemma74),
            "all" => Ok(Suite::All),
            other => Err(config_err(format!("unknown suite '{other}'"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Bounds => "bounds",
            Suite::Rates => "rates",
            Suite::Clt => "clt",
            Suite::Lemma74 => "lemma74",
            Suite::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundCheck {
    Hoeffding(HoeffdingConfig),
    SubgaussianSum(SubGaussianConfig),
    MaxNorm(MaxNormConfig),
    Symmetrized(SymmetrizedConfig),
}

impl BoundCheck {
    fn run(&self, seed: u64, exec: Exec) -> Result<BoundReport> {
        match self {
            BoundCheck::Hoeffding(c) => verify_hoeffding(c, seed, exec),
            BoundCheck::SubgaussianSum(c) => verify_subgaussian_sum(c, seed, exec),
            BoundCheck::MaxNorm(c) => verify_maxnorm_bound(c, seed, exec),
            BoundCheck::Symmetrized(c) => verify_symmetrized_bounds(c, seed, exec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Multiplies every bound; values below 1 make checks fail on purpose.
    pub bound_scale: f64,
    pub bounds: Vec<BoundCheck>,
    pub rates: Vec<RateConfig>,
    pub log_scaling: LogScalingConfig,
    pub clt: CltConfig,
    pub tilde_t: Vec<TildeTConfig>,
    pub lemma74: Lemma74Config,
}

fn exp_power(r: f64, k: f64, c: f64) -> TailFamily {
    TailFamily::ExponentialPower { r, k, c }
}

fn default_bounds() -> Vec<BoundCheck> {
    let two_point = |a: f64, b: f64, n: usize, grid: Vec<f64>| {
        BoundCheck::Hoeffding(HoeffdingConfig {
            a,
            b,
            n,
            law: HoeffdingLaw::TwoPoint,
            trials: 100_000,
            grid,
        })
    };
    let subgaussian = |tail: TailFamily, trials: usize, grid: Vec<f64>| {
        BoundCheck::SubgaussianSum(SubGaussianConfig {
            tail,
            n: 10,
            trials,
            grid,
        })
    };
    let max_norm = |tail: TailFamily, row_law: RowLengthLaw, missing_p: f64, grid: Vec<f64>| {
        BoundCheck::MaxNorm(MaxNormConfig {
            sample: GenConfig {
                n: 20,
                tail,
                row_law,
                missing_p,
                seed: 0,
            },
            trials: 10_000,
            grid,
            normalizer: NormalizerKind::RandomColumnwise,
        })
    };
    let symmetrized = |tail: TailFamily, grid: Vec<f64>| {
        BoundCheck::Symmetrized(SymmetrizedConfig {
            tail,
            n: 50,
            s: None,
            trials: 100_000,
            grid,
        })
    };
    vec![
        two_point(-1.0, 1.0, 2, vec![0.0, 0.5, 1.0]),
        two_point(-1.0, 3.0, 12, vec![0.25, 0.5, 1.0, 1.5]),
        two_point(-1.0, 1.0, 40, vec![0.1, 0.2, 0.3, 0.5]),
        BoundCheck::Hoeffding(HoeffdingConfig {
            a: -1.0,
            b: 1.0,
            n: 20,
            law: HoeffdingLaw::Uniform,
            trials: 100_000,
            grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        }),
        subgaussian(exp_power(2.0, 1.0, 2.0), 100_000, vec![0.0, 0.5, 1.0, 2.0]),
        subgaussian(TailFamily::Bounded { a: -1.0, b: 1.0 }, 100_000, vec![0.25, 0.5, 1.0]),
        subgaussian(exp_power(2.0, f64::INFINITY, 1.0), 1000, vec![0.0, 0.1, 1.0]),
        max_norm(
            exp_power(2.0, 1.0, 2.0),
            RowLengthLaw::Fixed { b: 50 },
            1.0,
            vec![1.0, 2.0, 3.0, 4.0],
        ),
        max_norm(
            TailFamily::GaussianCoords {
                covariance: CovarianceStructure::CompoundSymmetric {
                    dim: 40,
                    variance: 1.0,
                    rho: 0.3,
                },
            },
            RowLengthLaw::Fixed { b: 40 },
            0.8,
            vec![2.0, 3.0, 4.0, 5.0],
        ),
        max_norm(
            TailFamily::Bounded { a: -1.0, b: 1.0 },
            RowLengthLaw::ShiftedRandom {
                base: CountLaw::Poisson { mean: 30.0 },
                cap: 100,
            },
            0.9,
            vec![1.0, 2.0, 3.0],
        ),
        symmetrized(exp_power(1.0, 1.0, 1.0), vec![0.3, 0.6, 1.0, 1.5, 2.0]),
        symmetrized(exp_power(1.5, 1.0, 1.0), vec![0.3, 0.5, 1.0, 1.5]),
        symmetrized(TailFamily::PolynomialTail { k: 4.0, c: 1.0 }, vec![0.2, 0.5, 1.0, 2.0]),
        symmetrized(TailFamily::PolynomialTail { k: 6.0, c: 1.0 }, vec![0.2, 0.5, 1.0, 2.0]),
    ]
}

fn default_rates() -> Vec<RateConfig> {
    let sweep = vec![25, 50, 100, 200];
    let base = RateConfig {
        tail: exp_power(2.0, 1.0, 1.0),
        row_law: RowLengthLaw::PowerOfN { gamma: 1.5 },
        missing_p: 1.0,
        ns: sweep.clone(),
        trials: 1000,
        params: RateChoice::SubGaussian { theta2: 1.0 },
        normalizer: NormalizerKind::RandomColumnwise,
        final_ceiling: 0.05,
    };
    vec![
        base.clone(),
        RateConfig {
            ns: vec![25, 50, 100],
            trials: 500,
            params: RateChoice::SubGaussian { theta2: 20.0 },
            ..base.clone()
        },
        RateConfig {
            tail: exp_power(1.0, 1.0, 1.0),
            params: RateChoice::ExponentialPower { c1: 2.5, c3: 1.0 },
            ..base.clone()
        },
        RateConfig {
            tail: TailFamily::PolynomialTail { k: 6.0, c: 1.0 },
            row_law: RowLengthLaw::PowerOfN { gamma: 1.0 },
            trials: 2000,
            params: RateChoice::Polynomial {
                beta: 0.1,
                gamma: 1.0,
                b: 9.0,
            },
            ..base
        },
    ]
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let tilde = TildeTConfig {
            tail: exp_power(2.0, 1.0, 1.0),
            missing_p: 1.0,
            d: 5,
            ns: vec![100, 400],
            reps: 500,
            ratio_band: [0.35, 0.70],
        };
        VerifyConfig {
            seed: 0,
            bound_scale: 1.0,
            bounds: default_bounds(),
            rates: default_rates(),
            log_scaling: LogScalingConfig {
                tail: exp_power(2.0, 1.0, 1.0),
                ns: vec![10, 20, 40, 80],
                reps: 200,
                missing_p: 1.0,
                max_spread: 3.0,
            },
            clt: CltConfig {
                gamma: CovarianceStructure::CompoundSymmetric {
                    dim: 3,
                    variance: 1.0,
                    rho: 0.3,
                },
                p: 0.8,
                n: 300,
                d: 3,
                reps: 20_000,
                rel_tol: 0.10,
                ks_tol: 0.02,
            },
            tilde_t: vec![
                tilde.clone(),
                TildeTConfig {
                    missing_p: 0.5,
                    ..tilde
                },
            ],
            lemma74: Lemma74Config::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub report: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub config: serde_json::Value,
}

fn check<T: Serialize>(name: String, passed: bool, report: &T) -> Result<Check> {
    Ok(Check {
        name,
        passed,
        report: serde_json::to_value(report)?,
    })
}

fn seed_for(cfg: &VerifyConfig, slot: u64) -> u64 {
    rng::derive(cfg.seed, rng::GROUP, slot)
}

fn bounds_checks(cfg: &VerifyConfig, exec: Exec) -> Result<Vec<Check>> {
    cfg.bounds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = b
                .run(seed_for(cfg, 100 + i as u64), exec)?
                .with_bound_scale(cfg.bound_scale);
            check(format!("bounds[{i}].{}", r.name), r.holds(), &r)
        })
        .collect()
}

fn rates_checks(cfg: &VerifyConfig, exec: Exec) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (i, rc) in cfg.rates.iter().enumerate() {
        let r = verify_rate(rc, seed_for(cfg, 200 + i as u64), exec)?;
        let kind = match rc.params {
            RateChoice::SubGaussian { .. } => "subgaussian",
            RateChoice::ExponentialPower { .. } => "exponential_power",
            RateChoice::Polynomial { .. } => "polynomial",
        };
        checks.push(check(format!("rates[{i}].{kind}"), r.passed, &r)?);
    }
    let r = verify_log_dimension_scaling(&cfg.log_scaling, seed_for(cfg, 300), exec)?;
    checks.push(check("log_dimension_scaling".into(), r.passed, &r)?);
    Ok(checks)
}

fn clt_checks(cfg: &VerifyConfig, exec: Exec) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let r = verify_clt_covariance(&cfg.clt, seed_for(cfg, 400), exec)?;
    checks.push(check("clt_covariance".into(), r.passed, &r)?);
    for (i, tc) in cfg.tilde_t.iter().enumerate() {
        let r = verify_tilde_t(tc, seed_for(cfg, 500 + i as u64), exec)?;
        checks.push(check(format!("tilde_t[{i}]"), r.passed, &r)?);
    }
    Ok(checks)
}

fn lemma74_checks(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut r = verify_lemma74(&cfg.lemma74)?;
    if cfg.bound_scale != 1.0 {
        for p in &mut r.points {
            p.sqrt_bound *= cfg.bound_scale;
            p.sqrt_ok = p.sqrt_moment <= p.sqrt_bound;
        }
        r.passed = r.points.iter().all(|p| p.inverse_ok && p.sqrt_ok);
    }
    Ok(vec![check("lemma74".into(), r.passed, &r)?])
}

/// Runs every check of `suite`; failures of individual checks are reported,
/// not returned as errors.
pub fn run_suite(suite: Suite, cfg: &VerifyConfig, exec: Exec) -> Result<SuiteReport> {
    if !(cfg.bound_scale > 0.0) {
        return Err(config_err("bound_scale must be > 0"));
    }
    let checks = match suite {
        Suite::Bounds => bounds_checks(cfg, exec)?,
        Suite::Rates => rates_checks(cfg, exec)?,
        Suite::Clt => clt_checks(cfg, exec)?,
        Suite::Lemma74 => lemma74_checks(cfg)?,
        Suite::All => {
            let mut all = lemma74_checks(cfg)?;
            all.extend(bounds_checks(cfg, exec)?);
            all.extend(clt_checks(cfg, exec)?);
            all.extend(rates_checks(cfg, exec)?);
            all
        }
    };
    Ok(SuiteReport {
        suite: suite.to_string(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        config: serde_json::to_value(cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        for s in ["bounds", "rates", "clt", "lemma74", "all"] {
            assert_eq!(s.parse::<Suite>().unwrap().to_string(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn default_bounds_cover_the_families() {
        let cfg = VerifyConfig::default();
        assert!(cfg.bounds.len() >= 10);
        let json = serde_json::to_string(&cfg.bounds[0]).unwrap();
        let back: BoundCheck = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg.bounds[0]);
    }

    #[test]
    fn lemma74_suite_and_scaled_failure() {
        let cfg = VerifyConfig::default();
        assert!(run_suite(Suite::Lemma74, &cfg, Exec::Sequential).unwrap().passed);
        let broken = VerifyConfig {
            bound_scale: 0.5,
            ..VerifyConfig::default()
        };
        assert!(!run_suite(Suite::Lemma74, &broken, Exec::Sequential).unwrap().passed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<VerifyConfig>(r#"{"seed": 1, "typo": 2}"#).is_err());
        let cfg: VerifyConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.bounds.len(), VerifyConfig::default().bounds.len());
        let bad = r#"{"bounds": [{"kind": "hoeffding", "a": -1, "b": 1, "n": 2, "law": "two_point", "grid": [1], "extra": 0}]}"#;
        assert!(serde_json::from_str::<VerifyConfig>(bad).is_err());
    }
}
