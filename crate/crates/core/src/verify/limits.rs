//! Limit covariances of the normalized sum, Bernoulli normalizer moments and
//! the decay of the mean statistic.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ks_normal_fitted, median, trial_seed};
use crate::error::{config_err, Result};
use crate::model::{generate_sample_with, CovarianceStructure, GenConfig, RowLengthLaw, TailFamily};
use crate::par::Exec;
use crate::rng;
use crate::stats::{mean_statistic, normalized_sum, NormalizerKind};
use crate::testing::GammaLimit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    pub gamma: CovarianceStructure,
    pub p: f64,
    pub n: usize,
    pub d: usize,
    pub reps: usize,
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "ks_tol")]
    pub ks_tol: f64,
}

fn rel_tol() -> f64 {
    0.10
}

fn ks_tol() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizerCltReport {
    pub normalizer: NormalizerKind,
    /// `d x d`, row-major.
    pub empirical: Vec<f64>,
    pub target: Vec<f64>,
    pub max_rel_error: f64,
    pub ks: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub by_normalizer: Vec<NormalizerCltReport>,
    pub passed: bool,
    pub config: serde_json::Value,
}

/// Empirical covariance of the first `d` coordinates of `S~` across reps,
/// for both normalizers on the same samples, against the missing-data limits.
pub fn verify_clt_covariance(cfg: &CltConfig, seed: u64, exec: Exec) -> Result<CltReport> {
    let dim = cfg.gamma.dim();
    if cfg.d == 0 || cfg.d > dim {
        return Err(config_err("d must be in 1..=dim(gamma)"));
    }
    if cfg.reps < 2 {
        return Err(config_err("need at least two reps"));
    }
    let gen = GenConfig {
        n: cfg.n,
        tail: TailFamily::GaussianCoords {
            covariance: cfg.gamma.clone(),
        },
        row_law: RowLengthLaw::Fixed { b: dim },
        missing_p: cfg.p,
        seed: 0,
    };
    gen.validate()?;
    let sampler = cfg.gamma.sampler()?;
    let normalizers = [NormalizerKind::RandomColumnwise, NormalizerKind::SqrtN];
    let d = cfg.d;

    let draws = exec.map(cfg.reps, |i| {
        let g = GenConfig {
            seed: trial_seed(seed, i),
            ..gen.clone()
        };
        generate_sample_with(&g, Some(&sampler)).map(|s| {
            normalizers
                .iter()
                .map(|&k| normalized_sum(&s, k).0[..d].to_vec())
                .collect::<Vec<_>>()
        })
    });
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;

    let mut by_normalizer = Vec::new();
    for (idx, &normalizer) in normalizers.iter().enumerate() {
        let vectors: Vec<&[f64]> = draws.iter().map(|d| d[idx].as_slice()).collect();
        let empirical = empirical_covariance(&vectors, d);
        let full = GammaLimit::for_normalizer(cfg.gamma.clone(), cfg.p, normalizer)?.matrix();
        let target: Vec<f64> = (0..d * d).map(|e| full[(e / d) * dim + e % d]).collect();
        let scale = (0..d).map(|j| target[j * d + j].abs()).fold(0.0, f64::max);
        let max_rel_error = empirical
            .iter()
            .zip(&target)
            .map(|(e, t)| (e - t).abs() / if *t != 0.0 { t.abs() } else { scale })
            .fold(0.0, f64::max);
        let ks: Vec<f64> = (0..d)
            .map(|j| ks_normal_fitted(&vectors.iter().map(|v| v[j]).collect::<Vec<_>>()))
            .collect();
        let passed = max_rel_error < cfg.rel_tol && ks.iter().all(|&k| k < cfg.ks_tol);
        by_normalizer.push(NormalizerCltReport {
            normalizer,
            empirical,
            target,
            max_rel_error,
            ks,
            passed,
        });
    }
    Ok(CltReport {
        passed: by_normalizer.iter().all(|r| r.passed),
        by_normalizer,
        config: json!({ "params": cfg, "seed": seed }),
    })
}

fn empirical_covariance(vectors: &[&[f64]], d: usize) -> Vec<f64> {
    let m = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (acc, x) in mean.iter_mut().zip(v.iter()) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m);
    let mut cov = vec![0.0; d * d];
    for v in vectors {
        for u in 0..d {
            for w in 0..d {
                cov[u * d + w] += (v[u] - mean[u]) * (v[w] - mean[w]);
            }
        }
    }
    cov.iter_mut().for_each(|x| *x /= m - 1.0);
    cov
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma74Config {
    pub ns: Vec<usize>,
    pub ps: Vec<f64>,
}

impl Default for Lemma74Config {
    fn default() -> Self {
        Lemma74Config {
            ns: (1..=12).collect(),
            ps: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma74Point {
    pub n: usize,
    pub p: f64,
    /// `E(X_1 / A_n)`, with `0 / 0 = 0`.
    pub inverse_moment: f64,
    pub inverse_closed_form: f64,
    /// `E(X_1 / A_n^(1/2))`.
    pub sqrt_moment: f64,
    pub sqrt_bound: f64,
    pub inverse_ok: bool,
    pub sqrt_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma74Report {
    pub points: Vec<Lemma74Point>,
    pub passed: bool,
}

/// Exact moments of `X_1 / A_n` and `X_1 / A_n^(1/2)` for i.i.d. Bernoulli(p)
/// `X_i` with `A_n = sum X_i`, by enumerating all `2^n` outcomes.
pub fn verify_lemma74(cfg: &Lemma74Config) -> Result<Lemma74Report> {
    let mut points = Vec::new();
    for &n in &cfg.ns {
        if n == 0 || n > 12 {
            return Err(config_err("enumeration needs 1 <= n <= 12"));
        }
        for &p in &cfg.ps {
            if !(p > 0.0 && p <= 1.0) {
                return Err(config_err("p must be in (0, 1]"));
            }
            let (mut inv, mut sqrt) = (0.0, 0.0);
            for mask in 0u32..(1u32 << n) {
                if mask & 1 == 0 {
                    continue;
                }
                let a = mask.count_ones() as i32;
                let prob = p.powi(a) * (1.0 - p).powi(n as i32 - a);
                inv += prob / a as f64;
                sqrt += prob / (a as f64).sqrt();
            }
            let closed = (1.0 - (1.0 - p).powi(n as i32)) / n as f64;
            let bound = (p / n as f64).sqrt();
            let sqrt_ok = if p == 1.0 {
                (sqrt - bound).abs() <= 4.0 * f64::EPSILON * bound
            } else {
                sqrt <= bound
            };
            points.push(Lemma74Point {
                n,
                p,
                inverse_moment: inv,
                inverse_closed_form: closed,
                sqrt_moment: sqrt,
                sqrt_bound: bound,
                inverse_ok: (inv - closed).abs() <= 1e-12,
                sqrt_ok,
            });
        }
    }
    Ok(Lemma74Report {
        passed: points.iter().all(|p| p.inverse_ok && p.sqrt_ok),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TildeTConfig {
    pub tail: TailFamily,
    #[serde(default = "one")]
    pub missing_p: f64,
    pub d: usize,
    pub ns: Vec<usize>,
    pub reps: usize,
    #[serde(default = "ratio_band")]
    pub ratio_band: [f64; 2],
}

fn one() -> f64 {
    1.0
}

fn ratio_band() -> [f64; 2] {
    [0.35, 0.70]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TildeTReport {
    pub ns: Vec<usize>,
    pub medians: Vec<f64>,
    /// `median(4n) / median(n)` for each such pair in the sweep.
    pub ratios: Vec<(usize, usize, f64)>,
    pub passed: bool,
    pub config: serde_json::Value,
}

/// Medians of `max_{j <= d} |T~_j|` across `n`; quadrupling `n` should
/// roughly halve them.
pub fn verify_tilde_t(cfg: &TildeTConfig, seed: u64, exec: Exec) -> Result<TildeTReport> {
    if cfg.d == 0 || cfg.reps == 0 || cfg.ns.is_empty() {
        return Err(config_err("need d >= 1, reps >= 1 and at least one n"));
    }
    let sampler = match &cfg.tail {
        TailFamily::GaussianCoords { covariance } => Some(covariance.sampler()?),
        _ => None,
    };
    let mut medians = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let gen = GenConfig {
            n,
            tail: cfg.tail.clone(),
            row_law: RowLengthLaw::Fixed { b: cfg.d },
            missing_p: cfg.missing_p,
            seed: 0,
        };
        gen.validate()?;
        let group = rng::derive(seed, rng::GROUP, n as u64);
        let maxima = exec.map(cfg.reps, |i| {
            let g = GenConfig {
                seed: trial_seed(group, i),
                ..gen.clone()
            };
            generate_sample_with(&g, sampler.as_ref())
                .map(|s| mean_statistic(&s).0.iter().fold(0.0, |m: f64, x| m.max(x.abs())))
        });
        let maxima = maxima.into_iter().collect::<Result<Vec<_>>>()?;
        medians.push(median(&maxima));
    }
    let mut ratios = Vec::new();
    for (i, &n) in cfg.ns.iter().enumerate() {
        if let Some(j) = cfg.ns.iter().position(|&m| m == 4 * n) {
            let ratio = if medians[i] == 0.0 && medians[j] == 0.0 {
                0.0
            } else {
                medians[j] / medians[i]
            };
            ratios.push((n, 4 * n, ratio));
        }
    }
    let all_zero = medians.iter().all(|&m| m == 0.0);
    let passed = all_zero
        || ratios
            .iter()
            .all(|&(_, _, r)| r >= cfg.ratio_band[0] && r <= cfg.ratio_band[1]);
    Ok(TildeTReport {
        ns: cfg.ns.clone(),
        medians,
        ratios,
        passed,
        config: json!({ "params": cfg, "seed": seed }),
    })
}
