//! Rejection rates and p-value calibration of the one-sample test under
//! Gaussian data.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ks_uniform, proportion_se, trial_seed};
use crate::covariance::{normalized_sum_covariance, CovMatrix, ShrinkageTarget};
use crate::error::{config_err, Result};
use crate::model::{
    center, generate_sample_with, CovarianceStructure, GenConfig, RowLengthLaw, TailFamily, TriangularSample,
};
use crate::montecarlo::{critical_value, draw_null_distributions, p_value, DEFAULT_BANDWIDTH, DEFAULT_DRAWS};
use crate::par::Exec;
use crate::rng;
use crate::stats::{norm, normalized_sum, NormKind, NormalizerKind};
use crate::testing::{one_sample_tests, TestSpec};

/// Covariance of the simulated data as a function of the dimension `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceFamily {
    CompoundSymmetric {
        variance: f64,
        rho: f64,
    },
    /// Equicorrelated with variances spaced geometrically from `min_var` to
    /// `max_var`.
    HeterogeneousCs {
        min_var: f64,
        max_var: f64,
        rho: f64,
    },
    /// `variance * phi^|i - j|`.
    Ar1 {
        variance: f64,
        phi: f64,
    },
}

impl CovarianceFamily {
    pub fn structure(&self, b: usize) -> CovarianceStructure {
        match *self {
            CovarianceFamily::CompoundSymmetric { variance, rho } => {
                CovarianceStructure::CompoundSymmetric { dim: b, variance, rho }
            }
            CovarianceFamily::HeterogeneousCs { min_var, max_var, rho } => {
                let variances = (0..b)
                    .map(|j| {
                        let t = if b > 1 { j as f64 / (b - 1) as f64 } else { 0.0 };
                        min_var * (max_var / min_var).powf(t)
                    })
                    .collect();
                CovarianceStructure::HeterogeneousCS { variances, rho }
            }
            CovarianceFamily::Ar1 { variance, phi } => CovarianceStructure::Explicit {
                matrix: (0..b)
                    .map(|i| {
                        (0..b)
                            .map(|j| variance * phi.powi((i as i32 - j as i32).abs()))
                            .collect()
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConfig {
    pub n: usize,
    pub b_list: Vec<usize>,
    pub norms: Vec<NormKind>,
    pub trials: usize,
    pub covariance: CovarianceFamily,
    #[serde(default)]
    pub target: ShrinkageTarget,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub normalizer: NormalizerKind,
    #[serde(default = "one")]
    pub missing_p: f64,
    /// Calibrate with the true covariance instead of the shrinkage estimate.
    #[serde(default)]
    pub oracle: bool,
    /// Mean shift added to the first `shift_coords` coordinates.
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub shift_coords: usize,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH
}

fn one() -> f64 {
    1.0
}

impl SizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err("n must be >= 1"));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be >= 1"));
        }
        if self.b_list.is_empty() || self.b_list.contains(&0) {
            return Err(config_err("b_list must be non-empty with entries >= 1"));
        }
        if self.norms.is_empty() {
            return Err(config_err("norms must be non-empty"));
        }
        if !self.oracle && self.n < 2 {
            return Err(config_err("estimated calibration needs n >= 2"));
        }
        self.spec(0).validate()
    }

    fn spec(&self, seed: u64) -> TestSpec {
        TestSpec {
            norm_kind: self.norms[0],
            normalizer: self.normalizer,
            alpha: self.alpha,
            mc_draws: self.mc_draws,
            bandwidth: self.bandwidth,
            target: self.target.clone(),
            lambda: None,
            seed,
            exec: Exec::Sequential,
            ..TestSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeCell {
    pub b: usize,
    pub norm: NormKind,
    pub rejections: usize,
    pub trials: usize,
    pub rate: f64,
    pub std_error: f64,
    #[serde(skip)]
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeTable {
    pub cells: Vec<SizeCell>,
    pub config: serde_json::Value,
}

impl SizeTable {
    pub fn cell(&self, b: usize, norm: NormKind) -> Option<&SizeCell> {
        self.cells.iter().find(|c| c.b == b && c.norm == norm)
    }
}

fn shifted(sample: TriangularSample, shift: f64, coords: usize) -> Result<TriangularSample> {
    if shift == 0.0 || coords == 0 {
        return Ok(sample);
    }
    let rows = sample
        .rows()
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, c)| {
                    let mut c = *c;
                    if j < coords && c.observed {
                        c.value += shift;
                    }
                    c
                })
                .collect()
        })
        .collect();
    TriangularSample::new(rows)
}

/// `(rejected, p-value)` per norm for one simulated data set.
fn oracle_trial(sample: &TriangularSample, sigma: &CovMatrix, cfg: &SizeConfig, seed: u64) -> Result<Vec<(bool, f64)>> {
    let zero = vec![0.0; sample.max_dim()];
    let centered = center(sample, &zero);
    let s_tilde = normalized_sum(&centered, cfg.normalizer);
    let cov = normalized_sum_covariance(sigma, &centered, cfg.normalizer);
    let nulls = draw_null_distributions(&cov, cfg.mc_draws, &cfg.norms, cfg.bandwidth, seed, Exec::Sequential)?;
    Ok(nulls
        .iter()
        .map(|nd| {
            let stat = norm(&s_tilde, nd.norm_kind);
            (stat > critical_value(nd, cfg.alpha), p_value(nd, stat))
        })
        .collect())
}

/// Rejection-rate table over `(b, norm)` with null mean zero. Every trial
/// draws fresh data and fresh calibration draws; the norms of one trial share
/// their calibration draws.
pub fn type1_sweep(cfg: &SizeConfig, seed: u64, exec: Exec) -> Result<SizeTable> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &b in &cfg.b_list {
        let structure = cfg.covariance.structure(b);
        let sampler = structure.sampler()?;
        let sigma = CovMatrix::from_dense(b, structure.matrix())?;
        let gen = GenConfig {
            n: cfg.n,
            tail: TailFamily::GaussianCoords { covariance: structure },
            row_law: RowLengthLaw::Fixed { b },
            missing_p: cfg.missing_p,
            seed: 0,
        };
        let group = rng::derive(seed, rng::GROUP, b as u64);
        let outcomes = exec.map(cfg.trials, |i| -> Result<Vec<(bool, f64)>> {
            let trial = trial_seed(group, i);
            let g = GenConfig {
                seed: trial,
                ..gen.clone()
            };
            let sample = shifted(generate_sample_with(&g, Some(&sampler))?, cfg.shift, cfg.shift_coords)?;
            let mc_seed = rng::derive(trial, rng::MC_DRAW, 0);
            if cfg.oracle {
                oracle_trial(&sample, &sigma, cfg, mc_seed)
            } else {
                let zero = vec![0.0; b];
                Ok(one_sample_tests(&sample, &zero, &cfg.spec(mc_seed), &cfg.norms)?
                    .into_iter()
                    .map(|o| (o.report.reject, o.report.p_value))
                    .collect())
            }
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        for (k, &norm_kind) in cfg.norms.iter().enumerate() {
            let rejections = outcomes.iter().filter(|o| o[k].0).count();
            let rate = rejections as f64 / cfg.trials as f64;
            cells.push(SizeCell {
                b,
                norm: norm_kind,
                rejections,
                trials: cfg.trials,
                rate,
                std_error: proportion_se(rate, cfg.trials),
                p_values: outcomes.iter().map(|o| o[k].1).collect(),
            });
        }
    }
    Ok(SizeTable {
        cells,
        config: json!({ "params": cfg, "seed": seed }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    pub b: usize,
    pub norm: NormKind,
    pub trials: usize,
    pub ks: f64,
    /// Counts over `bins` equal-width bins of `[0, 1]`.
    pub histogram: Vec<usize>,
    /// Fewer than 100 trials.
    pub low_power: bool,
}

/// KS distance of the p-values of each cell to Uniform(0, 1), with a
/// histogram.
pub fn pvalue_uniformity(table: &SizeTable, bins: usize) -> Vec<UniformityReport> {
    let bins = bins.max(1);
    table
        .cells
        .iter()
        .map(|cell| {
            let mut histogram = vec![0usize; bins];
            for &p in &cell.p_values {
                let idx = ((p * bins as f64) as usize).min(bins - 1);
                histogram[idx] += 1;
            }
            UniformityReport {
                b: cell.b,
                norm: cell.norm,
                trials: cell.trials,
                ks: ks_uniform(&cell.p_values),
                histogram,
                low_power: cell.trials < 100,
            }
        })
        .collect()
}
