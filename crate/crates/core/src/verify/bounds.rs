//! Tail inequalities for sums and for the sup-norm of the normalized sum.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{proportion_se, trial_seed};
use crate::error::{config_err, Result};
use crate::model::{generate_sample_with, GenConfig, TailFamily};
use crate::par::Exec;
use crate::rng;
use crate::stats::{norm, normalized_sum, NormKind, NormalizerKind};

/// Largest `n` for which two-point laws are enumerated exactly.
const MAX_ENUMERATED_N: usize = 16;
/// Relative slack on the event boundary in exact enumeration.
const EVENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundPoint {
    pub x: f64,
    pub label: String,
    pub empirical: f64,
    pub bound: f64,
    pub std_error: f64,
    pub exact: bool,
    pub in_range: bool,
    pub holds: bool,
}

impl BoundPoint {
    fn new(x: f64, label: &str, empirical: f64, bound: f64, std_error: f64, exact: bool, in_range: bool) -> Self {
        let mut p = BoundPoint {
            x,
            label: label.to_string(),
            empirical,
            bound,
            std_error,
            exact,
            in_range,
            holds: true,
        };
        p.holds = p.check();
        p
    }

    fn check(&self) -> bool {
        if !self.in_range {
            return true;
        }
        if self.exact {
            self.empirical <= self.bound
        } else {
            self.empirical <= self.bound + 3.0 * self.std_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub trials: usize,
    pub points: Vec<BoundPoint>,
    pub config: serde_json::Value,
}

impl BoundReport {
    /// True when every in-range point holds.
    pub fn holds(&self) -> bool {
        self.points.iter().all(|p| p.holds)
    }

    /// Multiplies every bound by `scale` and re-evaluates the points.
    pub fn with_bound_scale(mut self, scale: f64) -> Self {
        if scale != 1.0 {
            for p in &mut self.points {
                p.bound *= scale;
                p.holds = p.check();
            }
        }
        self
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(config_err("grid must not be empty"));
    }
    if grid.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(config_err("grid points must be finite and >= 0"));
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        Err(config_err("trials must be >= 1"))
    } else {
        Ok(())
    }
}

/// Fraction of `values` at or above each grid point, with standard errors.
fn exceedances(values: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    grid.iter()
        .map(|&x| {
            let below = sorted.partition_point(|&v| v < x);
            let p = (sorted.len() - below) as f64 / sorted.len() as f64;
            (p, proportion_se(p, sorted.len()))
        })
        .collect()
}

/// `|mean|` of `n` draws, for each trial.
fn abs_means(
    trials: usize,
    n: usize,
    seed: u64,
    exec: Exec,
    draw: impl Fn(&mut rng::StreamRng) -> f64 + Sync + Send,
) -> Vec<f64> {
    exec.map(trials, |i| {
        let mut r = rng::stream(trial_seed(seed, i), rng::VALUES, 0);
        let sum: f64 = (0..n).map(|_| draw(&mut r)).sum();
        (sum / n as f64).abs()
    })
}

fn scalar_tail(tail: &TailFamily) -> Result<()> {
    tail.validate()?;
    if matches!(tail, TailFamily::GaussianCoords { .. }) {
        return Err(config_err("scalar verifiers need a scalar tail family"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoeffdingLaw {
    /// Mean-zero law on `{a, b}`; needs `a < 0 < b`.
    TwoPoint,
    /// Uniform on `[a, b]`, shifted to mean zero.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoeffdingConfig {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub law: HoeffdingLaw,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub grid: Vec<f64>,
}

fn default_trials() -> usize {
    100_000
}

/// `P(|mean| >= x)` for a bounded law against `2 exp(-n x^2 / (2 (b - a)^2))`.
/// Two-point laws with `n <= 16` are enumerated exactly.
pub fn verify_hoeffding(cfg: &HoeffdingConfig, seed: u64, exec: Exec) -> Result<BoundReport> {
    if !(cfg.a < cfg.b) || !cfg.a.is_finite() || !cfg.b.is_finite() {
        return Err(config_err("hoeffding check needs finite a < b"));
    }
    if cfg.n == 0 {
        return Err(config_err("n must be >= 1"));
    }
    check_grid(&cfg.grid)?;
    let (a, b, n) = (cfg.a, cfg.b, cfg.n);
    let width = b - a;
    let bound = |x: f64| 2.0 * (-(n as f64) * x * x / (2.0 * width * width)).exp();

    let exact = cfg.law == HoeffdingLaw::TwoPoint && n <= MAX_ENUMERATED_N;
    let (probs, trials): (Vec<(f64, f64)>, usize) = match cfg.law {
        HoeffdingLaw::TwoPoint => {
            if !(a < 0.0 && b > 0.0) {
                return Err(config_err("two-point law needs a < 0 < b for mean zero"));
            }
            let q = -a / width;
            if exact {
                (
                    cfg.grid
                        .iter()
                        .map(|&x| (enumerate_two_point(a, b, q, n, x), 0.0))
                        .collect(),
                    0,
                )
            } else {
                check_trials(cfg.trials)?;
                let means = abs_means(cfg.trials, n, seed, exec, |r| if r.random_bool(q) { b } else { a });
                (exceedances(&means, &cfg.grid), cfg.trials)
            }
        }
        HoeffdingLaw::Uniform => {
            check_trials(cfg.trials)?;
            let half = 0.5 * width;
            let means = abs_means(cfg.trials, n, seed, exec, |r| r.random_range(-half..=half));
            (exceedances(&means, &cfg.grid), cfg.trials)
        }
    };

    let points = cfg
        .grid
        .iter()
        .zip(probs)
        .map(|(&x, (p, se))| BoundPoint::new(x, "hoeffding", p, bound(x), se, exact, true))
        .collect();
    Ok(BoundReport {
        name: "hoeffding".into(),
        trials,
        points,
        config: json!({ "params": cfg, "seed": seed, "exact": exact }),
    })
}

/// Exact `P(|mean| >= x)` for `n` i.i.d. draws with `P(b) = q`, over all
/// `2^n` outcomes.
fn enumerate_two_point(a: f64, b: f64, q: f64, n: usize, x: f64) -> f64 {
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        let k = mask.count_ones() as i32;
        let mean = (k as f64 * b + (n as i32 - k) as f64 * a) / n as f64;
        if mean.abs() >= x - EVENT_EPS * x.abs().max(1.0) {
            total += q.powi(k) * (1.0 - q).powi(n as i32 - k);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubGaussianConfig {
    pub tail: TailFamily,
    pub n: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub grid: Vec<f64>,
}

fn subgaussian_bound(n: f64, c: f64, k: f64, x: f64) -> f64 {
    if x == 0.0 {
        2.0
    } else {
        2.0 * (-n * k * x * x / (16.0 * c)).exp()
    }
}

/// `P(|mean| >= x)` for a sub-Gaussian family against
/// `2 exp(-n k x^2 / (16 c))`.
pub fn verify_subgaussian_sum(cfg: &SubGaussianConfig, seed: u64, exec: Exec) -> Result<BoundReport> {
    scalar_tail(&cfg.tail)?;
    let (c, k) = cfg
        .tail
        .subgaussian_constants()
        .ok_or_else(|| config_err("sub-Gaussian sum check needs an r = 2 family"))?;
    if cfg.n == 0 {
        return Err(config_err("n must be >= 1"));
    }
    check_grid(&cfg.grid)?;
    check_trials(cfg.trials)?;
    let tail = cfg.tail.clone();
    let means = abs_means(cfg.trials, cfg.n, seed, exec, move |r| tail.draw_scalar(r));
    let points = cfg
        .grid
        .iter()
        .zip(exceedances(&means, &cfg.grid))
        .map(|(&x, (p, se))| {
            BoundPoint::new(
                x,
                "subgaussian_sum",
                p,
                subgaussian_bound(cfg.n as f64, c, k, x),
                se,
                false,
                true,
            )
        })
        .collect();
    Ok(BoundReport {
        name: "subgaussian_sum".into(),
        trials: cfg.trials,
        points,
        config: json!({ "params": cfg, "seed": seed, "c": c, "k": k }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxNormConfig {
    pub sample: GenConfig,
    #[serde(default = "default_maxnorm_trials")]
    pub trials: usize,
    pub grid: Vec<f64>,
    #[serde(default)]
    pub normalizer: NormalizerKind,
}

fn default_maxnorm_trials() -> usize {
    10_000
}

/// `P(||S~||_inf >= x)` against `2 E(N*) exp(-k x^2 / (16 c))`. `E(N*)` is
/// exact for deterministic row laws and the trial average otherwise.
pub fn verify_maxnorm_bound(cfg: &MaxNormConfig, seed: u64, exec: Exec) -> Result<BoundReport> {
    cfg.sample.validate()?;
    let (c, k) = cfg
        .sample
        .tail
        .subgaussian_constants()
        .ok_or_else(|| config_err("max-norm check needs an r = 2 family"))?;
    check_grid(&cfg.grid)?;
    check_trials(cfg.trials)?;
    let sampler = match &cfg.sample.tail {
        TailFamily::GaussianCoords { covariance } => Some(covariance.sampler()?),
        _ => None,
    };
    let results = exec.map(cfg.trials, |i| {
        let gen = GenConfig {
            seed: trial_seed(seed, i),
            ..cfg.sample.clone()
        };
        generate_sample_with(&gen, sampler.as_ref()).map(|s| {
            let stat = norm(&normalized_sum(&s, cfg.normalizer), NormKind::Sup);
            (stat, s.max_dim())
        })
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let stats: Vec<f64> = results.iter().map(|r| r.0).collect();
    let expected_max = cfg
        .sample
        .row_law
        .expected_max(cfg.sample.n)
        .unwrap_or_else(|| results.iter().map(|r| r.1 as f64).sum::<f64>() / results.len() as f64);
    let bound = |x: f64| {
        if x == 0.0 {
            2.0 * expected_max
        } else {
            2.0 * expected_max * (-k * x * x / (16.0 * c)).exp()
        }
    };
    let points = cfg
        .grid
        .iter()
        .zip(exceedances(&stats, &cfg.grid))
        .map(|(&x, (p, se))| BoundPoint::new(x, "max_norm", p, bound(x), se, false, true))
        .collect();
    Ok(BoundReport {
        name: "max_norm".into(),
        trials: cfg.trials,
        points,
        config: json!({ "params": cfg, "seed": seed, "c": c, "k": k, "expected_max_row": expected_max }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetrizedConfig {
    pub tail: TailFamily,
    pub n: usize,
    /// Truncation level; defaults to `n^(1/(2+r)) x^(2/(2+r))` for
    /// exponential tails and to the minimizing level for polynomial tails.
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub grid: Vec<f64>,
}

/// `M` with `M^2 = int_0^inf P-bound(t^(1/2)) dt`: `c exp(-k t^(r/2))` for
/// exponential tails and `c / (1 + t^(1/2))^k` for polynomial tails.
pub fn moment_constant(tail: &TailFamily) -> Result<f64> {
    match *tail {
        TailFamily::ExponentialPower { r, k, c } => {
            if !k.is_finite() {
                return Ok(0.0);
            }
            // t = u^2 turns the integrand into 2 c u exp(-k u^r).
            let upper = (80.0 / k).powf(1.0 / r);
            let f = |u: f64| 2.0 * c * u * (-k * u.powf(r)).exp();
            Ok(adaptive_simpson(&f, 0.0, upper, 1e-13, 60).sqrt())
        }
        TailFamily::PolynomialTail { k, c } => {
            if !(k > 2.0) {
                return Err(config_err("polynomial moment constant needs k > 2"));
            }
            // t = u^2 gives 2 c int u / (1 + u)^k du = 2 c / ((k - 1)(k - 2)).
            Ok((2.0 * c / ((k - 1.0) * (k - 2.0))).sqrt())
        }
        _ => Err(config_err("moment constant needs an exponential or polynomial tail")),
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth)
}

fn polynomial_bound(n: f64, k: f64, c: f64, x: f64, s: f64) -> f64 {
    let gauss = if s == 0.0 {
        0.0
    } else {
        4.0 * (-n * x * x / (32.0 * s * s)).exp()
    };
    gauss + 2f64.powf(2.0 + k) * c * n / (2.0 + s).powf(k)
}

/// Minimizes the polynomial bound over a log grid of truncation levels.
fn best_polynomial_bound(n: f64, k: f64, c: f64, x: f64) -> (f64, f64) {
    let mut best = (polynomial_bound(n, k, c, x, 0.0), 0.0);
    for i in 0..=400 {
        let s = 10f64.powf(-2.0 + 8.0 * i as f64 / 400.0);
        let v = polynomial_bound(n, k, c, x, s);
        if v < best.0 {
            best = (v, s);
        }
    }
    best
}

/// `P(|sum| >= n x)` against the truncation bounds for heavier tails. Grid
/// points below `sqrt(8) M / sqrt(n)` are reported as out of range.
pub fn verify_symmetrized_bounds(cfg: &SymmetrizedConfig, seed: u64, exec: Exec) -> Result<BoundReport> {
    scalar_tail(&cfg.tail)?;
    if cfg.n == 0 {
        return Err(config_err("n must be >= 1"));
    }
    if let Some(s) = cfg.s {
        if !(s >= 0.0) {
            return Err(config_err("truncation level s must be >= 0"));
        }
    }
    match cfg.tail {
        TailFamily::ExponentialPower { k, .. } if !k.is_finite() => {
            return Err(config_err("truncation bounds need finite k"))
        }
        TailFamily::ExponentialPower { .. } | TailFamily::PolynomialTail { .. } => {}
        _ => return Err(config_err("truncation bounds need an exponential or polynomial tail")),
    }
    check_grid(&cfg.grid)?;
    check_trials(cfg.trials)?;
    let m = moment_constant(&cfg.tail)?;
    let n = cfg.n as f64;
    let threshold = 8f64.sqrt() * m / n.sqrt();

    let tail = cfg.tail.clone();
    let means = abs_means(cfg.trials, cfg.n, seed, exec, move |r| tail.draw_scalar(r));
    let probs = exceedances(&means, &cfg.grid);

    let mut points = Vec::new();
    for (&x, &(p, se)) in cfg.grid.iter().zip(&probs) {
        let in_range = x >= threshold;
        match cfg.tail {
            TailFamily::ExponentialPower { r, k, c } => {
                let s = cfg
                    .s
                    .unwrap_or_else(|| n.powf(1.0 / (2.0 + r)) * x.powf(2.0 / (2.0 + r)));
                let trunc = 4.0 * c * n * (-k * s.powf(r) / (2.0 * r)).exp();
                let gauss = if s == 0.0 {
                    0.0
                } else {
                    4.0 * (-n * x * x / (32.0 * s * s)).exp()
                };
                points.push(BoundPoint::new(x, "truncation", p, gauss + trunc, se, false, in_range));
                let gauss_k = if s == 0.0 {
                    0.0
                } else {
                    4.0 * (-n * k * x * x / (128.0 * c * s * s)).exp()
                };
                points.push(BoundPoint::new(
                    x,
                    "truncation_subgaussian",
                    p,
                    gauss_k + trunc,
                    se,
                    false,
                    in_range && s >= 1.0,
                ));
            }
            TailFamily::PolynomialTail { k, c } => {
                let bound = match cfg.s {
                    Some(s) => polynomial_bound(n, k, c, x, s),
                    None => best_polynomial_bound(n, k, c, x).0,
                };
                points.push(BoundPoint::new(x, "polynomial", p, bound, se, false, in_range));
            }
            _ => unreachable!(),
        }
    }
    Ok(BoundReport {
        name: "symmetrized".into(),
        trials: cfg.trials,
        points,
        config: json!({ "params": cfg, "seed": seed, "moment_constant": m, "threshold": threshold }),
    })
}
