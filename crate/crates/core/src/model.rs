//! Jagged replicate samples and seeded generators.
//!
//! A [`TriangularSample`] holds `n` replicate rows. Row `i` has `N_i >= 1`
//! cells and each cell carries a value and an observed flag; the flag folds
//! together the row-length indicator and the missingness indicator, so an
//! unobserved cell contributes nothing to any downstream sum.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Geometric, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::cholesky_lower;
use crate::error::{config_err, Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    pub observed: bool,
}

impl Cell {
    pub fn observed(value: f64) -> Self {
        Cell { value, observed: true }
    }

    pub fn missing() -> Self {
        Cell {
            value: 0.0,
            observed: false,
        }
    }

    #[inline]
    pub fn get(&self) -> Option<f64> {
        self.observed.then_some(self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangularSample {
    rows: Vec<Vec<Cell>>,
    max_dim: usize,
    truncated: bool,
}

impl TriangularSample {
    /// Builds a sample from rows. Every row must have at least one cell.
    pub fn new(rows: Vec<Vec<Cell>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("sample has no rows"));
        }
        if let Some(row) = rows.iter().position(|r| r.is_empty()) {
            return Err(Error::EmptyRow { row });
        }
        let max_dim = rows.iter().map(Vec::len).max().unwrap_or(0);
        Ok(TriangularSample {
            rows,
            max_dim,
            truncated: false,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row_lengths(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// True when a row-length law with unbounded support hit its cap.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn observed_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.observed).count()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.rows.get(row)?.get(col)?.get()
    }

    /// Multiplies every observed value by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        self.map_observed(|_, v| v * s)
    }

    fn map_observed(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, c)| if c.observed { Cell::observed(f(j, c.value)) } else { *c })
                    .collect()
            })
            .collect();
        TriangularSample {
            rows,
            max_dim: self.max_dim,
            truncated: self.truncated,
        }
    }
}

/// Builds a sample from a rectangular grid; `None` entries become unobserved
/// cells. Every row keeps the grid width.
pub fn from_matrix(values: &[Vec<Option<f64>>]) -> Result<TriangularSample> {
    let width = values.first().map(Vec::len).unwrap_or(0);
    if values.is_empty() || width == 0 {
        return Err(Error::Empty("grid has no cells"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, row) in values.iter().enumerate() {
        if row.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                found: row.len(),
            });
        }
        if row.iter().all(Option::is_none) {
            return Err(Error::EmptyRow { row: i });
        }
        rows.push(
            row.iter()
                .map(|v| v.map_or_else(Cell::missing, Cell::observed))
                .collect(),
        );
    }
    TriangularSample::new(rows)
}

/// Subtracts `null_mean[j]` from every observed cell of column `j`. Columns
/// past the end of `null_mean` are centered at 0.
pub fn center(sample: &TriangularSample, null_mean: &[f64]) -> TriangularSample {
    sample.map_observed(|j, v| v - null_mean.get(j).copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailFamily {
    /// Uniform on an interval of width `b - a`, shifted to mean zero.
    Bounded {
        a: f64,
        b: f64,
    },
    /// `P(|x| >= t) = exp(-k t^r)`; `c >= 1` is the constant quoted in bounds.
    ExponentialPower {
        r: f64,
        k: f64,
        c: f64,
    },
    /// `P(|x| > t) = (1 + t)^(-k)`.
    PolynomialTail {
        k: f64,
        c: f64,
    },
    GaussianCoords {
        covariance: CovarianceStructure,
    },
}

impl TailFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            TailFamily::Bounded { a, b } => {
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(config_err("bounded tail needs finite a < b"));
                }
            }
            TailFamily::ExponentialPower { r, k, c } => {
                if !(*r > 0.0 && *r <= 2.0) {
                    return Err(config_err("exponential-power tail needs r in (0, 2]"));
                }
                if !(*k > 0.0) {
                    return Err(config_err("exponential-power tail needs k > 0"));
                }
                if !(*c >= 1.0) || !c.is_finite() {
                    return Err(config_err("tail constant c must be >= 1"));
                }
            }
            TailFamily::PolynomialTail { k, c } => {
                if !(*k > 1.0) || !k.is_finite() {
                    return Err(config_err("polynomial tail needs k > 1 for a finite mean"));
                }
                if !(*c >= 1.0) || !c.is_finite() {
                    return Err(config_err("tail constant c must be >= 1"));
                }
            }
            TailFamily::GaussianCoords { covariance } => covariance.validate()?,
        }
        Ok(())
    }

    /// Constants `(c, k)` with `P(|x| >= t) <= c exp(-k t^2)`, when the family
    /// is sub-Gaussian.
    pub fn subgaussian_constants(&self) -> Option<(f64, f64)> {
        match self {
            TailFamily::Bounded { a, b } => Some((2.0, 1.0 / (2.0 * (b - a).powi(2)))),
            TailFamily::ExponentialPower { r, k, c } if *r == 2.0 => Some((*c, *k)),
            TailFamily::GaussianCoords { covariance } => {
                let max_var = covariance.variances().into_iter().fold(0.0, f64::max);
                if max_var == 0.0 {
                    Some((1.0, f64::INFINITY))
                } else {
                    Some((2.0, 1.0 / (2.0 * max_var)))
                }
            }
            _ => None,
        }
    }

    /// Draws one scalar coordinate. Not valid for `GaussianCoords`, which
    /// draws whole rows.
    pub(crate) fn draw_scalar(&self, rng: &mut StreamRng) -> f64 {
        match self {
            TailFamily::Bounded { a, b } => {
                let half = 0.5 * (b - a);
                rng.random_range(-half..=half)
            }
            TailFamily::ExponentialPower { r, k, .. } => {
                if k.is_infinite() {
                    return 0.0;
                }
                let e: f64 = Exp1.sample(rng);
                let magnitude = (e / k).powf(1.0 / r);
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            TailFamily::PolynomialTail { k, .. } => {
                // 1 - U keeps the argument in (0, 1].
                let u = 1.0 - rng.random::<f64>();
                let magnitude = u.powf(-1.0 / k) - 1.0;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            TailFamily::GaussianCoords { .. } => unreachable!("gaussian rows are drawn jointly"),
        }
    }
}

/// Integer law on `{0, 1, ...}` used for random row lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountLaw {
    Poisson {
        mean: f64,
    },
    Geometric {
        p: f64,
    },
    /// Uniform on `{0, ..., max}`.
    Uniform {
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RowLengthLaw {
    Fixed {
        b: usize,
    },
    /// Every row has length `ceil(n^gamma)`.
    PowerOfN {
        gamma: f64,
    },
    /// `1 + X` with `X` drawn from `base`, capped at `cap`.
    ShiftedRandom {
        base: CountLaw,
        cap: usize,
    },
}

impl RowLengthLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            RowLengthLaw::Fixed { b } if *b == 0 => Err(config_err("fixed row length must be >= 1")),
            RowLengthLaw::PowerOfN { gamma } if !(*gamma >= 1.0) => {
                Err(config_err("power-of-n row law needs gamma >= 1"))
            }
            RowLengthLaw::ShiftedRandom { base, cap } => {
                if *cap == 0 {
                    return Err(config_err("row length cap must be >= 1"));
                }
                match base {
                    CountLaw::Poisson { mean } if !(*mean > 0.0) => Err(config_err("poisson mean must be > 0")),
                    CountLaw::Geometric { p } if !(*p > 0.0 && *p <= 1.0) => {
                        Err(config_err("geometric p must be in (0, 1]"))
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// `E(max_i N_i)` when it is deterministic.
    pub fn expected_max(&self, n: usize) -> Option<f64> {
        match self {
            RowLengthLaw::Fixed { b } => Some(*b as f64),
            RowLengthLaw::PowerOfN { .. } => Some(self.power_length(n) as f64),
            RowLengthLaw::ShiftedRandom { .. } => None,
        }
    }

    fn power_length(&self, n: usize) -> usize {
        match self {
            RowLengthLaw::PowerOfN { gamma } => {
                let raw = (n as f64).powf(*gamma);
                // ceil of an exact integer power must not round up.
                let rounded = raw.round();
                let len = if (raw - rounded).abs() < 1e-9 * raw.max(1.0) {
                    rounded
                } else {
                    raw.ceil()
                };
                (len as usize).max(1)
            }
            _ => unreachable!(),
        }
    }

    /// Realized row lengths and whether any length hit the cap.
    pub fn draw_lengths(&self, n: usize, rng: &mut StreamRng) -> (Vec<usize>, bool) {
        match self {
            RowLengthLaw::Fixed { b } => (vec![*b; n], false),
            RowLengthLaw::PowerOfN { .. } => (vec![self.power_length(n); n], false),
            RowLengthLaw::ShiftedRandom { base, cap } => {
                let mut truncated = false;
                let lengths = (0..n)
                    .map(|_| {
                        let extra: u64 = match base {
                            CountLaw::Poisson { mean } => {
                                let d = Poisson::new(*mean).expect("validated poisson mean");
                                let x: f64 = d.sample(rng);
                                x as u64
                            }
                            CountLaw::Geometric { p } => Geometric::new(*p).expect("validated geometric p").sample(rng),
                            CountLaw::Uniform { max } => rng.random_range(0..=*max as u64),
                        };
                        let len = extra.saturating_add(1);
                        if len > *cap as u64 {
                            truncated = true;
                            *cap
                        } else {
                            len as usize
                        }
                    })
                    .collect();
                (lengths, truncated)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceStructure {
    Identity { dim: usize },
    CompoundSymmetric { dim: usize, variance: f64, rho: f64 },
    HeterogeneousCS { variances: Vec<f64>, rho: f64 },
    Explicit { matrix: Vec<Vec<f64>> },
}

impl CovarianceStructure {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceStructure::Identity { dim } => *dim,
            CovarianceStructure::CompoundSymmetric { dim, .. } => *dim,
            CovarianceStructure::HeterogeneousCS { variances, .. } => variances.len(),
            CovarianceStructure::Explicit { matrix } => matrix.len(),
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        match self {
            CovarianceStructure::Identity { dim } => vec![1.0; *dim],
            CovarianceStructure::CompoundSymmetric { dim, variance, .. } => vec![*variance; *dim],
            CovarianceStructure::HeterogeneousCS { variances, .. } => variances.clone(),
            CovarianceStructure::Explicit { matrix } => matrix.iter().enumerate().map(|(i, r)| r[i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(config_err("covariance dimension must be >= 1"));
        }
        let rho_ok = |rho: f64| {
            let lower = if dim > 1 { -1.0 / (dim as f64 - 1.0) } else { -1.0 };
            rho > lower && rho < 1.0 || (dim == 1 && rho.is_finite())
        };
        match self {
            CovarianceStructure::Identity { .. } => Ok(()),
            CovarianceStructure::CompoundSymmetric { variance, rho, .. } => {
                if !(*variance > 0.0) {
                    return Err(config_err("compound-symmetric variance must be > 0"));
                }
                if !rho_ok(*rho) {
                    return Err(config_err("compound-symmetric correlation out of range"));
                }
                Ok(())
            }
            CovarianceStructure::HeterogeneousCS { variances, rho } => {
                if variances.iter().any(|v| !(*v > 0.0)) {
                    return Err(config_err("heterogeneous variances must be > 0"));
                }
                if !rho_ok(*rho) {
                    return Err(config_err("heterogeneous CS correlation out of range"));
                }
                Ok(())
            }
            CovarianceStructure::Explicit { matrix } => {
                if matrix.iter().any(|r| r.len() != dim) {
                    return Err(config_err("explicit covariance must be square"));
                }
                for i in 0..dim {
                    for j in 0..i {
                        let diff = (matrix[i][j] - matrix[j][i]).abs();
                        if diff > 1e-12 * (1.0 + matrix[i][j].abs()) {
                            return Err(Error::NotSymmetric { row: i, col: j, diff });
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Dense row-major matrix.
    pub fn matrix(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; dim * dim];
        match self {
            CovarianceStructure::Identity { .. } => {
                for i in 0..dim {
                    out[i * dim + i] = 1.0;
                }
            }
            CovarianceStructure::CompoundSymmetric { variance, rho, .. } => {
                for i in 0..dim {
                    for j in 0..dim {
                        out[i * dim + j] = if i == j { *variance } else { rho * variance };
                    }
                }
            }
            CovarianceStructure::HeterogeneousCS { variances, rho } => {
                for i in 0..dim {
                    for j in 0..dim {
                        out[i * dim + j] = if i == j {
                            variances[i]
                        } else {
                            rho * (variances[i] * variances[j]).sqrt()
                        };
                    }
                }
            }
            CovarianceStructure::Explicit { matrix } => {
                for i in 0..dim {
                    out[i * dim..(i + 1) * dim].copy_from_slice(&matrix[i]);
                }
            }
        }
        out
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        self.validate()?;
        let dim = self.dim();
        Ok(match self {
            CovarianceStructure::Identity { .. } => GaussianSampler::Factor {
                scales: vec![1.0; dim],
                own: 1.0,
                shared: 0.0,
            },
            CovarianceStructure::CompoundSymmetric { variance, rho, .. } if *rho >= 0.0 => GaussianSampler::Factor {
                scales: vec![variance.sqrt(); dim],
                own: (1.0 - rho).sqrt(),
                shared: rho.sqrt(),
            },
            CovarianceStructure::HeterogeneousCS { variances, rho } if *rho >= 0.0 => GaussianSampler::Factor {
                scales: variances.iter().map(|v| v.sqrt()).collect(),
                own: (1.0 - rho).sqrt(),
                shared: rho.sqrt(),
            },
            _ => {
                let factor = cholesky_lower(&self.matrix(), dim)
                    .ok_or_else(|| config_err("covariance structure is not positive definite"))?;
                GaussianSampler::Dense { dim, factor }
            }
        })
    }
}

/// Draws `N(0, Sigma)` vectors for a [`CovarianceStructure`].
#[derive(Debug, Clone)]
pub enum GaussianSampler {
    /// `x_j = s_j (own z_j + shared g)`: equicorrelated with correlation `shared^2`.
    Factor { scales: Vec<f64>, own: f64, shared: f64 },
    /// Lower-triangular factor, row-major.
    Dense { dim: usize, factor: Vec<f64> },
}

impl GaussianSampler {
    pub fn dim(&self) -> usize {
        match self {
            GaussianSampler::Factor { scales, .. } => scales.len(),
            GaussianSampler::Dense { dim, .. } => *dim,
        }
    }

    pub fn draw_into(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self {
            GaussianSampler::Factor { scales, own, shared } => {
                let g: f64 = StandardNormal.sample(rng);
                for (x, s) in out.iter_mut().zip(scales) {
                    let z: f64 = StandardNormal.sample(rng);
                    *x = s * (own * z + shared * g);
                }
            }
            GaussianSampler::Dense { dim, factor } => {
                let z: Vec<f64> = (0..*dim).map(|_| StandardNormal.sample(rng)).collect();
                for (i, x) in out.iter_mut().enumerate().take(*dim) {
                    let row = &factor[i * dim..i * dim + i + 1];
                    *x = row.iter().zip(&z).map(|(l, z)| l * z).sum();
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub tail: TailFamily,
    pub row_law: RowLengthLaw,
    #[serde(default = "one")]
    pub missing_p: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err("n must be >= 1"));
        }
        if !(self.missing_p > 0.0 && self.missing_p <= 1.0) {
            return Err(config_err("missing_p must be in (0, 1]"));
        }
        self.tail.validate()?;
        self.row_law.validate()
    }
}

/// Draws a sample: row lengths, cell values and observed flags come from
/// three independent streams of `cfg.seed`.
pub fn generate_sample(cfg: &GenConfig) -> Result<TriangularSample> {
    cfg.validate()?;
    match &cfg.tail {
        TailFamily::GaussianCoords { covariance } => {
            let sampler = covariance.sampler()?;
            generate_sample_with(cfg, Some(&sampler))
        }
        _ => generate_sample_with(cfg, None),
    }
}

/// As [`generate_sample`], reusing a prebuilt sampler for Gaussian rows.
pub fn generate_sample_with(cfg: &GenConfig, sampler: Option<&GaussianSampler>) -> Result<TriangularSample> {
    cfg.validate()?;
    let mut len_rng = rng::stream(cfg.seed, rng::LENGTHS, 0);
    let (lengths, truncated) = cfg.row_law.draw_lengths(cfg.n, &mut len_rng);

    let gaussian = match &cfg.tail {
        TailFamily::GaussianCoords { covariance } => {
            let sampler = sampler.ok_or_else(|| config_err("gaussian rows need a sampler"))?;
            if sampler.dim() != covariance.dim() {
                return Err(Error::DimensionMismatch {
                    expected: covariance.dim(),
                    found: sampler.dim(),
                });
            }
            let max_len = lengths.iter().copied().max().unwrap_or(0);
            if max_len > covariance.dim() {
                return Err(config_err(format!(
                    "row length {max_len} exceeds gaussian covariance dimension {}",
                    covariance.dim()
                )));
            }
            Some(sampler)
        }
        _ => None,
    };

    let mut buf = vec![0.0; gaussian.map_or(0, |g| g.dim())];
    let rows = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let mut values = rng::stream(cfg.seed, rng::VALUES, i as u64);
            let mut flags = rng::stream(cfg.seed, rng::FLAGS, i as u64);
            if let Some(sampler) = &gaussian {
                sampler.draw_into(&mut values, &mut buf);
            }
            (0..len)
                .map(|j| {
                    let value = match &gaussian {
                        Some(_) => buf[j],
                        None => cfg.tail.draw_scalar(&mut values),
                    };
                    let observed = cfg.missing_p >= 1.0 || flags.random_bool(cfg.missing_p);
                    Cell { value, observed }
                })
                .collect()
        })
        .collect();

    let mut sample = TriangularSample::new(rows)?;
    sample.truncated = truncated;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEffectsConfig {
    pub n: usize,
    pub b_n: usize,
    pub means: Vec<f64>,
    pub plate_sd: f64,
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

/// One-way random effects: `mean_j + T_i + e_ij` with a shared plate effect
/// per replicate. Rows are complete and have length `b_n`.
pub fn generate_random_effects(cfg: &RandomEffectsConfig) -> Result<TriangularSample> {
    if cfg.n == 0 || cfg.b_n == 0 {
        return Err(config_err("random effects need n >= 1 and b_n >= 1"));
    }
    if cfg.means.len() != cfg.b_n {
        return Err(Error::DimensionMismatch {
            expected: cfg.b_n,
            found: cfg.means.len(),
        });
    }
    if !(cfg.plate_sd >= 0.0) || !(cfg.noise_sd >= 0.0) {
        return Err(config_err("standard deviations must be >= 0"));
    }
    let rows = (0..cfg.n)
        .map(|i| {
            let mut plate_rng = rng::stream(cfg.seed, rng::PLATE, i as u64);
            let mut noise_rng = rng::stream(cfg.seed, rng::VALUES, i as u64);
            let z: f64 = StandardNormal.sample(&mut plate_rng);
            let plate = cfg.plate_sd * z;
            cfg.means
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut noise_rng);
                    Cell::observed(m + plate + cfg.noise_sd * e)
                })
                .collect()
        })
        .collect();
    TriangularSample::new(rows)
}
