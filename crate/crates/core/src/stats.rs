//! Column normalizers, the sum statistics and their norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config_err, Error};
use crate::model::TriangularSample;

/// Columns with more entries than this are summed pairwise.
const PAIRWISE_THRESHOLD: usize = 1024;

/// Finite coordinate vector; coordinates past the end are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatVector(pub Vec<f64>);

impl StatVector {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Coordinate-wise difference, padding the shorter vector with zeros.
    pub fn padded_sub(&self, other: &StatVector) -> StatVector {
        let len = self.len().max(other.len());
        StatVector(
            (0..len)
                .map(|j| self.0.get(j).unwrap_or(&0.0) - other.0.get(j).unwrap_or(&0.0))
                .collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> StatVector {
        StatVector(self.0.iter().map(|x| x * s).collect())
    }
}

/// Per-column effective sample sizes `V_j = max(1, #observed)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnCounts(pub Vec<usize>);

impl ColumnCounts {
    pub fn get(&self, j: usize) -> usize {
        self.0[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `(sum |x_j|^rho)^(1/rho)`, `rho >= 2`.
    Lp(f64),
    Sup,
}

impl NormKind {
    pub fn lp(rho: f64) -> crate::Result<Self> {
        if rho >= 2.0 && rho.is_finite() {
            Ok(NormKind::Lp(rho))
        } else if rho == f64::INFINITY {
            Ok(NormKind::Sup)
        } else {
            Err(config_err(format!("norm exponent must be >= 2, got {rho}")))
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Lp(rho) => write!(f, "{rho}"),
            NormKind::Sup => f.write_str("sup"),
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim() {
            "sup" | "inf" | "max" => Ok(NormKind::Sup),
            other => {
                let rho: f64 = other
                    .parse()
                    .map_err(|_| config_err(format!("unknown norm '{other}'")))?;
                NormKind::lp(rho)
            }
        }
    }
}

impl Serialize for NormKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NormKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(rho) => NormKind::lp(rho),
            Raw::Str(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizerKind {
    /// Divide column `j` by `V_j^(1/2)`.
    #[default]
    RandomColumnwise,
    /// Divide every column by `n^(1/2)`.
    SqrtN,
}

impl fmt::Display for NormalizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizerKind::RandomColumnwise => "random-columnwise",
            NormalizerKind::SqrtN => "sqrt-n",
        })
    }
}

pub fn column_counts(sample: &TriangularSample) -> ColumnCounts {
    let mut counts = vec![0usize; sample.max_dim()];
    for row in sample.rows() {
        for (j, cell) in row.iter().enumerate() {
            counts[j] += cell.observed as usize;
        }
    }
    for c in counts.iter_mut() {
        *c = (*c).max(1);
    }
    ColumnCounts(counts)
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 128 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Column sums of observed values.
pub fn raw_sum(sample: &TriangularSample) -> StatVector {
    let dim = sample.max_dim();
    if sample.n() <= PAIRWISE_THRESHOLD {
        let mut sums = vec![0.0; dim];
        for row in sample.rows() {
            for (s, cell) in sums.iter_mut().zip(row) {
                if cell.observed {
                    *s += cell.value;
                }
            }
        }
        return StatVector(sums);
    }
    let mut buf = Vec::with_capacity(sample.n());
    let sums = (0..dim)
        .map(|j| {
            buf.clear();
            buf.extend(sample.rows().iter().filter_map(|r| r.get(j).and_then(|c| c.get())));
            pairwise_sum(&buf)
        })
        .collect();
    StatVector(sums)
}

pub fn normalized_sum(sample: &TriangularSample, normalizer: NormalizerKind) -> StatVector {
    let StatVector(mut sums) = raw_sum(sample);
    match normalizer {
        NormalizerKind::RandomColumnwise => {
            let counts = column_counts(sample);
            for (s, &v) in sums.iter_mut().zip(&counts.0) {
                *s /= (v as f64).sqrt();
            }
        }
        NormalizerKind::SqrtN => {
            let root_n = (sample.n() as f64).sqrt();
            for s in sums.iter_mut() {
                *s /= root_n;
            }
        }
    }
    StatVector(sums)
}

/// Column means over observed cells (zero for an all-missing column).
pub fn mean_statistic(sample: &TriangularSample) -> StatVector {
    let StatVector(mut sums) = raw_sum(sample);
    let counts = column_counts(sample);
    for (s, &v) in sums.iter_mut().zip(&counts.0) {
        *s /= v as f64;
    }
    StatVector(sums)
}

pub fn norm(v: &StatVector, kind: NormKind) -> f64 {
    norm_slice(v.coords(), kind)
}

pub fn norm_slice(xs: &[f64], kind: NormKind) -> f64 {
    let max = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    match kind {
        NormKind::Sup => max,
        NormKind::Lp(rho) => {
            if max == 0.0 || !max.is_finite() {
                return max;
            }
            if rho == 2.0 {
                let s: f64 = xs.iter().map(|x| (x / max) * (x / max)).sum();
                return max * s.sqrt();
            }
            let s: f64 = xs.iter().map(|x| (x.abs() / max).powf(rho)).sum();
            max * s.powf(1.0 / rho)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::from_matrix;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(rows: &[&[Option<f64>]]) -> TriangularSample {
        from_matrix(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn counts() {
        let s = grid(&[&[Some(1.0), None], &[Some(1.0), Some(1.0)]]);
        assert_eq!(column_counts(&s).0, vec![2, 1]);
        let s = grid(&[&[Some(1.0), None], &[Some(1.0), None]]);
        assert_eq!(column_counts(&s).0, vec![2, 1]);
        let s = grid(&[&[Some(1.0); 4], &[Some(2.0); 4], &[Some(3.0); 4]]);
        assert_eq!(column_counts(&s).0, vec![3; 4]);
    }

    #[test]
    fn sums() {
        let s = grid(&[&[Some(1.0), Some(2.0)], &[Some(3.0), Some(-2.0)]]);
        assert_eq!(raw_sum(&s).0, vec![4.0, 0.0]);
        let single = grid(&[&[Some(1.5), None, Some(-1.0)]]);
        assert_eq!(raw_sum(&single).0, vec![1.5, 0.0, -1.0]);
        let s = grid(&[&[Some(1.0), Some(2.0)], &[None, Some(-2.0)]]);
        assert_eq!(raw_sum(&s).0, vec![1.0, 0.0]);
    }

    #[test]
    fn normalized_sums() {
        let s = grid(&[&[Some(1.0), Some(2.0)], &[Some(3.0), Some(-2.0)]]);
        let r = normalized_sum(&s, NormalizerKind::RandomColumnwise);
        assert_relative_eq!(r.0[0], 2.828_427_124_746_19, epsilon = 1e-12);
        assert_eq!(r.0[1], 0.0);
        assert_eq!(normalized_sum(&s, NormalizerKind::SqrtN), r);

        let s = grid(&[&[Some(1.0), None], &[Some(3.0), Some(-2.0)]]);
        let r = normalized_sum(&s, NormalizerKind::RandomColumnwise);
        assert_relative_eq!(r.0[0], 2.828_427_124_746_19, epsilon = 1e-12);
        assert_relative_eq!(r.0[1], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn means() {
        let s = grid(&[&[Some(1.0), Some(2.0)], &[Some(3.0), Some(-2.0)]]);
        assert_eq!(mean_statistic(&s).0, vec![2.0, 0.0]);
        let s = grid(&[&[Some(1.0), None], &[Some(3.0), Some(-2.0)]]);
        assert_eq!(mean_statistic(&s).0, vec![2.0, -2.0]);
        let s = grid(&[&[Some(1.0), None], &[Some(3.0), None]]);
        assert_eq!(mean_statistic(&s).0[1], 0.0);
    }

    #[test]
    fn norms() {
        assert_relative_eq!(norm(&StatVector(vec![3.0, 4.0]), NormKind::Lp(2.0)), 5.0);
        assert_eq!(norm(&StatVector(vec![1.0, -2.0, 0.0]), NormKind::Sup), 2.0);
        assert_relative_eq!(
            norm(&StatVector(vec![1.0; 4]), NormKind::Lp(4.0)),
            std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
        assert_eq!(norm(&StatVector::default(), NormKind::Lp(2.0)), 0.0);
        assert_eq!(norm(&StatVector(vec![0.0; 3]), NormKind::Sup), 0.0);
        // max-factoring keeps huge exponents finite
        let big = norm(&StatVector(vec![1e300, 1e300]), NormKind::Lp(10.0));
        assert_relative_eq!(big, 1e300 * 2f64.powf(0.1), max_relative = 1e-12);
    }

    #[test]
    fn norm_kind_parsing() {
        assert_eq!("sup".parse::<NormKind>().unwrap(), NormKind::Sup);
        assert_eq!("4".parse::<NormKind>().unwrap(), NormKind::Lp(4.0));
        assert!("1.5".parse::<NormKind>().is_err());
        assert!("abc".parse::<NormKind>().is_err());
        assert_eq!(NormKind::Lp(2.0).to_string(), "2");
    }

    #[test]
    fn long_columns_use_pairwise_sums() {
        let rows: Vec<Vec<Option<f64>>> = (0..3000).map(|i| vec![Some(0.1 * i as f64)]).collect();
        let s = from_matrix(&rows).unwrap();
        let exact = 0.1 * (2999.0 * 3000.0 / 2.0);
        assert_relative_eq!(raw_sum(&s).0[0], exact, max_relative = 1e-14);
    }

    #[test]
    fn tilde_t_shrinks_with_n() {
        use crate::model::{generate_sample, GenConfig, RowLengthLaw, TailFamily};
        let median_abs = |n: usize| {
            let mut v: Vec<f64> = (0..200)
                .map(|rep| {
                    let s = generate_sample(&GenConfig {
                        n,
                        tail: TailFamily::ExponentialPower { r: 2.0, k: 1.0, c: 1.0 },
                        row_law: RowLengthLaw::Fixed { b: 1 },
                        missing_p: 1.0,
                        seed: 1000 + rep,
                    })
                    .unwrap();
                    mean_statistic(&s).0[0].abs()
                })
                .collect();
            v.sort_by(f64::total_cmp);
            0.5 * (v[99] + v[100])
        };
        assert!(median_abs(400) < median_abs(100));
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 1..20)
    }

    proptest! {
        #[test]
        fn lp_norms_are_ordered(xs in vec_strategy()) {
            let v = StatVector(xs);
            let n2 = norm(&v, NormKind::Lp(2.0));
            let n4 = norm(&v, NormKind::Lp(4.0));
            let n10 = norm(&v, NormKind::Lp(10.0));
            let sup = norm(&v, NormKind::Sup);
            let tol = 1e-12 * (1.0 + n2);
            prop_assert!(n2 + tol >= n4);
            prop_assert!(n4 + tol >= n10);
            prop_assert!(n10 + tol >= sup);
        }

        #[test]
        fn norms_are_homogeneous_and_subadditive(
            xs in vec_strategy(), ys in vec_strategy(), s in -10.0f64..10.0, rho in 2.0f64..12.0
        ) {
            let x = StatVector(xs);
            let y = StatVector(ys);
            for kind in [NormKind::Lp(rho), NormKind::Sup] {
                let nx = norm(&x, kind);
                let tol = 1e-10 * (1.0 + nx * s.abs());
                prop_assert!((norm(&x.scaled(s), kind) - s.abs() * nx).abs() <= tol);
                let sum = x.padded_sub(&y.scaled(-1.0));
                prop_assert!(norm(&sum, kind) <= nx + norm(&y, kind) + 1e-9);
            }
        }

        #[test]
        fn sqrt_n_is_scaled_raw_sum(rows in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, -5.0f64..5.0), 3), 1..12)) {
            prop_assume!(rows.iter().all(|r| r.iter().any(Option::is_some)));
            let s = from_matrix(&rows).unwrap();
            let raw = raw_sum(&s);
            let scaled = normalized_sum(&s, NormalizerKind::SqrtN);
            let root = (s.n() as f64).sqrt();
            for (a, b) in raw.0.iter().zip(&scaled.0) {
                prop_assert_eq!(a / root, *b);
            }
        }

        #[test]
        fn normalizers_agree_on_complete_data(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..12)) {
            let grid: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.iter().copied().map(Some).collect()).collect();
            let s = from_matrix(&grid).unwrap();
            prop_assert_eq!(
                normalized_sum(&s, NormalizerKind::RandomColumnwise),
                normalized_sum(&s, NormalizerKind::SqrtN)
            );
        }
    }
}
