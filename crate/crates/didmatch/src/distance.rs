//! Pairwise edge costs combining covariate similarity and treatment-change
//! separation.
//!
//! Two combination rules are supported. The ratio rule divides the covariate
//! distance by the treatment-change separation (plus a regularizer), favoring
//! pairs that are close in covariates and far apart in dose change. The
//! penalty rule adds a large constant whenever the dose-change gap falls at or
//! below a threshold.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelUnit};

/// Covariate distance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMetric {
    /// Quadratic form with the inverse sample covariance (no square root).
    Mahalanobis,
    /// Mahalanobis on rank-transformed covariates with the covariance of ranks.
    RankMahalanobis,
    /// Squared Euclidean distance.
    Euclidean,
}

/// How covariate distance and dose-change separation combine into one cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Ratio,
    Penalty,
}

/// Distance configuration. `None` fields are resolved from the data:
/// epsilon = 0.01 x median pairwise dose-change separation (1 if that median
/// is zero), big_m = 1000 x max pairwise covariate distance (1 if all zero),
/// xi = median pairwise dose-change separation, ridge = 1e-8 x trace(cov)/K.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub covariate_metric: CovariateMetric,
    pub combine: CombineMode,
    pub epsilon: Option<f64>,
    pub big_m: Option<f64>,
    pub xi: Option<f64>,
    pub ridge: Option<f64>,
}

impl Default for DistanceSpec {
    fn default() -> Self {
        DistanceSpec {
            covariate_metric: CovariateMetric::Mahalanobis,
            combine: CombineMode::Ratio,
            epsilon: None,
            big_m: None,
            xi: None,
            ridge: None,
        }
    }
}

/// A spec with every data-adaptive default filled in. Fields irrelevant to
/// the chosen combine mode are carried as written (or zero) and ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedDistanceSpec {
    pub covariate_metric: CovariateMetric,
    pub combine: CombineMode,
    pub epsilon: f64,
    pub big_m: f64,
    pub xi: f64,
    pub ridge: f64,
}

/// Resolved spec plus the derived quantities needed to price an edge.
#[derive(Debug, Clone)]
pub struct DistanceContext<'a> {
    pub spec: ResolvedDistanceSpec,
    /// Inverse covariance for (rank-)Mahalanobis; `None` when K = 0 or the
    /// metric is Euclidean.
    pub cov_inv: Option<DMatrix<f64>>,
    /// The dataset in the space distances are computed in (rank-transformed
    /// for the rank metric, borrowed otherwise).
    pub data: Cow<'a, PanelDataset>,
}

/// Symmetric nonnegative pairwise cost table. The diagonal is not a valid
/// entry.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    costs: Vec<f64>,
}

impl DistanceMatrix {
    /// Build from an explicit symmetric cost function over index pairs.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut costs = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let c = f(a, b);
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::Validation(format!(
                        "cost for pair ({a}, {b}) is {c}; costs must be finite and nonnegative"
                    )));
                }
                costs[a * n + b] = c;
                costs[b * n + a] = c;
            }
        }
        Ok(DistanceMatrix { n, costs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cost of the edge `{a, b}`, `a != b`.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        assert!(a != b, "diagonal of a distance matrix is undefined");
        self.costs[a * self.n + b]
    }
}

/// Inverse of (sample covariance of the covariates + ridge * identity).
///
/// The sample covariance uses divisor N - 1. Requires N >= 2 and K >= 1.
pub fn covariance_inverse(ds: &PanelDataset, ridge: f64) -> Result<DMatrix<f64>> {
    let n = ds.len();
    let k = ds.n_covariates();
    if n < 2 {
        return Err(Error::Validation(format!(
            "covariance needs at least 2 units, got {n}"
        )));
    }
    if k < 1 {
        return Err(Error::Validation("covariance needs at least 1 covariate".into()));
    }
    if ridge < 0.0 {
        return Err(Error::Config("ridge must be nonnegative".into()));
    }

    let mut cov = sample_covariance(ds);
    for d in 0..k {
        cov[(d, d)] += ridge;
    }
    invert_checked(&cov).ok_or_else(|| {
        Error::Numeric(
            "covariance matrix is singular or near-singular; increase the ridge parameter".into(),
        )
    })
}

fn sample_covariance(ds: &PanelDataset) -> DMatrix<f64> {
    let n = ds.len();
    let k = ds.n_covariates();
    let mut means = vec![0.0; k];
    for u in &ds.units {
        for (m, v) in means.iter_mut().zip(&u.x) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(k, k);
    for u in &ds.units {
        for a in 0..k {
            let da = u.x[a] - means[a];
            for b in a..k {
                cov[(a, b)] += da * (u.x[b] - means[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..k {
        for b in a..k {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Inversion with a residual check so that numerically meaningless inverses
/// of near-singular matrices are rejected rather than returned.
fn invert_checked(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = m.nrows();
    let inv = m.clone().try_inverse()?;
    let residual = m * &inv - DMatrix::<f64>::identity(k, k);
    if residual.iter().any(|v| !v.is_finite() || v.abs() > 1e-6) {
        return None;
    }
    Some(inv)
}

/// Replace every covariate column by ranks 1..N, ties receiving the average
/// rank. Treatment and outcome fields are untouched.
pub fn rank_transform(ds: &PanelDataset) -> PanelDataset {
    let n = ds.len();
    let k = ds.n_covariates();
    let mut ranked = ds.clone();
    for col in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            ds.units[a].x[col]
                .partial_cmp(&ds.units[b].x[col])
                .expect("NaN covariate in rank transform")
        });
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && ds.units[order[j + 1]].x[col] == ds.units[order[i]].x[col] {
                j += 1;
            }
            // Average rank over the tied run [i, j], 1-based.
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranked.units[idx].x[col] = avg;
            }
            i = j + 1;
        }
    }
    ranked
}

/// Covariate distance between two vectors under the given metric.
///
/// Mahalanobis variants compute the quadratic form d' * cov_inv * d without a
/// square root; Euclidean is the squared Euclidean norm of the difference.
pub fn covariate_distance(
    x1: &[f64],
    x2: &[f64],
    metric: CovariateMetric,
    cov_inv: Option<&DMatrix<f64>>,
) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::Validation(format!(
            "covariate dimension mismatch: {} vs {}",
            x1.len(),
            x2.len()
        )));
    }
    if x1.is_empty() {
        return Ok(0.0);
    }
    let d = DVector::from_iterator(x1.len(), x1.iter().zip(x2).map(|(a, b)| a - b));
    match metric {
        CovariateMetric::Euclidean => Ok(d.dot(&d)),
        CovariateMetric::Mahalanobis | CovariateMetric::RankMahalanobis => {
            let m = cov_inv.ok_or_else(|| {
                Error::Validation("Mahalanobis distance requires an inverse covariance".into())
            })?;
            if m.nrows() != x1.len() || m.ncols() != x1.len() {
                return Err(Error::Validation(format!(
                    "inverse covariance is {}x{}, expected {k}x{k}",
                    m.nrows(),
                    m.ncols(),
                    k = x1.len()
                )));
            }
            Ok((m * &d).dot(&d))
        }
    }
}

/// Separation between two unit-level dose changes: |d1 - d2|.
pub fn treatment_separation(d1: f64, d2: f64) -> f64 {
    (d1 - d2).abs()
}

/// Edge cost for a pair of units under a resolved spec.
///
/// For the rank metric the units must already hold rank-transformed
/// covariates (as produced inside [`build_distance_matrix`]).
pub fn edge_cost(
    u1: &PanelUnit,
    u2: &PanelUnit,
    spec: &ResolvedDistanceSpec,
    cov_inv: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let dx = covariate_distance(&u1.x, &u2.x, spec.covariate_metric, cov_inv)?;
    let dz = treatment_separation(u1.delta_z(), u2.delta_z());
    Ok(combine_cost(dx, dz, spec))
}

fn combine_cost(dx: f64, dz: f64, spec: &ResolvedDistanceSpec) -> f64 {
    match spec.combine {
        CombineMode::Ratio => dx / (dz + spec.epsilon),
        CombineMode::Penalty => {
            if dz <= spec.xi {
                dx + spec.big_m
            } else {
                dx
            }
        }
    }
}

impl DistanceSpec {
    /// Fill data-adaptive defaults and prepare the inverse covariance.
    ///
    /// Requires N >= 2. The covariance (when needed) is computed once on the
    /// full input dataset.
    pub fn resolve<'a>(&self, ds: &'a PanelDataset) -> Result<DistanceContext<'a>> {
        let n = ds.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "distance construction needs at least 2 units, got {n}"
            )));
        }
        for u in &ds.units {
            if let Some(field) = u.first_non_finite_field() {
                return Err(Error::Validation(format!(
                    "unit \"{}\" has non-finite value in {field}; run validation first",
                    u.id
                )));
            }
        }

        let data: Cow<'a, PanelDataset> = match self.covariate_metric {
            CovariateMetric::RankMahalanobis => Cow::Owned(rank_transform(ds)),
            _ => Cow::Borrowed(ds),
        };

        let k = data.n_covariates();
        let needs_cov = k > 0
            && matches!(
                self.covariate_metric,
                CovariateMetric::Mahalanobis | CovariateMetric::RankMahalanobis
            );
        let ridge = match self.ridge {
            Some(r) if r >= 0.0 => r,
            Some(r) => return Err(Error::Config(format!("ridge must be >= 0, got {r}"))),
            None if needs_cov => {
                let cov = sample_covariance(&data);
                1e-8 * cov.trace() / k as f64
            }
            None => 0.0,
        };
        let cov_inv = if needs_cov {
            Some(covariance_inverse(&data, ridge)?)
        } else {
            None
        };

        let dz_median = || -> f64 {
            let mut seps = Vec::with_capacity(n * (n - 1) / 2);
            for a in 0..n {
                for b in (a + 1)..n {
                    seps.push(treatment_separation(
                        data.units[a].delta_z(),
                        data.units[b].delta_z(),
                    ));
                }
            }
            median(&mut seps)
        };

        let (epsilon, big_m, xi) = match self.combine {
            CombineMode::Ratio => {
                let epsilon = match self.epsilon {
                    Some(e) if e > 0.0 => e,
                    Some(e) => {
                        return Err(Error::Config(format!("epsilon must be > 0, got {e}")))
                    }
                    None => {
                        let med = dz_median();
                        if med > 0.0 {
                            0.01 * med
                        } else {
                            1.0
                        }
                    }
                };
                (epsilon, self.big_m.unwrap_or(0.0), self.xi.unwrap_or(0.0))
            }
            CombineMode::Penalty => {
                let big_m = match self.big_m {
                    Some(m) if m > 0.0 => m,
                    Some(m) => return Err(Error::Config(format!("big_m must be > 0, got {m}"))),
                    None => {
                        let mut max_dx = 0.0_f64;
                        for a in 0..n {
                            for b in (a + 1)..n {
                                let dx = covariate_distance(
                                    &data.units[a].x,
                                    &data.units[b].x,
                                    self.covariate_metric,
                                    cov_inv.as_ref(),
                                )?;
                                max_dx = max_dx.max(dx);
                            }
                        }
                        if max_dx > 0.0 {
                            1000.0 * max_dx
                        } else {
                            1.0
                        }
                    }
                };
                let xi = match self.xi {
                    Some(x) if x >= 0.0 => x,
                    Some(x) => return Err(Error::Config(format!("xi must be >= 0, got {x}"))),
                    None => dz_median(),
                };
                (self.epsilon.unwrap_or(0.0), big_m, xi)
            }
        };

        Ok(DistanceContext {
            spec: ResolvedDistanceSpec {
                covariate_metric: self.covariate_metric,
                combine: self.combine,
                epsilon,
                big_m,
                xi,
                ridge,
            },
            cov_inv,
            data,
        })
    }
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// All pairwise edge costs for a dataset under a spec with defaults resolved
/// internally.
pub fn build_distance_matrix(ds: &PanelDataset, spec: &DistanceSpec) -> Result<DistanceMatrix> {
    let ctx = spec.resolve(ds)?;
    build_distance_matrix_resolved(&ctx)
}

/// All pairwise edge costs from an already-resolved context.
pub fn build_distance_matrix_resolved(ctx: &DistanceContext<'_>) -> Result<DistanceMatrix> {
    let data = ctx.data.as_ref();
    let n = data.len();
    let k = data.n_covariates();
    let cov_inv = ctx.cov_inv.as_ref();

    // Buffered quadratic form; avoids per-pair allocation on large panels.
    let mut diff = DVector::zeros(k);
    let mut tmp = DVector::zeros(k);
    let mut dx_buf = |a: usize, b: usize| -> f64 {
        let xa = &data.units[a].x;
        let xb = &data.units[b].x;
        for i in 0..k {
            diff[i] = xa[i] - xb[i];
        }
        match (ctx.spec.covariate_metric, cov_inv) {
            (CovariateMetric::Euclidean, _) | (_, None) => diff.dot(&diff),
            (_, Some(m)) => {
                tmp.gemv(1.0, m, &diff, 0.0);
                tmp.dot(&diff)
            }
        }
    };

    DistanceMatrix::from_fn(n, |a, b| {
        let dx = dx_buf(a, b);
        let dz = treatment_separation(data.units[a].delta_z(), data.units[b].delta_z());
        combine_cost(dx, dz, &ctx.spec)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelUnit;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(id: &str, x: Vec<f64>, dz: f64) -> PanelUnit {
        PanelUnit::new(id, x, 0.0, dz, 0.0, 0.0).unwrap()
    }

    fn dataset(units: Vec<PanelUnit>) -> PanelDataset {
        let k = units.first().map_or(0, |u| u.x.len());
        let names = (0..k).map(|i| format!("x{}", i + 1)).collect();
        PanelDataset::new(units, names).unwrap()
    }

    /// Test-side Gauss-Jordan inversion with partial pivoting.
    fn gauss_jordan_invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let k = m.nrows();
        let mut a = m.clone();
        let mut inv = DMatrix::<f64>::identity(k, k);
        for col in 0..k {
            let pivot_row = (col..k).max_by(|&r1, &r2| {
                a[(r1, col)].abs().partial_cmp(&a[(r2, col)].abs()).unwrap()
            })?;
            if a[(pivot_row, col)] == 0.0 {
                return None;
            }
            a.swap_rows(col, pivot_row);
            inv.swap_rows(col, pivot_row);
            let pivot = a[(col, col)];
            for j in 0..k {
                a[(col, j)] /= pivot;
                inv[(col, j)] /= pivot;
            }
            for r in 0..k {
                if r != col {
                    let factor = a[(r, col)];
                    for j in 0..k {
                        a[(r, j)] -= factor * a[(col, j)];
                        inv[(r, j)] -= factor * inv[(col, j)];
                    }
                }
            }
        }
        Some(inv)
    }

    #[test]
    fn covariance_identity_case() {
        let a = 1.5_f64.sqrt();
        let ds = dataset(vec![
            unit("a", vec![a, 0.0], 0.0),
            unit("b", vec![-a, 0.0], 0.0),
            unit("c", vec![0.0, a], 0.0),
            unit("d", vec![0.0, -a], 0.0),
        ]);
        let inv = covariance_inverse(&ds, 0.0).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((inv[(r, c)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_collinear_is_singular() {
        let ds = dataset(vec![
            unit("a", vec![1.0, 2.0], 0.0),
            unit("b", vec![2.0, 4.0], 0.0),
            unit("c", vec![-1.0, -2.0], 0.0),
        ]);
        let err = covariance_inverse(&ds, 0.0).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("ridge"));
        // A ridge rescues it.
        assert!(covariance_inverse(&ds, 1e-4).is_ok());
    }

    #[test]
    fn covariance_inverse_matches_gauss_jordan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let units: Vec<PanelUnit> = (0..20)
                .map(|i| {
                    unit(
                        &format!("u{i}"),
                        (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                        0.0,
                    )
                })
                .collect();
            let ds = dataset(units);
            let inv = covariance_inverse(&ds, 1e-6).unwrap();
            let mut cov = sample_covariance(&ds);
            for d in 0..3 {
                cov[(d, d)] += 1e-6;
            }
            let oracle = gauss_jordan_invert(&cov).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    assert!(
                        (inv[(r, c)] - oracle[(r, c)]).abs() < 1e-8,
                        "inverse mismatch at ({r},{c}): {} vs {}",
                        inv[(r, c)],
                        oracle[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn covariate_distance_basics() {
        let id2 = DMatrix::<f64>::identity(2, 2);
        let d = covariate_distance(
            &[1.0, 2.0],
            &[1.0, 2.0],
            CovariateMetric::Mahalanobis,
            Some(&id2),
        )
        .unwrap();
        assert_eq!(d, 0.0);
        let d = covariate_distance(
            &[1.0, 0.0],
            &[0.0, 0.0],
            CovariateMetric::Mahalanobis,
            Some(&id2),
        )
        .unwrap();
        assert_eq!(d, 1.0);
        assert!(covariate_distance(&[1.0], &[1.0, 2.0], CovariateMetric::Euclidean, None).is_err());
    }

    #[test]
    fn covariate_distance_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x1: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut m = DMatrix::<f64>::zeros(3, 3);
            for r in 0..3 {
                for c in r..3 {
                    let v = rng.gen_range(-1.0..1.0);
                    m[(r, c)] = v;
                    m[(c, r)] = v;
                }
            }
            let got =
                covariate_distance(&x1, &x2, CovariateMetric::Mahalanobis, Some(&m)).unwrap();
            let mut oracle = 0.0;
            for a in 0..3 {
                for e in 0..3 {
                    oracle += (x1[a] - x2[a]) * m[(a, e)] * (x1[e] - x2[e]);
                }
            }
            assert!((got - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_transform_cases() {
        let ds = dataset(vec![
            unit("a", vec![5.0], 0.0),
            unit("b", vec![1.0], 0.0),
            unit("c", vec![3.0], 0.0),
        ]);
        let r = rank_transform(&ds);
        assert_eq!(
            r.units.iter().map(|u| u.x[0]).collect::<Vec<_>>(),
            vec![3.0, 1.0, 2.0]
        );

        let ds = dataset(vec![
            unit("a", vec![2.0], 0.0),
            unit("b", vec![2.0], 0.0),
            unit("c", vec![7.0], 0.0),
        ]);
        let r = rank_transform(&ds);
        assert_eq!(
            r.units.iter().map(|u| u.x[0]).collect::<Vec<_>>(),
            vec![1.5, 1.5, 3.0]
        );

        let ds = dataset(vec![
            unit("a", vec![4.0], 0.0),
            unit("b", vec![4.0], 0.0),
            unit("c", vec![4.0], 0.0),
            unit("d", vec![4.0], 0.0),
        ]);
        let r = rank_transform(&ds);
        assert!(r.units.iter().all(|u| u.x[0] == 2.5));
    }

    #[test]
    fn treatment_separation_cases() {
        assert_eq!(treatment_separation(3.0, 1.0), 2.0);
        assert_eq!(treatment_separation(-1.0, -1.0), 0.0);
        assert_eq!(treatment_separation(0.5, -0.5), 1.0);
    }

    #[test]
    fn edge_cost_ratio_and_penalty() {
        // Euclidean metric: x difference (1, 1) gives dx = 2 exactly.
        let u1 = unit("a", vec![1.0, 1.0], 4.0);
        let u2 = unit("b", vec![0.0, 0.0], 0.0);
        let ratio = ResolvedDistanceSpec {
            covariate_metric: CovariateMetric::Euclidean,
            combine: CombineMode::Ratio,
            epsilon: 1.0,
            big_m: 0.0,
            xi: 0.0,
            ridge: 0.0,
        };
        assert!((edge_cost(&u1, &u2, &ratio, None).unwrap() - 0.4).abs() < 1e-15);

        let pen = ResolvedDistanceSpec {
            covariate_metric: CovariateMetric::Euclidean,
            combine: CombineMode::Penalty,
            epsilon: 0.0,
            big_m: 100.0,
            xi: 0.5,
            ridge: 0.0,
        };
        let close = unit("c", vec![0.0, 0.0], 3.9);
        let far = unit("d", vec![0.0, 0.0], 4.6);
        // Hinge active: dose-change gap 0.1 <= 0.5.
        assert_eq!(edge_cost(&u1, &close, &pen, None).unwrap(), 102.0);
        // Hinge inactive: dose-change gap 0.6 > 0.5.
        assert_eq!(edge_cost(&u1, &far, &pen, None).unwrap(), 2.0);
    }

    #[test]
    fn matrix_two_units() {
        let ds = dataset(vec![unit("a", vec![1.0], 1.0), unit("b", vec![0.0], 0.0)]);
        let spec = DistanceSpec {
            covariate_metric: CovariateMetric::Euclidean,
            ..DistanceSpec::default()
        };
        let dm = build_distance_matrix(&ds, &spec).unwrap();
        assert_eq!(dm.n(), 2);
        assert_eq!(dm.cost(0, 1), dm.cost(1, 0));
    }

    #[test]
    fn matrix_identical_units_all_zero_in_ratio_mode() {
        let units = (0..4)
            .map(|i| unit(&format!("u{i}"), vec![1.0, -2.0], 3.0))
            .collect();
        let ds = dataset(units);
        let spec = DistanceSpec {
            covariate_metric: CovariateMetric::Euclidean,
            epsilon: Some(0.5),
            ..DistanceSpec::default()
        };
        let dm = build_distance_matrix(&ds, &spec).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert_eq!(dm.cost(a, b), 0.0);
                }
            }
        }
    }

    #[test]
    fn matrix_entries_match_edge_cost_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let units: Vec<PanelUnit> = (0..6)
            .map(|i| {
                unit(
                    &format!("u{i}"),
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let ds = dataset(units);
        let spec = DistanceSpec::default();
        let ctx = spec.resolve(&ds).unwrap();
        let dm = build_distance_matrix_resolved(&ctx).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                if a != b {
                    let expect = edge_cost(
                        &ctx.data.units[a],
                        &ctx.data.units[b],
                        &ctx.spec,
                        ctx.cov_inv.as_ref(),
                    )
                    .unwrap();
                    assert!((dm.cost(a, b) - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let units: Vec<PanelUnit> = (0..7)
            .map(|i| {
                unit(
                    &format!("u{i}"),
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let permuted: Vec<PanelUnit> = perm.iter().map(|&i| units[i].clone()).collect();
        let ds = dataset(units);
        let ds_p = dataset(permuted);
        let spec = DistanceSpec::default();
        let dm = build_distance_matrix(&ds, &spec).unwrap();
        let dm_p = build_distance_matrix(&ds_p, &spec).unwrap();
        for a in 0..7 {
            for b in 0..7 {
                if a != b {
                    assert!((dm_p.cost(a, b) - dm.cost(perm[a], perm[b])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ratio_cost_strictly_decreasing_in_separation() {
        let spec = ResolvedDistanceSpec {
            covariate_metric: CovariateMetric::Euclidean,
            combine: CombineMode::Ratio,
            epsilon: 0.3,
            big_m: 0.0,
            xi: 0.0,
            ridge: 0.0,
        };
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let dz = step as f64 * 0.25;
            let cost = combine_cost(2.0, dz, &spec);
            assert!(cost < last, "cost must strictly decrease in dz");
            last = cost;
        }
    }

    #[test]
    fn penalty_gap_contribution_is_two_valued() {
        let spec = ResolvedDistanceSpec {
            covariate_metric: CovariateMetric::Euclidean,
            combine: CombineMode::Penalty,
            epsilon: 0.0,
            big_m: 7.5,
            xi: 1.0,
            ridge: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let dx = rng.gen_range(0.0..5.0);
            let dz = rng.gen_range(0.0..3.0);
            let cost = combine_cost(dx, dz, &spec);
            assert!(cost == dx || cost == dx + 7.5);
        }
    }

    #[test]
    fn zero_covariates_is_legal() {
        let units: Vec<PanelUnit> = (0..4)
            .map(|i| unit(&format!("u{i}"), vec![], i as f64))
            .collect();
        let ds = PanelDataset::new(units, vec![]).unwrap();

        // Ratio mode: the covariate distance is identically zero.
        let dm = build_distance_matrix(&ds, &DistanceSpec::default()).unwrap();
        assert_eq!(dm.cost(0, 3), 0.0);

        // Penalty mode: the cost depends only on the dose-change separation.
        let spec = DistanceSpec {
            combine: CombineMode::Penalty,
            big_m: Some(5.0),
            xi: Some(1.5),
            ..DistanceSpec::default()
        };
        let dm = build_distance_matrix(&ds, &spec).unwrap();
        assert_eq!(dm.cost(0, 1), 5.0); // separation 1 <= 1.5
        assert_eq!(dm.cost(0, 3), 0.0); // separation 3 > 1.5
    }

    #[test]
    fn rank_metric_invariant_to_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let units: Vec<PanelUnit> = (0..8)
            .map(|i| {
                unit(
                    &format!("u{i}"),
                    vec![rng.gen_range(0.1..3.0), rng.gen_range(-1.0..1.0)],
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let mut transformed = units.clone();
        for u in &mut transformed {
            u.x[0] = u.x[0].exp(); // strictly monotone
        }
        let spec = DistanceSpec {
            covariate_metric: CovariateMetric::RankMahalanobis,
            epsilon: Some(0.1),
            ..DistanceSpec::default()
        };
        let dm = build_distance_matrix(&dataset(units), &spec).unwrap();
        let dm_t = build_distance_matrix(&dataset(transformed), &spec).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    assert!((dm.cost(a, b) - dm_t.cost(a, b)).abs() < 1e-10);
                }
            }
        }
    }
}
