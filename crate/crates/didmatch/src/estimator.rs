//! Point estimation and design-based inference on matched pairs.
//!
//! Within every matched pair the ratio of the outcome-change contrast to the
//! dose-change contrast is a unit of analysis; the sample average of those
//! ratios is the point estimate. Inference comes from the post-matching
//! randomization of which unit received the larger dose change: the variance
//! estimator projects the leverage-adjusted pair ratios off a low-rank
//! adjustment matrix, confidence intervals use normal quantiles, and the
//! randomization test enumerates (or samples) within-pair sign flips under a
//! sharp null. A potential-outcome table supports exhaustive-assignment
//! checks of unbiasedness, variance conservativeness, and the regularity
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchedSample;
use crate::normal::standard_normal_quantile;

/// Outcome-side transform of the estimand family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiY {
    Identity,
    Log,
}

/// Dose-side transform of the estimand family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiZ {
    /// dz_hi - dz_lo (the plain dose-change gap).
    Difference,
    /// ln(dz_hi / dz_lo); both doses must be strictly positive.
    LogRatio,
}

/// Named transform pair selecting a member of the estimand family.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub psi_y: PsiY,
    pub psi_z: PsiZ,
}

impl Default for EstimandSpec {
    fn default() -> Self {
        EstimandSpec {
            psi_y: PsiY::Identity,
            psi_z: PsiZ::Difference,
        }
    }
}

/// One matched pair reduced to the quantities estimation needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairObservation {
    pub pair_index: usize,
    pub id_hi: String,
    pub id_lo: String,
    pub dz_hi: f64,
    pub dz_lo: f64,
    pub dy_hi: f64,
    pub dy_lo: f64,
    /// Within-pair means of each covariate, in dataset order.
    pub covariate_means: Vec<f64>,
}

impl PairObservation {
    pub fn gap(&self) -> f64 {
        self.dz_hi - self.dz_lo
    }
}

/// Matched pairs in estimation form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedData {
    pub pairs: Vec<PairObservation>,
    pub covariate_names: Vec<String>,
}

impl PairedData {
    pub fn from_matched_sample(ms: &MatchedSample) -> Self {
        let pairs = ms
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| PairObservation {
                pair_index: i,
                id_hi: p.unit_hi.id.clone(),
                id_lo: p.unit_lo.id.clone(),
                dz_hi: p.delta_z_hi,
                dz_lo: p.delta_z_lo,
                dy_hi: p.unit_hi.delta_y(),
                dy_lo: p.unit_lo.delta_y(),
                covariate_means: p
                    .unit_hi
                    .x
                    .iter()
                    .zip(&p.unit_lo.x)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            })
            .collect();
        PairedData {
            pairs,
            covariate_names: ms.covariate_names.clone(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// What to do with pairs whose dose-change gap is (numerically) zero, where
/// the pair ratio is undefined.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub enum ZeroGapPolicy {
    /// Fail loudly (default).
    #[default]
    Error,
    /// Drop pairs with gap below the tolerance, recording the exclusion.
    /// Note that dropping changes the estimand's pair set.
    Drop { tol: f64 },
}

/// Default tolerance for `--drop-zero-gap`.
pub const DEFAULT_ZERO_GAP_TOL: f64 = 1e-12;

/// A pair removed before estimation, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub pair_index: usize,
    pub id_hi: String,
    pub id_lo: String,
    pub reason: String,
}

/// Split the data into included pairs and excluded pairs per the policy.
pub fn apply_zero_gap_policy(
    pd: &PairedData,
    policy: ZeroGapPolicy,
) -> Result<(PairedData, Vec<ExcludedPair>)> {
    let mut included = Vec::with_capacity(pd.pairs.len());
    let mut excluded = Vec::new();
    for p in &pd.pairs {
        let gap = p.gap();
        if gap < 0.0 {
            return Err(Error::Validation(format!(
                "pair {} has dz_hi < dz_lo; pairs must be ordered by dose change",
                p.pair_index
            )));
        }
        match policy {
            ZeroGapPolicy::Error => {
                if gap == 0.0 {
                    return Err(Error::Estimation(format!(
                        "pair {} (ids {}, {}) has zero dose-change gap; the pair ratio is \
                         undefined (use the drop-zero-gap mode to exclude such pairs)",
                        p.pair_index, p.id_hi, p.id_lo
                    )));
                }
                included.push(p.clone());
            }
            ZeroGapPolicy::Drop { tol } => {
                if gap < tol {
                    excluded.push(ExcludedPair {
                        pair_index: p.pair_index,
                        id_hi: p.id_hi.clone(),
                        id_lo: p.id_lo.clone(),
                        reason: "zero dose gap".into(),
                    });
                } else {
                    included.push(p.clone());
                }
            }
        }
    }
    Ok((
        PairedData {
            pairs: included,
            covariate_names: pd.covariate_names.clone(),
        },
        excluded,
    ))
}

/// Per-pair ratio statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairStatistics {
    pub pair_index: usize,
    /// Outcome-change contrast dy_hi - dy_lo.
    pub num: f64,
    /// Dose-change contrast dz_hi - dz_lo (> 0 for included pairs).
    pub den: f64,
    /// num / den.
    pub tau_hat_i: f64,
}

/// Within-pair ratio of the outcome-change contrast to the dose-change
/// contrast. The gap must be positive.
pub fn pair_did_ratio(p: &PairObservation) -> Result<PairStatistics> {
    let den = p.gap();
    if den <= 0.0 {
        return Err(Error::Estimation(format!(
            "pair {} has non-positive dose-change gap {den}",
            p.pair_index
        )));
    }
    let num = p.dy_hi - p.dy_lo;
    Ok(PairStatistics {
        pair_index: p.pair_index,
        num,
        den,
        tau_hat_i: num / den,
    })
}

/// Point estimate: the mean of the per-pair ratios.
pub fn estimate_tau(pd: &PairedData) -> Result<f64> {
    if pd.pairs.is_empty() {
        return Err(Error::Estimation("no included pairs to estimate from".into()));
    }
    let mut sum = 0.0;
    for p in &pd.pairs {
        sum += pair_did_ratio(p)?.tau_hat_i;
    }
    Ok(sum / pd.pairs.len() as f64)
}

/// Transformed-family estimate; with identity/difference transforms this is
/// bit-identical to [`estimate_tau`].
pub fn estimate_theta(pd: &PairedData, spec: &EstimandSpec) -> Result<f64> {
    if pd.pairs.is_empty() {
        return Err(Error::Estimation("no included pairs to estimate from".into()));
    }
    let psi_y = |v: f64, p: &PairObservation| -> Result<f64> {
        match spec.psi_y {
            PsiY::Identity => Ok(v),
            PsiY::Log => {
                if v <= 0.0 {
                    Err(Error::Domain {
                        pair_index: p.pair_index,
                        message: format!("log transform of non-positive outcome change {v}"),
                    })
                } else {
                    Ok(v.ln())
                }
            }
        }
    };
    let mut sum = 0.0;
    for p in &pd.pairs {
        let den = match spec.psi_z {
            PsiZ::Difference => p.gap(),
            PsiZ::LogRatio => {
                if p.dz_hi <= 0.0 || p.dz_lo <= 0.0 {
                    return Err(Error::Domain {
                        pair_index: p.pair_index,
                        message: format!(
                            "log-ratio transform needs positive doses, got ({}, {})",
                            p.dz_hi, p.dz_lo
                        ),
                    });
                }
                (p.dz_hi / p.dz_lo).ln()
            }
        };
        if den <= 0.0 {
            return Err(Error::Domain {
                pair_index: p.pair_index,
                message: format!("transformed dose contrast {den} is not positive"),
            });
        }
        sum += (psi_y(p.dy_hi, p)? - psi_y(p.dy_lo, p)?) / den;
    }
    Ok(sum / pd.pairs.len() as f64)
}

/// Columns of the variance-adjustment matrix Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// A single column of ones.
    InterceptOnly,
    /// Intercept plus within-pair covariate means.
    InterceptPlusCovariateMeans,
}

/// Variance-estimator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceSpec {
    pub q_mode: QMode,
    /// Covariates to include as Q columns; empty means all.
    pub selected_covariates: Vec<String>,
}

impl Default for VarianceSpec {
    fn default() -> Self {
        VarianceSpec {
            q_mode: QMode::InterceptOnly,
            selected_covariates: Vec::new(),
        }
    }
}

/// Build the I x L adjustment matrix Q: a column of ones, optionally followed
/// by within-pair covariate means.
pub fn build_q(pd: &PairedData, spec: &VarianceSpec) -> Result<DMatrix<f64>> {
    let i = pd.n_pairs();
    let selected: Vec<usize> = match spec.q_mode {
        QMode::InterceptOnly => Vec::new(),
        QMode::InterceptPlusCovariateMeans => {
            if spec.selected_covariates.is_empty() {
                (0..pd.covariate_names.len()).collect()
            } else {
                spec.selected_covariates
                    .iter()
                    .map(|name| {
                        pd.covariate_names
                            .iter()
                            .position(|n| n == name)
                            .ok_or_else(|| {
                                Error::Config(format!("unknown covariate \"{name}\" in Q spec"))
                            })
                    })
                    .collect::<Result<Vec<usize>>>()?
            }
        }
    };
    let l = 1 + selected.len();
    if l >= i {
        return Err(Error::Config(format!(
            "Q must have fewer columns than pairs (L = {l}, I = {i})"
        )));
    }
    let mut q = DMatrix::zeros(i, l);
    for r in 0..i {
        q[(r, 0)] = 1.0;
        for (c, &cov) in selected.iter().enumerate() {
            q[(r, c + 1)] = pd.pairs[r].covariate_means[cov];
        }
    }
    check_full_column_rank(&q)?;
    Ok(q)
}

fn check_full_column_rank(q: &DMatrix<f64>) -> Result<()> {
    let qr = q.clone().qr();
    let r = qr.r();
    let scale = q
        .column_iter()
        .map(|c| c.norm())
        .fold(1.0_f64, |a, b| a.max(b));
    for l in 0..q.ncols() {
        if r[(l, l)].abs() <= 1e-9 * scale {
            return Err(Error::Config(format!(
                "Q is rank-deficient (column {l} is collinear); remove redundant covariates"
            )));
        }
    }
    Ok(())
}

/// Which projection route computes the leverages and the quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionPath {
    /// Explicit Q (Q'Q)^-1 Q'.
    NormalEquations,
    /// Thin QR of Q; numerically preferable for wider Q.
    Qr,
    /// Normal equations up to 4 columns, QR beyond.
    Auto,
}

/// Design-based variance of the mean pair ratio.
///
/// With H the projection onto the columns of Q and h_ii its diagonal, each
/// ratio is inflated to y_i = tau_i / sqrt(1 - h_ii) and
/// s2 = I^-2 v' (Id - H) v. Also returns the leverages.
pub fn variance_s2(pair_stats: &[PairStatistics], q: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    variance_s2_with_path(pair_stats, q, ProjectionPath::Auto)
}

/// [`variance_s2`] with an explicit projection route; the two routes agree to
/// tight tolerance and the choice is exposed for verification.
pub fn variance_s2_with_path(
    pair_stats: &[PairStatistics],
    q: &DMatrix<f64>,
    path: ProjectionPath,
) -> Result<(f64, Vec<f64>)> {
    let i = pair_stats.len();
    let l = q.ncols();
    if q.nrows() != i {
        return Err(Error::Validation(format!(
            "Q has {} rows but there are {i} pairs",
            q.nrows()
        )));
    }
    if l >= i {
        return Err(Error::Config(format!(
            "Q must have fewer columns than pairs (L = {l}, I = {i})"
        )));
    }
    check_full_column_rank(q)?;

    let use_qr = match path {
        ProjectionPath::NormalEquations => false,
        ProjectionPath::Qr => true,
        ProjectionPath::Auto => l > 4,
    };

    let tau: DVector<f64> = DVector::from_iterator(i, pair_stats.iter().map(|s| s.tau_hat_i));

    let (leverages, quad) = if use_qr {
        // Thin QR: H = U U', so h_ii = ||U_i.||^2 and
        // v'(Id-H)v = ||v||^2 - ||U'v||^2.
        let qr = q.clone().qr();
        let u = qr.q();
        let leverages: Vec<f64> = (0..i).map(|r| u.row(r).norm_squared()).collect();
        let v = leverage_adjusted(&tau, &leverages)?;
        let utv = u.transpose() * &v;
        (leverages, v.norm_squared() - utv.norm_squared())
    } else {
        let qtq = q.transpose() * q;
        let qtq_inv = qtq.try_inverse().ok_or_else(|| {
            Error::Numeric("Q'Q is singular; remove redundant covariates from Q".into())
        })?;
        let h = q * qtq_inv * q.transpose();
        let leverages: Vec<f64> = (0..i).map(|r| h[(r, r)]).collect();
        let v = leverage_adjusted(&tau, &leverages)?;
        let hv = &h * &v;
        (leverages, v.dot(&v) - v.dot(&hv))
    };

    let s2 = (quad / (i as f64 * i as f64)).max(0.0);
    Ok((s2, leverages))
}

fn leverage_adjusted(tau: &DVector<f64>, leverages: &[f64]) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(tau.len());
    for (idx, (&t, &h)) in tau.iter().zip(leverages).enumerate() {
        if h >= 1.0 - 1e-10 {
            return Err(Error::Numeric(format!(
                "leverage h_{idx}{idx} = {h} is too close to 1 for pair {idx}; \
                 reduce the Q columns"
            )));
        }
        v[idx] = t / (1.0 - h).sqrt();
    }
    Ok(v)
}

/// Two-sided normal-quantile interval centered at the estimate.
pub fn confidence_interval(tau_hat: f64, s2: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!(
            "alpha must be in (0, 0.5), got {alpha}"
        )));
    }
    if s2 < 0.0 {
        return Err(Error::Validation(format!("s2 must be nonnegative, got {s2}")));
    }
    let z = standard_normal_quantile(1.0 - alpha / 2.0);
    let half = z * s2.sqrt();
    Ok((tau_hat - half, tau_hat + half))
}

/// Full estimation output.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub tau_hat: f64,
    pub pair_stats: Vec<PairStatistics>,
    pub s2: f64,
    pub alpha: f64,
    pub ci: (f64, f64),
    pub leverages: Vec<f64>,
    pub excluded_pairs: Vec<ExcludedPair>,
}

/// Options for [`estimate`].
#[derive(Debug, Clone, Default)]
pub struct EstimateOptions {
    pub alpha: Option<f64>,
    pub variance: VarianceSpec,
    pub zero_gap: ZeroGapPolicy,
}

/// Run the whole estimation pipeline: gap policy, pair ratios, point
/// estimate, variance, and confidence interval.
pub fn estimate(pd: &PairedData, options: &EstimateOptions) -> Result<EstimateReport> {
    let alpha = options.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!(
            "alpha must be in (0, 0.5), got {alpha}"
        )));
    }
    let (included, excluded_pairs) = apply_zero_gap_policy(pd, options.zero_gap)?;
    if included.pairs.is_empty() {
        return Err(Error::Estimation(
            "no pairs remain after the zero-gap policy".into(),
        ));
    }
    let pair_stats: Vec<PairStatistics> = included
        .pairs
        .iter()
        .map(pair_did_ratio)
        .collect::<Result<_>>()?;
    let tau_hat =
        pair_stats.iter().map(|s| s.tau_hat_i).sum::<f64>() / pair_stats.len() as f64;
    let q = build_q(&included, &options.variance)?;
    let (s2, leverages) = variance_s2(&pair_stats, &q)?;
    let ci = confidence_interval(tau_hat, s2, alpha)?;
    Ok(EstimateReport {
        tau_hat,
        pair_stats,
        s2,
        alpha,
        ci,
        leverages,
        excluded_pairs,
    })
}

/// Write matched pairs as CSV: pair_index, ids, dose changes, gap, outcome
/// changes, the within-pair distance when available, and one `xmean_<name>`
/// column per covariate. Ids are quoted; numbers use shortest round-trip
/// formatting.
pub fn write_paired_csv(
    pd: &PairedData,
    pair_distance: Option<&[f64]>,
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    if let Some(d) = pair_distance {
        if d.len() != pd.pairs.len() {
            return Err(Error::Validation(format!(
                "pair_distance has {} entries for {} pairs",
                d.len(),
                pd.pairs.len()
            )));
        }
    }
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_path(path.as_ref())?;
    let mut header = vec![
        "pair_index".to_string(),
        "id_hi".into(),
        "id_lo".into(),
        "dz_hi".into(),
        "dz_lo".into(),
        "gap".into(),
        "dy_hi".into(),
        "dy_lo".into(),
        "pair_distance".into(),
    ];
    header.extend(pd.covariate_names.iter().map(|n| format!("xmean_{n}")));
    writer.write_record(&header)?;
    let fmt = crate::panel::format_f64;
    for (i, p) in pd.pairs.iter().enumerate() {
        let mut record = vec![
            p.pair_index.to_string(),
            p.id_hi.clone(),
            p.id_lo.clone(),
            fmt(p.dz_hi),
            fmt(p.dz_lo),
            fmt(p.gap()),
            fmt(p.dy_hi),
            fmt(p.dy_lo),
            fmt(pair_distance.map_or(f64::NAN, |d| d[i])),
        ];
        record.extend(p.covariate_means.iter().map(|v| fmt(*v)));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load matched pairs from the CSV layout written by [`write_paired_csv`].
/// Columns prefixed `xmean_` become covariate means.
pub fn load_paired_csv(path: impl AsRef<std::path::Path>) -> Result<PairedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let pair_index_col = col("pair_index")?;
    let id_hi_col = col("id_hi")?;
    let id_lo_col = col("id_lo")?;
    let dz_hi_col = col("dz_hi")?;
    let dz_lo_col = col("dz_lo")?;
    let dy_hi_col = col("dy_hi")?;
    let dy_lo_col = col("dy_lo")?;
    let mean_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("xmean_").map(|n| (i, n.to_string())))
        .collect();
    let covariate_names: Vec<String> = mean_cols.iter().map(|(_, n)| n.clone()).collect();

    let mut pairs = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let cell = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                row,
                column: headers[i].clone(),
                message: "missing cell".into(),
            })
        };
        let num = |i: usize| -> Result<f64> {
            let raw = cell(i)?;
            raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: headers[i].clone(),
                message: format!("cannot parse \"{raw}\" as a number"),
            })
        };
        let index = cell(pair_index_col)?
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse {
                row,
                column: "pair_index".into(),
                message: "cannot parse as an integer".into(),
            })?;
        pairs.push(PairObservation {
            pair_index: index,
            id_hi: cell(id_hi_col)?.to_string(),
            id_lo: cell(id_lo_col)?.to_string(),
            dz_hi: num(dz_hi_col)?,
            dz_lo: num(dz_lo_col)?,
            dy_hi: num(dy_hi_col)?,
            dy_lo: num(dy_lo_col)?,
            covariate_means: mean_cols
                .iter()
                .map(|&(i, _)| num(i))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(PairedData {
        pairs,
        covariate_names,
    })
}

/// Exact enumeration threshold for the randomization test.
pub const EXACT_RANDOMIZATION_LIMIT: usize = 20;

/// Sign-flip randomization test of the sharp null that every within-pair
/// outcome contrast equals `tau0` times the dose gap.
///
/// The statistic is the sum of within-pair residual ratios. With I <= 20 all
/// 2^I sign patterns are enumerated; otherwise `draws` Monte Carlo patterns
/// are used (with the add-one p-value that preserves validity).
pub fn randomization_test(
    pd: &PairedData,
    tau0: f64,
    two_sided: bool,
    draws: u64,
    seed: u64,
) -> Result<f64> {
    if pd.pairs.is_empty() {
        return Err(Error::Estimation("randomization test needs at least one pair".into()));
    }
    let mut contributions = Vec::with_capacity(pd.pairs.len());
    for p in &pd.pairs {
        let stats = pair_did_ratio(p)?;
        let residual = stats.num - tau0 * stats.den;
        contributions.push(residual / stats.den);
    }
    let observed: f64 = contributions.iter().sum();
    let i = contributions.len();

    let beats = |value: f64| -> bool {
        if two_sided {
            value.abs() >= observed.abs()
        } else {
            value >= observed
        }
    };

    if i <= EXACT_RANDOMIZATION_LIMIT {
        let total = 1u64 << i;
        let mut count = 0u64;
        for mask in 0..total {
            let mut stat = 0.0;
            for (b, c) in contributions.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    stat -= c;
                } else {
                    stat += c;
                }
            }
            if beats(stat) {
                count += 1;
            }
        }
        Ok(count as f64 / total as f64)
    } else {
        if draws < 1000 {
            return Err(Error::Config(format!(
                "Monte Carlo randomization test needs at least 1000 draws, got {draws}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut count = 0u64;
        for _ in 0..draws {
            let mut stat = 0.0;
            for c in &contributions {
                if rng.gen_bool(0.5) {
                    stat -= c;
                } else {
                    stat += c;
                }
            }
            if beats(stat) {
                count += 1;
            }
        }
        Ok((1 + count) as f64 / (1 + draws) as f64)
    }
}

/// Full potential-outcome ledger for one pair: the dose contrasts and, for
/// each of the two units, the outcome change under either trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialPair {
    pub dz_hi: f64,
    pub dz_lo: f64,
    /// Outcome change of unit j (j = 0, 1) under the larger dose change.
    pub dy_hi: [f64; 2],
    /// Outcome change of unit j under the smaller dose change.
    pub dy_lo: [f64; 2],
}

impl PotentialPair {
    pub fn gap(&self) -> f64 {
        self.dz_hi - self.dz_lo
    }

    /// Pair ratio when unit 0 receives the larger dose change.
    pub fn ratio_first_hi(&self) -> f64 {
        (self.dy_hi[0] - self.dy_lo[1]) / self.gap()
    }

    /// Pair ratio when unit 1 receives the larger dose change.
    pub fn ratio_second_hi(&self) -> f64 {
        (self.dy_hi[1] - self.dy_lo[0]) / self.gap()
    }
}

/// Potential-outcome tables exist only for oracles and simulation; observed
/// data never contains them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialOutcomeTable {
    pub pairs: Vec<PotentialPair>,
}

impl PotentialOutcomeTable {
    pub fn new(pairs: Vec<PotentialPair>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            // partial_cmp also rejects NaN doses.
            if p.dz_hi.partial_cmp(&p.dz_lo) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::Validation(format!(
                    "potential pair {i} must have dz_hi > dz_lo, got ({}, {})",
                    p.dz_hi, p.dz_lo
                )));
            }
        }
        Ok(PotentialOutcomeTable { pairs })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Finite-population estimand: the mean over pairs and units of the
    /// unit-level ratio of potential outcome contrasts to the dose contrast.
    pub fn tau(&self) -> f64 {
        let mut sum = 0.0;
        for p in &self.pairs {
            for j in 0..2 {
                sum += (p.dy_hi[j] - p.dy_lo[j]) / p.gap();
            }
        }
        sum / (2 * self.pairs.len()) as f64
    }

    /// Estimate produced by one assignment; bit b of `mask` set means unit 1
    /// of pair b receives the larger dose change.
    pub fn tau_hat_under_assignment(&self, mask: u64) -> f64 {
        let mut sum = 0.0;
        for (b, p) in self.pairs.iter().enumerate() {
            sum += if mask & (1 << b) == 0 {
                p.ratio_first_hi()
            } else {
                p.ratio_second_hi()
            };
        }
        sum / self.pairs.len() as f64
    }
}

/// Exhaustively average the estimator over all 2^I equiprobable assignments
/// and return it together with the estimand; the two agree for any table.
pub fn oracle_expectation(pot: &PotentialOutcomeTable) -> Result<(f64, f64)> {
    let i = pot.n_pairs();
    if i == 0 {
        return Err(Error::Validation("empty potential-outcome table".into()));
    }
    if i > 16 {
        return Err(Error::Validation(format!(
            "exhaustive assignment enumeration refused for I = {i} > 16"
        )));
    }
    let total = 1u64 << i;
    let mut sum = 0.0;
    for mask in 0..total {
        sum += pot.tau_hat_under_assignment(mask);
    }
    Ok((pot.tau(), sum / total as f64))
}

/// Finite-sample quantities behind the regularity conditions: the two
/// potential values of each pair ratio, their spread, the extreme-pair
/// ratio, fourth-moment averages, and per-pair means/variances.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityDiagnostics {
    pub tau_first: Vec<f64>,
    pub tau_second: Vec<f64>,
    /// M_i: spread between the two potential pair ratios.
    pub spread: Vec<f64>,
    /// max_i M_i^2 / sum_i M_i^2 (0 when all spreads vanish).
    pub extreme_pair_ratio: f64,
    /// True when all spreads are zero and the ratio is reported by convention.
    pub degenerate_spreads: bool,
    pub fourth_moment_spread: f64,
    pub fourth_moment_tau_first: f64,
    pub fourth_moment_tau_second: f64,
    /// mu_i: assignment-mean of the pair ratio.
    pub mu: Vec<f64>,
    /// nu_i^2: assignment-variance of the pair ratio.
    pub nu2: Vec<f64>,
    pub mean_nu2: f64,
}

/// Compute the regularity diagnostics for a potential-outcome table.
pub fn regularity_diagnostics(pot: &PotentialOutcomeTable) -> Result<RegularityDiagnostics> {
    let i = pot.n_pairs();
    if i < 2 {
        return Err(Error::Validation(format!(
            "regularity diagnostics need at least 2 pairs, got {i}"
        )));
    }
    let tau_first: Vec<f64> = pot.pairs.iter().map(|p| p.ratio_first_hi()).collect();
    let tau_second: Vec<f64> = pot.pairs.iter().map(|p| p.ratio_second_hi()).collect();
    let spread: Vec<f64> = tau_first
        .iter()
        .zip(&tau_second)
        .map(|(a, b)| a.max(*b) - a.min(*b))
        .collect();
    let sum_sq: f64 = spread.iter().map(|m| m * m).sum();
    let max_sq = spread.iter().map(|m| m * m).fold(0.0_f64, f64::max);
    let degenerate = sum_sq == 0.0;
    let extreme_pair_ratio = if degenerate { 0.0 } else { max_sq / sum_sq };
    let fourth = |v: &[f64]| v.iter().map(|x| x.powi(4)).sum::<f64>() / i as f64;
    let mu: Vec<f64> = tau_first
        .iter()
        .zip(&tau_second)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let nu2: Vec<f64> = tau_first
        .iter()
        .zip(&tau_second)
        .map(|(a, b)| (a - b) * (a - b) / 4.0)
        .collect();
    let mean_nu2 = nu2.iter().sum::<f64>() / i as f64;
    Ok(RegularityDiagnostics {
        fourth_moment_spread: fourth(&spread),
        fourth_moment_tau_first: fourth(&tau_first),
        fourth_moment_tau_second: fourth(&tau_second),
        tau_first,
        tau_second,
        spread,
        extreme_pair_ratio,
        degenerate_spreads: degenerate,
        mu,
        nu2,
        mean_nu2,
    })
}
