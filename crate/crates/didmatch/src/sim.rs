//! Simulation harness: a two-period data-generating process with a latent
//! confounder, two comparator estimators, a bias study over an effect-size
//! grid, and coverage experiments for the confidence interval.
//!
//! Reproducibility contract: the random stream of replication r is derived
//! from (seed, r) with a counter-based generator, so results do not depend on
//! execution order or worker count, and replications parallelize freely.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{build_distance_matrix, DistanceSpec};
use crate::error::{Error, Result};
use crate::estimator::{
    apply_zero_gap_policy, build_q, confidence_interval, estimate_tau, pair_did_ratio,
    variance_s2, PairedData, PotentialOutcomeTable, PotentialPair, VarianceSpec, ZeroGapPolicy,
    DEFAULT_ZERO_GAP_TOL,
};
use crate::matching::{solve_optimal, to_matched_sample, MatchedSample};
use crate::panel::{PanelDataset, PanelUnit};

/// Coefficients of one period's covariate-response surface
/// f(x) = a'x + c13 x1 x3 + c23 x2 x3 + cs sin(x1) + cc cos(x2) + ce exp(x3/3).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PeriodCoefficients {
    pub linear: [f64; 3],
    pub interaction_13: f64,
    pub interaction_23: f64,
    pub sin_x1: f64,
    pub cos_x2: f64,
    pub exp_x3: f64,
}

impl PeriodCoefficients {
    pub fn uniform(linear: f64, nonlinear: f64) -> Self {
        PeriodCoefficients {
            linear: [linear; 3],
            interaction_13: nonlinear,
            interaction_23: nonlinear,
            sin_x1: nonlinear,
            cos_x2: nonlinear,
            exp_x3: nonlinear,
        }
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        self.linear[0] * x[0]
            + self.linear[1] * x[1]
            + self.linear[2] * x[2]
            + self.interaction_13 * x[0] * x[2]
            + self.interaction_23 * x[1] * x[2]
            + self.sin_x1 * x[0].sin()
            + self.cos_x2 * x[1].cos()
            + self.exp_x3 * (x[2] / 3.0).exp()
    }
}

/// Period-0 and period-1 response surfaces. Period-varying coefficients make
/// the covariates confound the *changes*, which is what the matching design
/// has to remove.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FunctionPair {
    pub t0: PeriodCoefficients,
    pub t1: PeriodCoefficients,
}

impl Default for FunctionPair {
    fn default() -> Self {
        FunctionPair {
            t0: PeriodCoefficients::uniform(0.5, 0.5),
            t1: PeriodCoefficients::uniform(0.8, 0.8),
        }
    }
}

/// Full configuration of the data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_units: usize,
    pub beta: f64,
    pub seed: u64,
    pub replications: usize,
    /// Loading of the latent confounder into the dose at both periods.
    pub dose_confounder_loading: f64,
    /// Loading of the latent confounder into the outcome at both periods.
    pub outcome_confounder_loading: f64,
    pub noise_sd_dose: f64,
    pub noise_sd_outcome: f64,
    pub f_dose: FunctionPair,
    pub f_outcome: FunctionPair,
    /// Extra confounder loading at t = 1 only, (dose, outcome). Nonzero
    /// values deliberately violate the time-invariance assumption and must
    /// produce detectable bias.
    pub confounder_drift: (f64, f64),
    /// Standard deviation of unit-level slope heterogeneity around beta.
    pub effect_heterogeneity_sd: f64,
    /// Distance used for the matching step of each replication.
    pub distance: DistanceSpec,
    /// Regress outcome changes on the dose change alone instead of including
    /// the covariates in the parametric comparator.
    pub parametric_dose_only: bool,
}

impl SimulationConfig {
    pub fn new(beta: f64, seed: u64) -> Self {
        SimulationConfig {
            n_units: 2000,
            beta,
            seed,
            replications: 200,
            dose_confounder_loading: 0.3,
            outcome_confounder_loading: 0.2,
            noise_sd_dose: 1.0,
            noise_sd_outcome: 1.0,
            f_dose: FunctionPair::default(),
            f_outcome: FunctionPair::default(),
            confounder_drift: (0.0, 0.0),
            effect_heterogeneity_sd: 0.0,
            distance: DistanceSpec::default(),
            parametric_dose_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units < 4 || self.n_units % 2 != 0 {
            return Err(Error::Config(format!(
                "n_units must be even and >= 4, got {}",
                self.n_units
            )));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.noise_sd_dose < 0.0 || self.noise_sd_outcome < 0.0 {
            return Err(Error::Config("noise standard deviations must be >= 0".into()));
        }
        if self.effect_heterogeneity_sd < 0.0 {
            return Err(Error::Config("effect heterogeneity sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Latent side of a generated unit: the confounder, the unit's dose-response
/// slope, and the dose-free part of its outcome change. The potential
/// outcome change at dose change d is `slope * d + dy_base`.
#[derive(Debug, Clone)]
pub struct SimulatedUnit {
    pub u: f64,
    pub slope: f64,
    pub dy_base: f64,
}

/// A generated panel together with its latent ledger (index-aligned).
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub dataset: PanelDataset,
    pub latent: Vec<SimulatedUnit>,
}

impl SimulatedPanel {
    /// Potential outcome change of unit `idx` under dose change `dz`.
    pub fn potential_delta_y(&self, idx: usize, dz: f64) -> f64 {
        let l = &self.latent[idx];
        l.slope * dz + l.dy_base
    }
}

/// Marsaglia polar sampler for standard normal deviates.
#[derive(Debug, Default)]
pub struct PolarGaussian {
    spare: Option<f64>,
}

impl PolarGaussian {
    pub fn new() -> Self {
        PolarGaussian { spare: None }
    }

    pub fn sample(&mut self, rng: &mut impl Rng) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let a: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let b: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let s = a * a + b * b;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(b * factor);
                return a * factor;
            }
        }
    }
}

/// The random stream for replication `rep` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Generate one replication's panel. Deterministic given (seed, rep_index).
pub fn generate_panel(cfg: &SimulationConfig, rep_index: usize) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let mut rng = replication_rng(cfg.seed, rep_index as u64);
    let mut gauss = PolarGaussian::new();
    let n = cfg.n_units;
    let (drift_z, drift_y) = cfg.confounder_drift;
    let load_z0 = cfg.dose_confounder_loading;
    let load_z1 = cfg.dose_confounder_loading + drift_z;
    let load_y0 = cfg.outcome_confounder_loading;
    let load_y1 = cfg.outcome_confounder_loading + drift_y;

    let mut units = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let x = [
            gauss.sample(&mut rng),
            gauss.sample(&mut rng),
            gauss.sample(&mut rng),
        ];
        let u = gauss.sample(&mut rng);
        let eps_z0 = gauss.sample(&mut rng);
        let eps_z1 = gauss.sample(&mut rng);
        let eps_y0 = gauss.sample(&mut rng);
        let eps_y1 = gauss.sample(&mut rng);
        let slope = if cfg.effect_heterogeneity_sd > 0.0 {
            cfg.beta + cfg.effect_heterogeneity_sd * gauss.sample(&mut rng)
        } else {
            cfg.beta
        };

        let z0 = cfg.f_dose.t0.eval(&x) + load_z0 * u + cfg.noise_sd_dose * eps_z0;
        let z1 = cfg.f_dose.t1.eval(&x) + load_z1 * u + cfg.noise_sd_dose * eps_z1;
        let y_at = |t1: bool, z: f64| {
            if t1 {
                slope * z + cfg.f_outcome.t1.eval(&x) + load_y1 * u + cfg.noise_sd_outcome * eps_y1
            } else {
                slope * z + cfg.f_outcome.t0.eval(&x) + load_y0 * u + cfg.noise_sd_outcome * eps_y0
            }
        };
        let y0 = y_at(false, z0);
        let y1 = y_at(true, z1);

        // Dose-free part of the outcome change; the potential outcome change
        // at dose change d is slope * d + dy_base.
        let dy_base = (cfg.f_outcome.t1.eval(&x) - cfg.f_outcome.t0.eval(&x))
            + (load_y1 - load_y0) * u
            + cfg.noise_sd_outcome * (eps_y1 - eps_y0);

        let unit = PanelUnit::new(format!("u{i}"), x.to_vec(), z0, z1, y0, y1)?;
        debug_assert!(
            (unit.delta_y() - (slope * unit.delta_z() + dy_base)).abs()
                <= 1e-9 * (1.0 + unit.delta_y().abs()),
            "observed change must equal the potential change at the realized dose"
        );
        units.push(unit);
        latent.push(SimulatedUnit { u, slope, dy_base });
    }

    let dataset = PanelDataset::new(units, vec!["x1".into(), "x2".into(), "x3".into()])?;
    Ok(SimulatedPanel { dataset, latent })
}

/// Dichotomized comparator: split at the sample median of the dose change
/// (ties to the low group) and difference the group means of outcome changes.
pub fn dichotomized_did(ds: &PanelDataset) -> Result<f64> {
    let n = ds.len();
    if n < 4 {
        return Err(Error::Validation(format!(
            "dichotomized estimator needs at least 4 units, got {n}"
        )));
    }
    let mut dz: Vec<f64> = ds.units.iter().map(|u| u.delta_z()).collect();
    dz.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        dz[n / 2]
    } else {
        0.5 * (dz[n / 2 - 1] + dz[n / 2])
    };
    let (mut hi_sum, mut hi_n, mut lo_sum, mut lo_n) = (0.0, 0usize, 0.0, 0usize);
    for u in &ds.units {
        if u.delta_z() > median {
            hi_sum += u.delta_y();
            hi_n += 1;
        } else {
            lo_sum += u.delta_y();
            lo_n += 1;
        }
    }
    if hi_n == 0 || lo_n == 0 {
        return Err(Error::Estimation(
            "dichotomization produced an empty group (dose changes may all be equal)".into(),
        ));
    }
    Ok(hi_sum / hi_n as f64 - lo_sum / lo_n as f64)
}

/// Parametric comparator: least squares of the outcome change on an
/// intercept, the dose change, and (unless `dose_only`) the covariates;
/// returns the dose-change coefficient.
pub fn parametric_did(ds: &PanelDataset, dose_only: bool) -> Result<f64> {
    let n = ds.len();
    if n <= 5 {
        return Err(Error::Validation(format!(
            "parametric estimator needs more than 5 units, got {n}"
        )));
    }
    let k = if dose_only { 0 } else { ds.n_covariates() };
    let p = 2 + k;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (r, u) in ds.units.iter().enumerate() {
        x[(r, 0)] = 1.0;
        x[(r, 1)] = u.delta_z();
        for c in 0..k {
            x[(r, 2 + c)] = u.x[c];
        }
        y[r] = u.delta_y();
    }
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.try_inverse().ok_or_else(|| {
        Error::Numeric("singular design matrix in the parametric comparator".into())
    })?;
    // Exact collinearity can slip past LU on some inputs; reject meaningless
    // inverses the same way the covariance path does.
    let xtx2 = x.transpose() * &x;
    let residual = &xtx2 * &xtx_inv - DMatrix::<f64>::identity(p, p);
    if residual.iter().any(|v| !v.is_finite() || v.abs() > 1e-4) {
        return Err(Error::Numeric(
            "singular design matrix in the parametric comparator".into(),
        ));
    }
    let beta = xtx_inv * x.transpose() * y;
    Ok(beta[1])
}

/// Drop pairs whose dose gap is below `tol` so the ratio and the potential
/// table stay well-defined; returns the kept sample and the drop count.
pub fn retain_positive_gaps(ms: &MatchedSample, tol: f64) -> (MatchedSample, usize) {
    let kept: Vec<_> = ms.pairs.iter().filter(|p| p.gap >= tol).cloned().collect();
    let dropped = ms.pairs.len() - kept.len();
    (
        MatchedSample {
            pairs: kept,
            covariate_names: ms.covariate_names.clone(),
        },
        dropped,
    )
}

/// The latent potential-outcome table of a matched sample. Unit 0 of each
/// table pair is the observed-hi unit, so the realized assignment is mask 0.
pub fn potential_table(
    panel: &SimulatedPanel,
    ms: &MatchedSample,
) -> Result<PotentialOutcomeTable> {
    let index: HashMap<&str, usize> = panel
        .dataset
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    let mut pairs = Vec::with_capacity(ms.pairs.len());
    for p in &ms.pairs {
        let hi = *index.get(p.unit_hi.id.as_str()).ok_or_else(|| {
            Error::Validation(format!("unit \"{}\" missing from panel", p.unit_hi.id))
        })?;
        let lo = *index.get(p.unit_lo.id.as_str()).ok_or_else(|| {
            Error::Validation(format!("unit \"{}\" missing from panel", p.unit_lo.id))
        })?;
        pairs.push(PotentialPair {
            dz_hi: p.delta_z_hi,
            dz_lo: p.delta_z_lo,
            dy_hi: [
                panel.potential_delta_y(hi, p.delta_z_hi),
                panel.potential_delta_y(lo, p.delta_z_hi),
            ],
            dy_lo: [
                panel.potential_delta_y(hi, p.delta_z_lo),
                panel.potential_delta_y(lo, p.delta_z_lo),
            ],
        });
    }
    PotentialOutcomeTable::new(pairs)
}

/// One bias-table cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasRow {
    pub beta: f64,
    pub estimator: String,
    pub mean_bias: f64,
    pub mc_se: f64,
}

/// Mean bias and Monte Carlo standard error per (beta, estimator) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTable {
    pub rows: Vec<BiasRow>,
}

impl BiasTable {
    /// Deterministic CSV rendering (shortest round-trip doubles).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("beta,estimator,mean_bias,mc_se\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.beta, r.estimator, r.mean_bias, r.mc_se
            ));
        }
        out
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-replication estimates produced by the matched design and comparators.
struct ReplicationEstimates {
    did_ratio_bias: f64,
    parametric_bias: f64,
    dichotomized_bias: f64,
    tau_latent: f64,
    ci: (f64, f64),
}

fn estimate_on_panel(
    cfg: &SimulationConfig,
    panel: &SimulatedPanel,
    matching: &crate::matching::Matching,
    alpha: f64,
    vspec: &VarianceSpec,
) -> Result<ReplicationEstimates> {
    let ms = to_matched_sample(matching, &panel.dataset)?;
    let (ms, _dropped) = retain_positive_gaps(&ms, DEFAULT_ZERO_GAP_TOL);
    if ms.pairs.is_empty() {
        return Err(Error::Estimation("all pairs had zero dose gaps".into()));
    }

    let table = potential_table(panel, &ms)?;
    let tau_latent = table.tau();

    let pd = PairedData::from_matched_sample(&ms);
    let (pd, _) = apply_zero_gap_policy(&pd, ZeroGapPolicy::Error)?;
    let tau_hat = estimate_tau(&pd)?;
    let stats = pd
        .pairs
        .iter()
        .map(pair_did_ratio)
        .collect::<Result<Vec<_>>>()?;
    let q = build_q(&pd, vspec)?;
    let (s2, _) = variance_s2(&stats, &q)?;
    let ci = confidence_interval(tau_hat, s2, alpha)?;

    let dichotomized = dichotomized_did(&panel.dataset)?;
    let parametric = parametric_did(&panel.dataset, cfg.parametric_dose_only)?;

    Ok(ReplicationEstimates {
        did_ratio_bias: tau_hat - tau_latent,
        parametric_bias: parametric - cfg.beta,
        dichotomized_bias: dichotomized - cfg.beta,
        tau_latent,
        ci,
    })
}

fn run_replication(
    cfg: &SimulationConfig,
    rep: usize,
    alpha: f64,
    vspec: &VarianceSpec,
) -> Result<ReplicationEstimates> {
    let panel = generate_panel(cfg, rep)?;
    let dm = build_distance_matrix(&panel.dataset, &cfg.distance)?;
    let matching = solve_optimal(&dm)?;
    estimate_on_panel(cfg, &panel, &matching, alpha, vspec)
}

/// Bias study across an effect-size grid. The ratio estimator is compared
/// with the latent finite-population estimand of each replication's matched
/// sample; the comparators with the generating slope.
///
/// Replications share random streams across the grid (common random
/// numbers), and because covariates and dose changes do not depend on the
/// effect size, each replication's matching is solved once and reused for
/// every grid cell.
pub fn run_bias_study(cfg: &SimulationConfig, beta_grid: &[f64]) -> Result<BiasTable> {
    cfg.validate()?;
    if beta_grid.is_empty() {
        return Err(Error::Config("beta grid must not be empty".into()));
    }
    let vspec = VarianceSpec::default();
    // per_rep[rep][cell]
    let per_rep: Vec<Vec<ReplicationEstimates>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let base_cfg = SimulationConfig {
                beta: beta_grid[0],
                ..cfg.clone()
            };
            let base_panel = generate_panel(&base_cfg, rep)?;
            let dm = build_distance_matrix(&base_panel.dataset, &cfg.distance)?;
            let matching = solve_optimal(&dm)?;
            beta_grid
                .iter()
                .map(|&beta| {
                    let cell_cfg = SimulationConfig {
                        beta,
                        ..cfg.clone()
                    };
                    let panel = if beta == beta_grid[0] {
                        base_panel.clone()
                    } else {
                        let p = generate_panel(&cell_cfg, rep)?;
                        debug_assert!(p
                            .dataset
                            .units
                            .iter()
                            .zip(&base_panel.dataset.units)
                            .all(|(a, b)| a.x == b.x && a.z0 == b.z0 && a.z1 == b.z1));
                        p
                    };
                    estimate_on_panel(&cell_cfg, &panel, &matching, 0.05, &vspec)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(beta_grid.len() * 3);
    for (cell, &beta) in beta_grid.iter().enumerate() {
        let dich: Vec<f64> = per_rep.iter().map(|r| r[cell].dichotomized_bias).collect();
        let par: Vec<f64> = per_rep.iter().map(|r| r[cell].parametric_bias).collect();
        let ratio: Vec<f64> = per_rep.iter().map(|r| r[cell].did_ratio_bias).collect();
        for (name, values) in [
            ("dichotomized_did", dich),
            ("parametric_did", par),
            ("did_ratio", ratio),
        ] {
            let (mean_bias, mc_se) = mean_and_se(&values);
            rows.push(BiasRow {
                beta,
                estimator: name.into(),
                mean_bias,
                mc_se,
            });
        }
    }
    Ok(BiasTable { rows })
}

/// Result of a coverage experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub alpha: f64,
    pub n_units: usize,
    pub replications: usize,
    pub covered: usize,
    pub coverage: f64,
    pub mean_ci_width: f64,
}

/// Fraction of replications whose interval contains the latent
/// finite-population estimand of that replication's matched sample.
pub fn coverage_study(
    cfg: &SimulationConfig,
    alpha: f64,
    vspec: &VarianceSpec,
) -> Result<CoverageSummary> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!(
            "alpha must be in (0, 0.5), got {alpha}"
        )));
    }
    if cfg.replications < 500 {
        return Err(Error::Config(format!(
            "coverage study needs at least 500 replications, got {}",
            cfg.replications
        )));
    }
    let estimates: Vec<ReplicationEstimates> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep, alpha, vspec))
        .collect::<Result<Vec<_>>>()?;
    let covered = estimates
        .iter()
        .filter(|e| e.ci.0 <= e.tau_latent && e.tau_latent <= e.ci.1)
        .count();
    let mean_ci_width =
        estimates.iter().map(|e| e.ci.1 - e.ci.0).sum::<f64>() / estimates.len() as f64;
    Ok(CoverageSummary {
        alpha,
        n_units: cfg.n_units,
        replications: cfg.replications,
        covered,
        coverage: covered as f64 / cfg.replications as f64,
        mean_ci_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(beta: f64) -> SimulationConfig {
        SimulationConfig {
            n_units: 60,
            replications: 3,
            ..SimulationConfig::new(beta, 99)
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimulationConfig::new(1.0, 1);
        cfg.n_units = 5;
        assert!(cfg.validate().is_err());
        cfg.n_units = 2;
        assert!(cfg.validate().is_err());
        cfg.n_units = 4;
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg(2.0);
        let a = generate_panel(&cfg, 7).unwrap();
        let b = generate_panel(&cfg, 7).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_panel(&cfg, 8).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn observed_changes_are_consistent_with_potential_outcomes() {
        let cfg = small_cfg(1.5);
        let panel = generate_panel(&cfg, 0).unwrap();
        for (i, u) in panel.dataset.units.iter().enumerate() {
            let potential = panel.potential_delta_y(i, u.delta_z());
            assert!(
                (u.delta_y() - potential).abs() <= 1e-9 * (1.0 + u.delta_y().abs()),
                "unit {i}: observed {} vs potential {potential}",
                u.delta_y()
            );
        }
    }

    #[test]
    fn null_effect_gives_zero_latent_tau() {
        let cfg = small_cfg(0.0);
        let panel = generate_panel(&cfg, 1).unwrap();
        let dm = build_distance_matrix(&panel.dataset, &cfg.distance).unwrap();
        let m = solve_optimal(&dm).unwrap();
        let ms = to_matched_sample(&m, &panel.dataset).unwrap();
        let (ms, _) = retain_positive_gaps(&ms, DEFAULT_ZERO_GAP_TOL);
        let table = potential_table(&panel, &ms).unwrap();
        assert!(table.tau().abs() < 1e-12);
    }

    #[test]
    fn covariate_sample_means_are_near_zero() {
        let cfg = SimulationConfig {
            n_units: 100_000,
            ..SimulationConfig::new(1.0, 12345)
        };
        let panel = generate_panel(&cfg, 0).unwrap();
        for c in 0..3 {
            let mean: f64 = panel.dataset.units.iter().map(|u| u.x[c]).sum::<f64>()
                / panel.dataset.len() as f64;
            assert!(mean.abs() < 0.02, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn polar_gaussian_moments() {
        let mut rng = replication_rng(7, 0);
        let mut g = PolarGaussian::new();
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| g.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        let skew = draws.iter().map(|d| (d - mean).powi(3)).sum::<f64>()
            / (n as f64 * var.powf(1.5));
        let kurt =
            draws.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / (n as f64 * var * var);
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
        assert!(skew.abs() < 0.03);
        assert!((kurt - 3.0).abs() < 0.08);
    }

    #[test]
    fn dichotomized_clean_split() {
        let units = [(0.0, 1.0), (0.0, 1.0), (1.0, 3.0), (1.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &(dz, dy))| {
                PanelUnit::new(format!("u{i}"), vec![], 0.0, dz, 0.0, dy).unwrap()
            })
            .collect();
        let ds = PanelDataset::new(units, vec![]).unwrap();
        assert_eq!(dichotomized_did(&ds).unwrap(), 2.0);
    }

    #[test]
    fn dichotomized_all_equal_errors() {
        let units = (0..4)
            .map(|i| PanelUnit::new(format!("u{i}"), vec![], 0.0, 1.0, 0.0, 1.0).unwrap())
            .collect();
        let ds = PanelDataset::new(units, vec![]).unwrap();
        assert!(matches!(dichotomized_did(&ds), Err(Error::Estimation(_))));
    }

    #[test]
    fn dichotomized_matches_group_means_oracle() {
        let cfg = small_cfg(1.0);
        let panel = generate_panel(&cfg, 3).unwrap();
        let est = dichotomized_did(&panel.dataset).unwrap();

        let mut dz: Vec<f64> = panel.dataset.units.iter().map(|u| u.delta_z()).collect();
        dz.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (dz[dz.len() / 2 - 1] + dz[dz.len() / 2]);
        let hi: Vec<f64> = panel
            .dataset
            .units
            .iter()
            .filter(|u| u.delta_z() > median)
            .map(|u| u.delta_y())
            .collect();
        let lo: Vec<f64> = panel
            .dataset
            .units
            .iter()
            .filter(|u| u.delta_z() <= median)
            .map(|u| u.delta_y())
            .collect();
        let oracle =
            hi.iter().sum::<f64>() / hi.len() as f64 - lo.iter().sum::<f64>() / lo.len() as f64;
        assert!((est - oracle).abs() < 1e-12);
    }

    #[test]
    fn parametric_recovers_exact_linear_effect() {
        // dy = 2 dz exactly, no noise: the coefficient is exact.
        let units = (0..10)
            .map(|i| {
                let dz = i as f64 * 0.5 - 2.0;
                PanelUnit::new(
                    format!("u{i}"),
                    vec![i as f64, (i * i) as f64 % 7.0, -(i as f64)],
                    0.0,
                    dz,
                    0.0,
                    2.0 * dz,
                )
                .unwrap()
            })
            .collect();
        let ds =
            PanelDataset::new(units, vec!["x1".into(), "x2".into(), "x3".into()]).unwrap();
        let coef = parametric_did(&ds, true).unwrap();
        assert!((coef - 2.0).abs() < 1e-10);
    }

    #[test]
    fn parametric_constant_dose_is_singular() {
        let units = (0..8)
            .map(|i| {
                PanelUnit::new(format!("u{i}"), vec![i as f64], 0.0, 1.0, 0.0, i as f64).unwrap()
            })
            .collect();
        let ds = PanelDataset::new(units, vec!["x1".into()]).unwrap();
        assert!(matches!(parametric_did(&ds, false), Err(Error::Numeric(_))));
    }

    #[test]
    fn parametric_matches_normal_equations_oracle() {
        let cfg = small_cfg(2.0);
        let panel = generate_panel(&cfg, 5).unwrap();
        let coef = parametric_did(&panel.dataset, false).unwrap();

        // Test-side solve of the normal equations by Gaussian elimination.
        let ds = &panel.dataset;
        let n = ds.len();
        let p = 5;
        let mut xtx = vec![vec![0.0; p]; p];
        let mut xty = vec![0.0; p];
        let row = |u: &PanelUnit| vec![1.0, u.delta_z(), u.x[0], u.x[1], u.x[2]];
        for u in &ds.units {
            let r = row(u);
            for a in 0..p {
                xty[a] += r[a] * u.delta_y();
                for b in 0..p {
                    xtx[a][b] += r[a] * r[b];
                }
            }
        }
        let _ = n;
        // Gaussian elimination with partial pivoting.
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&r1, &r2| xtx[r1][col].abs().partial_cmp(&xtx[r2][col].abs()).unwrap())
                .unwrap();
            xtx.swap(col, piv);
            xty.swap(col, piv);
            let d = xtx[col][col];
            for j in 0..p {
                xtx[col][j] /= d;
            }
            xty[col] /= d;
            for r in 0..p {
                if r != col {
                    let f = xtx[r][col];
                    for j in 0..p {
                        xtx[r][j] -= f * xtx[col][j];
                    }
                    xty[r] -= f * xty[col];
                }
            }
        }
        assert!((coef - xty[1]).abs() < 1e-8);
    }

    #[test]
    fn unconfounded_null_dgp_has_unbiased_estimators() {
        // Static covariate effects, no confounder, no treatment effect: all
        // three estimators must center on zero.
        let mut cfg = SimulationConfig {
            n_units: 400,
            replications: 30,
            dose_confounder_loading: 0.0,
            outcome_confounder_loading: 0.0,
            ..SimulationConfig::new(0.0, 314)
        };
        let flat = PeriodCoefficients::uniform(0.5, 0.0);
        cfg.f_dose = FunctionPair { t0: flat, t1: flat };
        cfg.f_outcome = FunctionPair { t0: flat, t1: flat };
        let table = run_bias_study(&cfg, &[0.0]).unwrap();
        assert_eq!(table.rows.len(), 3);
        for row in &table.rows {
            assert!(
                row.mean_bias.abs() <= 3.0 * row.mc_se,
                "{} bias {} exceeds 3 x {}",
                row.estimator,
                row.mean_bias,
                row.mc_se
            );
        }
    }

    #[test]
    fn time_varying_confounding_biases_the_ratio_estimator() {
        let base = SimulationConfig {
            n_units: 300,
            replications: 8,
            ..SimulationConfig::new(2.0, 555)
        };
        let violated = SimulationConfig {
            confounder_drift: (1.0, 1.0),
            ..base.clone()
        };
        let clean = run_bias_study(&base, &[2.0]).unwrap();
        let broken = run_bias_study(&violated, &[2.0]).unwrap();
        let ratio_row = |t: &BiasTable| {
            t.rows
                .iter()
                .find(|r| r.estimator == "did_ratio")
                .unwrap()
                .clone()
        };
        let clean_row = ratio_row(&clean);
        let broken_row = ratio_row(&broken);
        assert!(
            broken_row.mean_bias > clean_row.mean_bias + 3.0 * broken_row.mc_se,
            "violation must produce detectable positive bias: clean {} vs broken {} (se {})",
            clean_row.mean_bias,
            broken_row.mean_bias,
            broken_row.mc_se
        );
    }

    #[test]
    fn bias_table_shape_and_determinism() {
        let cfg = SimulationConfig {
            n_units: 80,
            replications: 4,
            ..SimulationConfig::new(1.5, 2024)
        };
        let grid = [1.5, 2.0];
        let t1 = run_bias_study(&cfg, &grid).unwrap();
        assert_eq!(t1.rows.len(), 6);

        // Same bytes from single-threaded and multi-threaded pools.
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let csv1 = pool1.install(|| run_bias_study(&cfg, &grid).unwrap().to_csv_string());
        let csv4 = pool4.install(|| run_bias_study(&cfg, &grid).unwrap().to_csv_string());
        assert_eq!(csv1, csv4);
        assert_eq!(csv1, t1.to_csv_string());
    }

    #[test]
    fn coverage_validates_inputs() {
        let cfg = SimulationConfig {
            replications: 600,
            ..small_cfg(1.0)
        };
        assert!(coverage_study(&cfg, 0.5, &VarianceSpec::default()).is_err());
        let too_few = SimulationConfig {
            replications: 10,
            ..cfg
        };
        assert!(coverage_study(&too_few, 0.05, &VarianceSpec::default()).is_err());
    }
}
