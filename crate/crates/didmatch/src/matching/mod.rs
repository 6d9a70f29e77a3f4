//! Optimal non-bipartite matching: minimum-total-cost perfect matching over
//! the complete graph of units, with a brute-force oracle, odd-size handling
//! via a zero-cost phantom node, and post-matching pair construction.

mod blossom;

use serde::Serialize;

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelUnit};

/// Costs are scaled by this factor and rounded to integers for the solver
/// core; reported totals always use the original real costs.
pub const QUANTIZATION_SCALE: f64 = 1e6;

/// Practical size guard for the exact solver; beyond this the flagged greedy
/// fallback is the intended tool.
pub const EXACT_SOLVER_SOFT_LIMIT: usize = 5000;

/// How a matching's objective value was certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Produced by the exact blossom solver.
    Exact,
    /// Produced by exhaustive enumeration.
    Oracle,
    /// Produced by the greedy fallback; not guaranteed optimal.
    Greedy,
}

/// A perfect matching over unit indices.
#[derive(Debug, Clone, Serialize)]
pub struct Matching {
    /// Index pairs with `a < b`, sorted by first element.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of real (unquantized) costs over the pairs.
    pub total_cost: f64,
    pub objective_certificate: Certificate,
}

/// Sum of matrix costs over a pair list, always in list order so equal pair
/// sets produce bit-identical totals.
pub fn matching_total(dm: &DistanceMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(a, b)| dm.cost(a, b)).sum()
}

fn normalize_pairs(mut pairs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    for p in &mut pairs {
        if p.0 > p.1 {
            *p = (p.1, p.0);
        }
    }
    pairs.sort_unstable();
    pairs
}

fn quantize(dm: &DistanceMatrix) -> Result<Vec<(usize, usize, i64)>> {
    let n = dm.n();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            let scaled = dm.cost(a, b) * QUANTIZATION_SCALE;
            if !scaled.is_finite() || scaled.abs() > 4.0e15 {
                return Err(Error::Numeric(format!(
                    "cost {} for pair ({a}, {b}) is out of range for integer quantization",
                    dm.cost(a, b)
                )));
            }
            edges.push((a, b, -(scaled.round() as i64)));
        }
    }
    Ok(edges)
}

/// Exact minimum-total-cost perfect matching.
///
/// Requires an even number of units; odd instances go through
/// [`handle_odd`] first.
pub fn solve_optimal(dm: &DistanceMatrix) -> Result<Matching> {
    let n = dm.n();
    if n < 2 {
        return Err(Error::Validation(format!(
            "matching needs at least 2 units, got {n}"
        )));
    }
    if n % 2 != 0 {
        return Err(Error::Validation(format!(
            "cannot perfectly match an odd number of units ({n}); use handle_odd to add a phantom"
        )));
    }
    // Maximum-weight max-cardinality matching on negated costs is the
    // minimum-cost perfect matching on a complete graph.
    let edges = quantize(dm)?;
    let mate = blossom::max_weight_matching(n, &edges, true);
    let mut pairs = Vec::with_capacity(n / 2);
    for v in 0..n {
        let m = mate[v];
        if m == blossom::SENTINEL {
            return Err(Error::Solver(format!(
                "solver left unit {v} unmatched on a complete even graph"
            )));
        }
        if v < m {
            pairs.push((v, m));
        }
    }
    let pairs = normalize_pairs(pairs);
    let total_cost = matching_total(dm, &pairs);
    Ok(Matching {
        pairs,
        total_cost,
        objective_certificate: Certificate::Exact,
    })
}

/// Visit every perfect matching of `n` units (n even). The lowest free index
/// is always paired first, so each matching is visited exactly once.
pub(crate) fn for_each_perfect_matching(n: usize, mut f: impl FnMut(&[(usize, usize)])) {
    assert!(n % 2 == 0);
    let mut used = vec![false; n];
    let mut current = Vec::with_capacity(n / 2);
    fn recurse(
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        f: &mut impl FnMut(&[(usize, usize)]),
    ) {
        let a = match used.iter().position(|&u| !u) {
            Some(a) => a,
            None => {
                f(current);
                return;
            }
        };
        used[a] = true;
        for b in (a + 1)..used.len() {
            if !used[b] {
                used[b] = true;
                current.push((a, b));
                recurse(used, current, f);
                current.pop();
                used[b] = false;
            }
        }
        used[a] = false;
    }
    recurse(&mut used, &mut current, &mut f);
}

/// Minimum-cost perfect matching by exhaustive enumeration of all (n-1)!!
/// pairings. Refuses n > 12.
pub fn brute_force_match(dm: &DistanceMatrix) -> Result<Matching> {
    let n = dm.n();
    if n < 2 || n % 2 != 0 {
        return Err(Error::Validation(format!(
            "brute-force matching needs an even n >= 2, got {n}"
        )));
    }
    if n > 12 {
        return Err(Error::Validation(format!(
            "brute-force enumeration refused for n = {n} > 12 ((n-1)!! matchings)"
        )));
    }
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for_each_perfect_matching(n, |pairs| {
        let total = matching_total(dm, pairs);
        if best.as_ref().is_none_or(|(t, _)| total < *t) {
            best = Some((total, pairs.to_vec()));
        }
    });
    let (_, pairs) = best.expect("at least one perfect matching exists");
    let pairs = normalize_pairs(pairs);
    let total_cost = matching_total(dm, &pairs);
    Ok(Matching {
        pairs,
        total_cost,
        objective_certificate: Certificate::Oracle,
    })
}

/// Greedy fallback: repeatedly take the cheapest edge between two free units.
/// Not optimal; certificate marks it as such.
pub fn greedy_match(dm: &DistanceMatrix) -> Result<Matching> {
    let n = dm.n();
    if n < 2 || n % 2 != 0 {
        return Err(Error::Validation(format!(
            "greedy matching needs an even n >= 2, got {n}"
        )));
    }
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .collect();
    edges.sort_by(|&(a1, b1), &(a2, b2)| {
        dm.cost(a1, b1)
            .partial_cmp(&dm.cost(a2, b2))
            .unwrap()
            .then(a1.cmp(&a2))
            .then(b1.cmp(&b2))
    });
    let mut used = vec![false; n];
    let mut pairs = Vec::with_capacity(n / 2);
    for (a, b) in edges {
        if !used[a] && !used[b] {
            used[a] = true;
            used[b] = true;
            pairs.push((a, b));
        }
    }
    let pairs = normalize_pairs(pairs);
    let total_cost = matching_total(dm, &pairs);
    Ok(Matching {
        pairs,
        total_cost,
        objective_certificate: Certificate::Greedy,
    })
}

/// Augment an odd instance with a phantom node at index `n` whose edges all
/// cost zero. The unit matched to the phantom is the globally optimal
/// exclusion.
pub fn handle_odd(dm: &DistanceMatrix) -> Result<(DistanceMatrix, usize)> {
    let n = dm.n();
    if n % 2 == 0 {
        return Err(Error::Validation(format!(
            "handle_odd expects an odd number of units, got {n}"
        )));
    }
    let augmented = DistanceMatrix::from_fn(n + 1, |a, b| {
        if a == n || b == n {
            0.0
        } else {
            dm.cost(a, b)
        }
    })?;
    Ok((augmented, n))
}

/// Solve regardless of parity. For odd inputs the phantom's partner is
/// dropped from the pair list and reported as the excluded unit.
pub fn solve_with_odd_handling(dm: &DistanceMatrix) -> Result<(Matching, Option<usize>)> {
    if dm.n() % 2 == 0 {
        return Ok((solve_optimal(dm)?, None));
    }
    let (augmented, phantom) = handle_odd(dm)?;
    let solved = solve_optimal(&augmented)?;
    let mut excluded = None;
    let mut pairs = Vec::with_capacity(solved.pairs.len() - 1);
    for &(a, b) in &solved.pairs {
        if b == phantom {
            excluded = Some(a);
        } else if a == phantom {
            excluded = Some(b);
        } else {
            pairs.push((a, b));
        }
    }
    let total_cost = matching_total(dm, &pairs);
    Ok((
        Matching {
            pairs,
            total_cost,
            objective_certificate: solved.objective_certificate,
        },
        excluded,
    ))
}

/// A matched pair ordered by dose change: `unit_hi` has the larger change.
#[derive(Debug, Clone, Serialize)]
pub struct MatchedPair {
    pub unit_hi: PanelUnit,
    pub unit_lo: PanelUnit,
    pub delta_z_hi: f64,
    pub delta_z_lo: f64,
    /// delta_z_hi - delta_z_lo, always >= 0.
    pub gap: f64,
    /// True when the two dose changes tie exactly; the hi/lo ordering then
    /// falls back to lexicographic id and downstream estimation decides
    /// whether to keep the pair.
    pub tied: bool,
}

/// A disjoint set of matched pairs plus the covariate layout.
#[derive(Debug, Clone, Serialize)]
pub struct MatchedSample {
    pub pairs: Vec<MatchedPair>,
    pub covariate_names: Vec<String>,
}

impl MatchedSample {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// Order each matched pair by dose change. Exact ties are flagged and broken
/// by lexicographic id (smaller id becomes `unit_hi`).
pub fn to_matched_sample(m: &Matching, ds: &PanelDataset) -> Result<MatchedSample> {
    let mut pairs = Vec::with_capacity(m.pairs.len());
    for &(a, b) in &m.pairs {
        if a >= ds.len() || b >= ds.len() {
            return Err(Error::Validation(format!(
                "matching references unit index {} outside the dataset",
                a.max(b)
            )));
        }
        let ua = &ds.units[a];
        let ub = &ds.units[b];
        let (dza, dzb) = (ua.delta_z(), ub.delta_z());
        let tied = dza == dzb;
        let (hi, lo) = if dza > dzb || (tied && ua.id <= ub.id) {
            (ua, ub)
        } else {
            (ub, ua)
        };
        pairs.push(MatchedPair {
            unit_hi: hi.clone(),
            unit_lo: lo.clone(),
            delta_z_hi: hi.delta_z(),
            delta_z_lo: lo.delta_z(),
            gap: hi.delta_z() - lo.delta_z(),
            tied,
        });
    }
    Ok(MatchedSample {
        pairs,
        covariate_names: ds.covariate_names.clone(),
    })
}

/// Per-covariate balance between the hi and lo groups.
#[derive(Debug, Clone, Serialize)]
pub struct CovariateBalance {
    pub name: String,
    pub mean_abs_within_pair_diff: f64,
    /// (mean_hi - mean_lo) / pooled sd; 0 by convention when the pooled sd is
    /// zero.
    pub standardized_mean_difference: f64,
}

/// Covariate balance and dose-gap summary for a matched sample.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub n_pairs: usize,
    pub covariates: Vec<CovariateBalance>,
    pub gap_min: f64,
    pub gap_median: f64,
    pub gap_mean: f64,
    pub tie_count: usize,
}

/// Balance diagnostics: within-pair covariate differences, standardized mean
/// differences between the hi and lo groups, and the gap distribution.
pub fn balance_report(ms: &MatchedSample) -> Result<BalanceReport> {
    let n = ms.n_pairs();
    if n == 0 {
        return Err(Error::Validation("balance report needs at least one pair".into()));
    }
    let k = ms.covariate_names.len();
    let nf = n as f64;

    let mut covariates = Vec::with_capacity(k);
    for c in 0..k {
        let hi: Vec<f64> = ms.pairs.iter().map(|p| p.unit_hi.x[c]).collect();
        let lo: Vec<f64> = ms.pairs.iter().map(|p| p.unit_lo.x[c]).collect();
        let mean_abs = hi
            .iter()
            .zip(&lo)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / nf;
        let mean_hi = hi.iter().sum::<f64>() / nf;
        let mean_lo = lo.iter().sum::<f64>() / nf;
        let var = |v: &[f64], m: f64| {
            if v.len() < 2 {
                0.0
            } else {
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
            }
        };
        let pooled = (0.5 * (var(&hi, mean_hi) + var(&lo, mean_lo))).sqrt();
        let smd = if pooled > 0.0 {
            (mean_hi - mean_lo) / pooled
        } else {
            0.0
        };
        covariates.push(CovariateBalance {
            name: ms.covariate_names[c].clone(),
            mean_abs_within_pair_diff: mean_abs,
            standardized_mean_difference: smd,
        });
    }

    let mut gaps: Vec<f64> = ms.pairs.iter().map(|p| p.gap).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gap_median = if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    };
    Ok(BalanceReport {
        n_pairs: n,
        covariates,
        gap_min: gaps[0],
        gap_median,
        gap_mean: gaps.iter().sum::<f64>() / nf,
        tie_count: ms.pairs.iter().filter(|p| p.tied).count(),
    })
}
