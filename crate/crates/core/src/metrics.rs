//! Audit metrics: constraint violation, cross-group Kolmogorov-Smirnov
//! distance, price of fairness and prediction risk.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spec::{constraint_violations, FairnessSpec, GroupId};

/// Per-group partition of predictions, sorted by label.
fn by_group(predictions: &[(f64, GroupId)]) -> BTreeMap<&GroupId, Vec<f64>> {
    let mut map: BTreeMap<&GroupId, Vec<f64>> = BTreeMap::new();
    for (v, g) in predictions {
        map.entry(g).or_default().push(*v);
    }
    map
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unfairness {
    pub groups: Vec<GroupId>,
    /// `violations[s][c]`, in group label order and constraint column order.
    pub violations: Vec<Vec<f64>>,
    /// Maximum entry of `violations`.
    pub max: f64,
}

/// Maximal constraint violation of a set of predictions.
///
/// Empirical CDFs use `<=`. When `declared` is given every declared group
/// must have at least one prediction.
pub fn unfairness(
    predictions: &[(f64, GroupId)],
    spec: &FairnessSpec,
    declared: Option<&[GroupId]>,
) -> Result<Unfairness> {
    let parts = by_group(predictions);
    if let Some(decl) = declared {
        if let Some(g) = decl.iter().find(|g| !parts.contains_key(g)) {
            return Err(Error::EmptyGroup(g.to_string()));
        }
        if let Some(g) = parts.keys().find(|g| !decl.contains(g)) {
            return Err(Error::UnknownGroup(g.to_string()));
        }
    }
    if parts.is_empty() {
        return Err(invalid("no predictions to audit"));
    }
    let constraints = spec.constraints();
    let sizes: Vec<usize> = parts.values().map(Vec::len).collect();
    let counts_le: Vec<Vec<usize>> = parts
        .values()
        .map(|vals| {
            constraints
                .iter()
                .map(|c| vals.iter().filter(|&&v| v <= c.threshold).count())
                .collect()
        })
        .collect();
    let violations = constraint_violations(&counts_le, &sizes, &constraints);
    let max = violations.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    Ok(Unfairness {
        groups: parts.keys().map(|&g| g.clone()).collect(),
        violations,
        max,
    })
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

/// `sup_t |F_a(t) - F_b(t)|` for two sorted samples, evaluated at every
/// observed value (where the step CDFs jump).
fn two_sample_sup(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Largest two-sample KS distance over all unordered group pairs.
pub fn ks_statistic(predictions: &[(f64, GroupId)]) -> Result<f64> {
    let parts: Vec<Vec<f64>> = by_group(predictions).into_values().map(sorted).collect();
    if parts.len() < 2 {
        return Err(invalid("KS distance needs at least two groups"));
    }
    let mut ks = 0.0f64;
    for (i, a) in parts.iter().enumerate() {
        for b in &parts[i + 1..] {
            ks = ks.max(two_sample_sup(a, b));
        }
    }
    Ok(ks)
}

fn mean_sq_diff(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "{what}: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(invalid(format!("{what}: no values")));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Root mean squared distortion of the fair predictions from the base ones.
pub fn rmse_price(fair: &[f64], base: &[f64]) -> Result<f64> {
    mean_sq_diff(fair, base, "rmse_price").map(f64::sqrt)
}

pub fn risk_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    mean_sq_diff(predictions, targets, "risk_mse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rmse_price: f64,
    pub unfairness: Unfairness,
    pub ks: f64,
    /// Mean squared error against held-out targets, when targets are known.
    pub risk_mse: Option<f64>,
    pub counts: BTreeMap<GroupId, usize>,
}

impl EvaluationReport {
    pub fn u(&self) -> f64 {
        self.unfairness.max
    }
}

/// Full report for aligned fair predictions, base predictions, groups and
/// (optionally) targets.
pub fn evaluate(
    fair: &[f64],
    base: &[f64],
    groups: &[GroupId],
    targets: Option<&[f64]>,
    spec: &FairnessSpec,
) -> Result<EvaluationReport> {
    if fair.len() != groups.len() {
        return Err(invalid("predictions and groups have different lengths"));
    }
    let pairs: Vec<(f64, GroupId)> = fair.iter().copied().zip(groups.iter().cloned()).collect();
    let mut counts = BTreeMap::new();
    for g in groups {
        *counts.entry(g.clone()).or_insert(0usize) += 1;
    }
    Ok(EvaluationReport {
        rmse_price: rmse_price(fair, base)?,
        unfairness: unfairness(&pairs, spec, None)?,
        ks: ks_statistic(&pairs)?,
        risk_mse: targets.map(|t| risk_mse(fair, t)).transpose()?,
        counts,
    })
}
