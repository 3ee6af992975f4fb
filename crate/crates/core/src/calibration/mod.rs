//! Dual calibration: dithering, group weights, the empirical dual objective
//! and its subgradient, the projected subgradient solver, and the calibrated
//! fair predictor.
//!
//! For a group `s` with weight `pi_s`, multipliers `lambda_s` and a
//! (dithered) base score `f`, the calibrated prediction is
//!
//! ```text
//! argmin_{y in grid}  pi_s (y - f)^2 + sum_c lambda_{s,c} 1{y <= z_c}
//! ```
//!
//! and the multipliers minimize the convex empirical dual
//!
//! ```text
//! H(lambda) = sum_s 1/N_s sum_{i in I_s} max_y [ -pi_s (y - f_i)^2 - sum_c lambda_{s,c} (1{y <= z_c} - t_c) ]
//! ```
//!
//! where `t_c` is the prescribed level for level columns and zero for pooled
//! parity columns (whose multipliers are kept in the zero-sum set).

mod dither;
mod dual;
mod predictor;
mod solver;

use std::collections::BTreeMap;

use rand::Rng;

pub use dither::{dither, DitherConfig};
pub use dual::{
    dual_objective, dual_score, dual_subgradient, evaluate_dual, project_delta, DualEvaluation,
};
pub use predictor::{FairPredictor, Provenance, PREDICTOR_FORMAT, PREDICTOR_VERSION};
pub use solver::{solve_dual, SolveOutcome, SolverOptions, TraceStep};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::spec::GroupId;

/// Per-group counts `N_s` and weights `pi_s = N_s / N`, in sorted label order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeights {
    pub groups: Vec<GroupId>,
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
}

impl GroupWeights {
    pub fn index_of(&self, group: &GroupId) -> Option<usize> {
        self.groups.binary_search(group).ok()
    }
}

/// Counts groups. When `declared` is given, every declared group must appear
/// and no other group may.
pub fn group_weights<'a, I>(groups: I, declared: Option<&[GroupId]>) -> Result<GroupWeights>
where
    I: IntoIterator<Item = &'a GroupId>,
{
    let mut tally: BTreeMap<GroupId, usize> = BTreeMap::new();
    if let Some(decl) = declared {
        for g in decl {
            tally.insert(g.clone(), 0);
        }
    }
    let mut total = 0usize;
    for g in groups {
        match tally.get_mut(g) {
            Some(n) => *n += 1,
            None if declared.is_some() => return Err(Error::UnknownGroup(g.to_string())),
            None => {
                tally.insert(g.clone(), 1);
            }
        }
        total += 1;
    }
    if total == 0 {
        return Err(invalid("no calibration samples"));
    }
    if let Some((g, _)) = tally.iter().find(|(_, &n)| n == 0) {
        return Err(Error::EmptyGroup(g.to_string()));
    }
    let (groups, counts): (Vec<_>, Vec<_>) = tally.into_iter().unzip();
    let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
    Ok(GroupWeights {
        groups,
        counts,
        weights,
    })
}

/// Dithered, clipped calibration scores with their group indices.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    scores: Vec<f64>,
    group_idx: Vec<usize>,
    weights: GroupWeights,
}

impl CalibrationSet {
    /// Builds a set from scores that are already dithered and inside `[-A, A]`.
    pub fn new(entries: Vec<(f64, GroupId)>, declared: Option<&[GroupId]>) -> Result<Self> {
        if let Some((i, (v, _))) = entries
            .iter()
            .enumerate()
            .find(|(_, (v, _))| !v.is_finite())
        {
            return Err(invalid(format!("calibration score {i} is not finite: {v}")));
        }
        let weights = group_weights(entries.iter().map(|(_, g)| g), declared)?;
        let mut scores = Vec::with_capacity(entries.len());
        let mut group_idx = Vec::with_capacity(entries.len());
        for (v, g) in entries {
            group_idx.push(weights.index_of(&g).expect("group was tallied"));
            scores.push(v);
        }
        Ok(Self {
            scores,
            group_idx,
            weights,
        })
    }

    /// Clips raw base scores into the grid range, dithers them with the
    /// configured width, and builds the set.
    pub fn prepare<R: Rng + ?Sized>(
        raw: &[(f64, GroupId)],
        grid: &Grid,
        cfg: &DitherConfig,
        declared: Option<&[GroupId]>,
        rng: &mut R,
    ) -> Result<Self> {
        let a = grid.bound();
        let entries = raw
            .iter()
            .map(|(v, g)| (dither(cfg.clip(*v, a), cfg, a, rng), g.clone()))
            .collect();
        Self::new(entries, declared)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn group_indices(&self) -> &[usize] {
        &self.group_idx
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.weights.groups
    }

    pub fn counts(&self) -> &[usize] {
        &self.weights.counts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights.weights
    }

    pub fn group_weights(&self) -> &GroupWeights {
        &self.weights
    }

    /// `(score, group)` pairs in input order.
    pub fn entries(&self) -> impl Iterator<Item = (f64, &GroupId)> + '_ {
        self.scores
            .iter()
            .zip(&self.group_idx)
            .map(|(&v, &s)| (v, &self.weights.groups[s]))
    }

    /// Scores of one group, in input order.
    pub fn group_scores(&self, group: usize) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.group_idx)
            .filter(|(_, &s)| s == group)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Each group's scores in ascending order.
    pub fn sorted_by_group(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.weights.groups.len()];
        for (&v, &s) in self.scores.iter().zip(&self.group_idx) {
            out[s].push(v);
        }
        for part in &mut out {
            part.sort_by(f64::total_cmp);
        }
        out
    }

    pub(crate) fn check_range(&self, grid: &Grid) -> Result<()> {
        let a = grid.bound();
        match self.scores.iter().find(|v| v.abs() > a) {
            Some(v) => Err(invalid(format!(
                "calibration score {v} lies outside [-{a}, {a}]"
            ))),
            None => Ok(()),
        }
    }
}
