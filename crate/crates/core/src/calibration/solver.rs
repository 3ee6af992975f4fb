use serde::{Deserialize, Serialize};

use super::dual::{evaluate_with_layout, project_delta, Layout};
use super::CalibrationSet;
use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::spec::{DualParams, FairnessSpec};

/// Projected subgradient settings.
///
/// Iterates move along the projected subgradient normalized to unit length,
/// with step `c0 * scale / sqrt(t)`. When `step_scale` is unset,
/// `scale = max_s pi_s * A * (grid spacing)`: a multiplier change of `d`
/// shifts a group's decision boundary between adjacent grid points by
/// `d / (2 pi_s spacing)` in score units, so the first step moves boundaries
/// by about `A / 2` whatever the output units.
///
/// The schedule restarts from the iterate with the lowest objective, with
/// `scale` multiplied by `shrink`, after `patience` iterations without a new
/// lowest objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub c0: f64,
    #[serde(default)]
    pub step_scale: Option<f64>,
    /// Target for the maximal empirical constraint violation.
    pub tol: f64,
    /// Return the iterate with the smallest violation instead of the last one.
    pub track_best: bool,
    /// Iterations without a new lowest objective before a restart; `0`
    /// disables restarts.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Factor applied to the step scale at each restart.
    #[serde(default = "default_shrink")]
    pub shrink: f64,
}

fn default_patience() -> usize {
    100
}

fn default_shrink() -> f64 {
    0.5
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            c0: 1.0,
            step_scale: None,
            tol: 0.01,
            track_best: true,
            patience: default_patience(),
            shrink: default_shrink(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("solver needs at least one iteration"));
        }
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(invalid(format!(
                "step constant c0 must be positive, got {}",
                self.c0
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid(format!(
                "shrink factor must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if let Some(s) = self.step_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid(format!("step scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub objective: f64,
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub lambda: DualParams,
    /// Number of dual evaluations performed.
    pub iterations: usize,
    /// Maximal calibration-set violation at the returned multipliers.
    pub final_violation: f64,
    /// Dual objective at the returned multipliers.
    pub final_objective: f64,
    /// Whether the returned violation is within `tol`.
    pub converged: bool,
    pub trace: Vec<TraceStep>,
}

/// Minimizes the empirical dual by projected subgradient descent from zero.
///
/// Every iterate is evaluated once; the pass yields the objective, the
/// subgradient and the exact calibration-set violation of the induced
/// predictor. Stops as soon as the violation is within `tol`.
pub fn solve_dual(
    calib: &CalibrationSet,
    grid: &Grid,
    spec: &FairnessSpec,
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    opts.validate()?;
    spec.validate_for(grid)?;
    calib.check_range(grid)?;
    let layout = Layout::new(grid, spec);
    let sorted = calib.sorted_by_group();
    let n_groups = calib.groups().len();
    let scale = opts.step_scale.unwrap_or_else(|| {
        let pi_max = calib.weights().iter().fold(0.0f64, |m, &w| m.max(w));
        pi_max * grid.bound() * grid.spacing()
    });

    let mut lambda = DualParams::zeros(n_groups, spec.num_constraints());
    let mut trace = Vec::with_capacity(opts.max_iters.min(1 << 16));
    // (multipliers, violation, objective, subgradient) of the best iterate
    let mut best: Option<(DualParams, f64, f64, DualParams)> = None;
    // (multipliers, objective, subgradient) of the lowest objective seen
    let mut anchor: Option<(DualParams, f64, DualParams)> = None;
    let mut last = None;
    let mut epoch_scale = scale;
    let mut epoch_t = 0usize;
    let mut stale = 0usize;

    for t in 1..=opts.max_iters {
        let eval = evaluate_with_layout(&lambda, &sorted, calib, grid, &layout);
        trace.push(TraceStep {
            objective: eval.objective,
            violation: eval.max_violation,
        });
        if eval.max_violation <= opts.tol {
            return Ok(SolveOutcome {
                lambda,
                iterations: t,
                final_violation: eval.max_violation,
                final_objective: eval.objective,
                converged: true,
                trace,
            });
        }
        let mut g = eval.subgradient;
        if best.as_ref().is_none_or(|b| eval.max_violation < b.1) {
            best = Some((
                lambda.clone(),
                eval.max_violation,
                eval.objective,
                g.clone(),
            ));
        }
        if anchor.as_ref().is_none_or(|a| eval.objective < a.1) {
            anchor = Some((lambda.clone(), eval.objective, g.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if t == opts.max_iters {
            last = Some((lambda, eval.max_violation, eval.objective));
            break;
        }
        if opts.track_best && opts.patience > 0 && stale >= opts.patience {
            let a = anchor.as_ref().expect("set on the first iteration");
            lambda = a.0.clone();
            g = a.2.clone();
            epoch_scale *= opts.shrink;
            epoch_t = 0;
            stale = 0;
        }
        epoch_t += 1;
        // The zero-sum set is a subspace, so stepping along the projected
        // subgradient and projecting afterwards give the same iterate.
        let dir = project_delta(&g, spec);
        let norm = dir.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let step = opts.c0 * epoch_scale / (epoch_t as f64).sqrt() / norm;
        lambda = project_delta(&lambda.axpy(-step, &dir), spec);
    }

    let (lambda, final_violation, final_objective) = if opts.track_best {
        let b = best.expect("at least one iteration ran");
        (b.0, b.1, b.2)
    } else {
        last.expect("loop ends on the last iteration")
    };
    log::warn!(
        "dual solver stopped after {} iterations with violation {final_violation:.4} > tol {}",
        opts.max_iters,
        opts.tol
    );
    Ok(SolveOutcome {
        lambda,
        iterations: opts.max_iters,
        final_violation,
        final_objective,
        converged: false,
        trace,
    })
}
