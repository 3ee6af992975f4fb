use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dither::{dither, DitherConfig};
use super::dual::{Envelope, Layout};
use super::solver::SolveOutcome;
use super::CalibrationSet;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::rng::{stream, Stream};
use crate::spec::{DualParams, FairnessSpec, GroupId};

pub const PREDICTOR_FORMAT: &str = "threshfair-predictor";
pub const PREDICTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub iterations: usize,
    pub final_violation: f64,
    pub converged: bool,
    pub seed: u64,
}

/// A calibrated post-processor mapping `(base score, group)` to a grid value.
#[derive(Debug, Clone)]
pub struct FairPredictor {
    grid: Grid,
    spec: FairnessSpec,
    groups: Vec<GroupId>,
    lambda: DualParams,
    weights: Vec<f64>,
    dither: DitherConfig,
    provenance: Provenance,
    envelopes: Vec<Envelope>,
}

#[derive(Serialize, Deserialize)]
struct PredictorDoc {
    format: String,
    version: u32,
    grid: Grid,
    spec: FairnessSpec,
    groups: Vec<GroupId>,
    lambda: DualParams,
    weights: Vec<f64>,
    dither: DitherConfig,
    provenance: Provenance,
}

impl FairPredictor {
    pub fn new(
        grid: Grid,
        spec: FairnessSpec,
        groups: Vec<GroupId>,
        lambda: DualParams,
        weights: Vec<f64>,
        dither: DitherConfig,
        provenance: Provenance,
    ) -> Result<Self> {
        spec.validate_for(&grid)?;
        if groups.is_empty() {
            return Err(invalid("predictor needs at least one group"));
        }
        if groups.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("predictor groups must be sorted and distinct"));
        }
        if lambda.num_groups() != groups.len() || lambda.num_constraints() != spec.num_constraints()
        {
            return Err(invalid(
                "multiplier shape does not match groups and constraints",
            ));
        }
        if weights.len() != groups.len() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("group weights must be positive, one per group"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("group weights must sum to one"));
        }
        let layout = Layout::new(&grid, &spec);
        let envelopes = (0..groups.len())
            .map(|s| {
                Envelope::new(
                    &grid,
                    weights[s],
                    layout.penalties(lambda.row(s), grid.len()),
                )
            })
            .collect();
        Ok(Self {
            grid,
            spec,
            groups,
            lambda,
            weights,
            dither,
            provenance,
            envelopes,
        })
    }

    /// Bundles a solver outcome with the calibration context it came from.
    pub fn from_solution(
        grid: Grid,
        spec: FairnessSpec,
        calib: &CalibrationSet,
        outcome: &SolveOutcome,
        dither: DitherConfig,
    ) -> Result<Self> {
        let provenance = Provenance {
            iterations: outcome.iterations,
            final_violation: outcome.final_violation,
            converged: outcome.converged,
            seed: dither.seed,
        };
        Self::new(
            grid,
            spec,
            calib.groups().to_vec(),
            outcome.lambda.clone(),
            calib.weights().to_vec(),
            dither,
            provenance,
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &FairnessSpec {
        &self.spec
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn lambda(&self) -> &DualParams {
        &self.lambda
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dither_config(&self) -> &DitherConfig {
        &self.dither
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn group_index(&self, group: &GroupId) -> Result<usize> {
        self.groups
            .binary_search(group)
            .map_err(|_| Error::UnknownGroup(group.to_string()))
    }

    /// Calibrated value for an already clipped (and, if configured, dithered)
    /// score: the grid point minimizing `pi_s (y - f)^2 + <lambda_s, a(y)>`,
    /// smallest value on ties.
    pub fn predict(&self, score: f64, group: &GroupId) -> Result<f64> {
        let s = self.group_index(group)?;
        self.predict_indexed(score, s)
    }

    pub fn predict_indexed(&self, score: f64, group: usize) -> Result<f64> {
        let a = self.grid.bound();
        if !(score >= -a && score <= a) {
            return Err(invalid(format!(
                "score {score} lies outside [-{a}, {a}]; clip first"
            )));
        }
        let (k, _) = self.envelopes[group].best(self.grid.points(), score);
        Ok(self.grid.points()[k])
    }

    /// Clips raw base scores, dithers them when prediction-time dithering is
    /// on, and calibrates them.
    pub fn predict_batch(&self, raw: &[(f64, GroupId)]) -> Result<Vec<f64>> {
        let a = self.grid.bound();
        let mut rng = stream(self.dither.seed, Stream::PredictDither);
        raw.iter()
            .map(|(v, g)| {
                if !v.is_finite() {
                    return Err(invalid(format!("score {v} is not finite")));
                }
                let score = if self.dither.at_prediction {
                    dither(self.dither.clip(*v, a), &self.dither, a, &mut rng)
                } else {
                    self.grid.clip(*v)
                };
                self.predict(score, g)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PredictorDoc {
            format: PREDICTOR_FORMAT.to_owned(),
            version: PREDICTOR_VERSION,
            grid: self.grid.clone(),
            spec: self.spec.clone(),
            groups: self.groups.clone(),
            lambda: self.lambda.clone(),
            weights: self.weights.clone(),
            dither: self.dither,
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PredictorDoc = serde_json::from_str(text)?;
        if doc.format != PREDICTOR_FORMAT {
            return Err(Error::Format(format!(
                "expected `{PREDICTOR_FORMAT}`, found `{}`",
                doc.format
            )));
        }
        if doc.version != PREDICTOR_VERSION {
            return Err(Error::Format(format!(
                "predictor version {} is not supported (expected {PREDICTOR_VERSION})",
                doc.version
            )));
        }
        Self::new(
            doc.grid,
            doc.spec,
            doc.groups,
            doc.lambda,
            doc.weights,
            doc.dither,
            doc.provenance,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl PartialEq for FairPredictor {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.spec == other.spec
            && self.groups == other.groups
            && self.lambda == other.lambda
            && self.weights == other.weights
            && self.dither == other.dither
            && self.provenance == other.provenance
    }
}
