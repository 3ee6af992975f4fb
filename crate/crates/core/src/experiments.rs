//! Reproducible experiment protocols: threshold prescriptions, method
//! comparisons across seeds, and the globality sweep.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselearner::{LabeledSample, RegressionTree, TreeParams, UnlabeledSample};
use crate::calibration::{solve_dual, CalibrationSet, DitherConfig, FairPredictor, SolverOptions};
use crate::data::{generate_synthetic, split, SplitConfig, SyntheticConfig};
use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::metrics::{evaluate, EvaluationReport};
use crate::rng::{stream, Stream};
use crate::spec::{FairnessSpec, GroupId};

pub const QUARTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Smallest sample value whose empirical CDF reaches `level`.
///
/// `sorted` must be non-empty and ascending.
pub fn lower_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let reaches = |k: usize| k as f64 / n as f64 >= level;
    let mut k = ((level * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && reaches(k - 1) {
        k -= 1;
    }
    while k < n && !reaches(k) {
        k += 1;
    }
    sorted[k - 1]
}

/// Lower quantiles at each level; errors when they are not strictly increasing.
pub fn quantile_thresholds(scores: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(invalid("cannot take quantiles of an empty score set"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let z: Vec<f64> = levels.iter().map(|&l| lower_quantile(&sorted, l)).collect();
    if z.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!(
            "quantile thresholds {z:?} are not strictly increasing; dither the scores or use fewer levels"
        )));
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrescriptionMode {
    /// Quantiles of the pooled calibration scores.
    Global,
    /// Quantiles of one group's calibration scores.
    TargetGroup(GroupId),
    /// User-supplied thresholds.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prescription {
    pub mode: PrescriptionMode,
    pub levels: Vec<f64>,
}

impl Prescription {
    pub fn global() -> Self {
        Self {
            mode: PrescriptionMode::Global,
            levels: QUARTILES.to_vec(),
        }
    }

    pub fn target(group: impl Into<GroupId>) -> Self {
        Self {
            mode: PrescriptionMode::TargetGroup(group.into()),
            levels: QUARTILES.to_vec(),
        }
    }

    pub fn label(&self) -> String {
        match &self.mode {
            PrescriptionMode::Global => "global".into(),
            PrescriptionMode::TargetGroup(g) => format!("target:{g}"),
            PrescriptionMode::Explicit(_) => "explicit".into(),
        }
    }
}

/// Builds a level/threshold spec from calibration scores.
pub fn prescribe_thresholds(
    scores: &[(f64, GroupId)],
    prescription: &Prescription,
) -> Result<FairnessSpec> {
    let z = match &prescription.mode {
        PrescriptionMode::Global => {
            let pooled: Vec<f64> = scores.iter().map(|(v, _)| *v).collect();
            quantile_thresholds(&pooled, &prescription.levels)?
        }
        PrescriptionMode::TargetGroup(g) => {
            let own: Vec<f64> = scores
                .iter()
                .filter(|(_, s)| s == g)
                .map(|(v, _)| *v)
                .collect();
            if own.is_empty() {
                return Err(invalid(format!(
                    "target group `{g}` has no calibration scores"
                )));
            }
            quantile_thresholds(&own, &prescription.levels)?
        }
        PrescriptionMode::Explicit(z) => z.clone(),
    };
    FairnessSpec::lz(prescription.levels.clone(), z)
}

/// Post-processing methods compared by the protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The clipped base scores, untouched.
    Unconstrained,
    /// Level/threshold constraints from a prescription.
    Lz(Prescription),
    /// Pooled parity at the `m` pooled quantiles `j / (m + 1)`.
    Zdp { m: usize },
    /// Border levels at two pooled quantiles with pooled parity on an inner grid.
    Range { levels: [f64; 2], inner: usize },
    /// Pooled parity at every interior grid point.
    StrongDp,
    /// Any explicit spec.
    Spec(FairnessSpec),
}

impl Method {
    pub fn default_range() -> Self {
        Method::Range {
            levels: [0.25, 0.75],
            inner: 9,
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            Method::Unconstrained => "unconstrained",
            Method::Lz(_) => "lz",
            Method::Zdp { .. } => "zdp",
            Method::Range { .. } => "range",
            Method::StrongDp => "strong_dp",
            Method::Spec(s) => s.variant_name(),
        }
    }

    /// Second descriptor column: `M`, the range levels, or the prescription.
    pub fn detail(&self) -> String {
        match self {
            Method::Unconstrained => "-".into(),
            Method::Lz(p) => p.label(),
            Method::Zdp { m } => m.to_string(),
            Method::Range { levels, inner } => format!("{}:{}/{}", levels[0], levels[1], inner),
            Method::StrongDp => "full".into(),
            Method::Spec(_) => "explicit".into(),
        }
    }

    /// Constraint spec for this method given the calibration scores. For the
    /// unconstrained baseline this is the reference spec used for auditing:
    /// global quartile constraints.
    pub fn spec_for(&self, calib: &[(f64, GroupId)], grid: &Grid) -> Result<FairnessSpec> {
        let pooled = || calib.iter().map(|(v, _)| *v).collect::<Vec<_>>();
        match self {
            Method::Unconstrained => prescribe_thresholds(calib, &Prescription::global()),
            Method::Lz(p) => prescribe_thresholds(calib, p),
            Method::Zdp { m } => {
                if *m == 0 {
                    return Err(invalid("threshold parity needs M >= 1"));
                }
                let levels: Vec<f64> = (1..=*m).map(|j| j as f64 / (*m + 1) as f64).collect();
                FairnessSpec::zdp(quantile_thresholds(&pooled(), &levels)?)
            }
            Method::Range { levels, inner } => {
                let z = quantile_thresholds(&pooled(), levels)?;
                FairnessSpec::border([z[0], z[1]], *levels, *inner)
            }
            Method::StrongDp => FairnessSpec::strong_dp(grid),
            Method::Spec(s) => Ok(s.clone()),
        }
    }
}

/// Shared settings for every cell of a protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub split: SplitConfig,
    pub tree: TreeParams,
    pub grid_bound: f64,
    pub grid_size: usize,
    pub dither_u: f64,
    pub dither_at_prediction: bool,
    pub solver: SolverOptions,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            tree: TreeParams::default(),
            grid_bound: 100.0,
            grid_size: 201,
            dither_u: 1e-4,
            // tree scores are atomic; test scores need the same tie breaking
            // as the calibration scores
            dither_at_prediction: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Dataset(Vec<LabeledSample>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub variant: String,
    pub detail: String,
    pub seed: u64,
    pub report: EvaluationReport,
    /// Calibration-set violation reported by the solver (absent for the baseline).
    pub calib_violation: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
}

/// One seed's trained base model and scored calibration/test parts.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub seed: u64,
    pub grid: Grid,
    pub dither: DitherConfig,
    /// Dithered, clipped calibration scores.
    pub calib: CalibrationSet,
    /// Clipped base scores on the test part.
    pub test_scores: Vec<f64>,
    pub test_groups: Vec<GroupId>,
    pub test_targets: Vec<f64>,
}

/// Base scores clipped the way the dither expects, so leaves whose targets
/// were all clipped to the bound do not form an unbreakable atom there.
fn score_all<'a>(
    tree: &RegressionTree,
    bound: f64,
    dither: &DitherConfig,
    samples: impl Iterator<Item = (&'a [f64], &'a GroupId)>,
) -> Result<Vec<f64>> {
    samples
        .map(|(x, s)| tree.predict_sample(x, s).map(|p| dither.clip(p, bound)))
        .collect()
}

impl PreparedRun {
    /// Trains the base tree and scores the calibration and test parts.
    pub fn from_parts(
        train: &[LabeledSample],
        calib: &[UnlabeledSample],
        test: &[LabeledSample],
        cfg: &ProtocolConfig,
        seed: u64,
    ) -> Result<Self> {
        let grid = Grid::new(cfg.grid_bound, cfg.grid_size)?;
        let tree = RegressionTree::fit_with_groups(train, cfg.tree)?;
        let mut dither = DitherConfig::new(cfg.dither_u, seed)?;
        dither.at_prediction = cfg.dither_at_prediction;
        let raw: Vec<(f64, GroupId)> = score_all(
            &tree,
            grid.bound(),
            &dither,
            calib.iter().map(|s| (s.x.as_slice(), &s.s)),
        )?
        .into_iter()
        .zip(calib.iter().map(|s| s.s.clone()))
        .collect();
        let declared: Vec<GroupId> = {
            let mut g: Vec<GroupId> = train.iter().map(|s| s.s.clone()).collect();
            g.sort();
            g.dedup();
            g
        };
        let mut rng = stream(seed, Stream::Dither);
        let calib = CalibrationSet::prepare(&raw, &grid, &dither, Some(&declared), &mut rng)?;
        let test_scores = score_all(
            &tree,
            grid.bound(),
            &dither,
            test.iter().map(|s| (s.x.as_slice(), &s.s)),
        )?;
        Ok(Self {
            seed,
            grid,
            dither,
            calib,
            test_scores,
            test_groups: test.iter().map(|s| s.s.clone()).collect(),
            test_targets: test.iter().map(|s| s.y).collect(),
        })
    }

    pub fn from_source(source: &DataSource, cfg: &ProtocolConfig, seed: u64) -> Result<Self> {
        let data = match source {
            DataSource::Synthetic(sc) => generate_synthetic(&SyntheticConfig { seed, ..*sc })?,
            DataSource::Dataset(d) => d.clone(),
        };
        let (train, calib, test) = split(&data, &SplitConfig { seed, ..cfg.split })?;
        Self::from_parts(&train, &calib, &test, cfg, seed)
    }

    pub fn calib_pairs(&self) -> Vec<(f64, GroupId)> {
        self.calib.entries().map(|(v, g)| (v, g.clone())).collect()
    }

    /// Calibrates (unless unconstrained) and evaluates one method on the test part.
    pub fn run_method(
        &self,
        method: &Method,
        solver: &SolverOptions,
    ) -> Result<(SweepPoint, Option<FairPredictor>)> {
        let spec = method.spec_for(&self.calib_pairs(), &self.grid)?;
        let (fair, predictor, calib_violation, converged, iterations) = match method {
            Method::Unconstrained => (self.test_scores.clone(), None, None, None, None),
            _ => {
                let outcome = solve_dual(&self.calib, &self.grid, &spec, solver)?;
                let predictor = FairPredictor::from_solution(
                    self.grid.clone(),
                    spec.clone(),
                    &self.calib,
                    &outcome,
                    self.dither,
                )?;
                let pairs: Vec<(f64, GroupId)> = self
                    .test_scores
                    .iter()
                    .copied()
                    .zip(self.test_groups.iter().cloned())
                    .collect();
                let fair = predictor.predict_batch(&pairs)?;
                (
                    fair,
                    Some(predictor),
                    Some(outcome.final_violation),
                    Some(outcome.converged),
                    Some(outcome.iterations),
                )
            }
        };
        let report = evaluate(
            &fair,
            &self.test_scores,
            &self.test_groups,
            Some(&self.test_targets),
            &spec,
        )?;
        Ok((
            SweepPoint {
                variant: method.variant().into(),
                detail: method.detail(),
                seed: self.seed,
                report,
                calib_violation,
                converged,
                iterations,
            },
            predictor,
        ))
    }
}

/// Runs every method on every seed. Points come back ordered by method, then
/// by seed position; seeds run in parallel.
pub fn run_protocol(
    source: &DataSource,
    methods: &[Method],
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    let per_seed: Vec<Result<Vec<SweepPoint>>> = seeds
        .par_iter()
        .map(|&seed| {
            let run = PreparedRun::from_source(source, cfg, seed)?;
            methods
                .iter()
                .map(|m| run.run_method(m, &cfg.solver).map(|(p, _)| p))
                .collect()
        })
        .collect();
    let mut by_seed = Vec::with_capacity(seeds.len());
    for r in per_seed {
        by_seed.push(r?);
    }
    let mut points = Vec::with_capacity(methods.len() * seeds.len());
    for m in 0..methods.len() {
        for seed_points in &by_seed {
            points.push(seed_points[m].clone());
        }
    }
    Ok(points)
}

/// Threshold parity at each `M`, then full-grid strong parity, with the
/// unconstrained baseline first for reference.
pub fn sweep_globality(
    synthetic: &SyntheticConfig,
    m_values: &[usize],
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    let mut methods = vec![Method::Unconstrained];
    methods.extend(m_values.iter().map(|&m| Method::Zdp { m }));
    methods.push(Method::StrongDp);
    run_protocol(&DataSource::Synthetic(*synthetic), &methods, cfg, seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub detail: String,
    pub seeds: usize,
    pub rmse_price_mean: f64,
    pub rmse_price_sd: f64,
    pub u_mean: f64,
    pub u_sd: f64,
    pub ks_mean: f64,
    pub ks_sd: f64,
    pub risk_mse_mean: Option<f64>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Mean and sample standard deviation per descriptor, in first-seen order.
pub fn aggregate(points: &[SweepPoint]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&SweepPoint>> = BTreeMap::new();
    for p in points {
        let key = (p.variant.clone(), p.detail.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(p);
    }
    order
        .into_iter()
        .map(|key| {
            let ps = &groups[&key];
            let col = |f: &dyn Fn(&SweepPoint) -> f64| ps.iter().map(|p| f(p)).collect::<Vec<_>>();
            let (rmse_price_mean, rmse_price_sd) = mean_sd(&col(&|p| p.report.rmse_price));
            let (u_mean, u_sd) = mean_sd(&col(&|p| p.report.u()));
            let (ks_mean, ks_sd) = mean_sd(&col(&|p| p.report.ks));
            let risks: Option<Vec<f64>> = ps.iter().map(|p| p.report.risk_mse).collect();
            AggregateRow {
                variant: key.0,
                detail: key.1,
                seeds: ps.len(),
                rmse_price_mean,
                rmse_price_sd,
                u_mean,
                u_sd,
                ks_mean,
                ks_sd,
                risk_mse_mean: risks.map(|r| mean_sd(&r).0),
            }
        })
        .collect()
}

pub const SWEEP_HEADER: [&str; 7] = [
    "variant",
    "M_or_range",
    "seed",
    "rmse_price",
    "U",
    "ks",
    "risk_mse",
];

/// One CSV line per point with the [`SWEEP_HEADER`] columns.
pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for p in points {
        w.write_record([
            p.variant.clone(),
            p.detail.clone(),
            p.seed.to_string(),
            p.report.rmse_price.to_string(),
            p.report.u().to_string(),
            p.report.ks.to_string(),
            p.report.risk_mse.map_or(String::new(), |r| r.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
