use super::CalibrationSet;
use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::spec::{constraint_violations, Constraint, DualParams, FairnessSpec, Target};

/// Constraint columns and their cut indices on the grid.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    constraints: Vec<Constraint>,
    /// `cuts[c]` grid points satisfy `y <= z_c`.
    cuts: Vec<usize>,
}

impl Layout {
    pub(crate) fn new(grid: &Grid, spec: &FairnessSpec) -> Self {
        let constraints = spec.constraints();
        let cuts = constraints
            .iter()
            .map(|c| grid.count_le(c.threshold))
            .collect();
        Self { constraints, cuts }
    }

    pub(crate) fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Penalty `<lambda_s, a(y_k)>` at every grid index for one multiplier row.
    pub(crate) fn penalties(&self, row: &[f64], k: usize) -> Vec<f64> {
        let mut pens = vec![0.0; k];
        for (&cut, &l) in self.cuts.iter().zip(row) {
            if cut > 0 {
                pens[cut - 1] += l;
            }
        }
        for i in (0..k.saturating_sub(1)).rev() {
            pens[i] += pens[i + 1];
        }
        pens
    }

    /// `sum_c lambda_c t_c`, the constant part of the dual score.
    pub(crate) fn offset(&self, row: &[f64]) -> f64 {
        self.constraints
            .iter()
            .zip(row)
            .map(|(c, l)| l * c.target.offset())
            .sum()
    }

    pub(crate) fn cut(&self, col: usize) -> usize {
        self.cuts[col]
    }
}

/// Lower envelope of the costs `w (y_k - f)^2 + p_k` seen as functions of
/// the score `f`, one line per grid index.
///
/// Lookups use the envelope and fall back to a full scan whenever the
/// winner's lead over its envelope neighbours is within rounding, so the
/// result always equals the plain minimum over the grid with ties going to
/// the smallest grid value.
#[derive(Debug, Clone)]
pub(crate) struct Envelope {
    weight: f64,
    pens: Vec<f64>,
    /// Grid indices on the envelope, ascending.
    hull: Vec<usize>,
    /// `breaks[i]`: score above which `hull[i + 1]` beats `hull[i]`.
    breaks: Vec<f64>,
    slack: f64,
}

impl Envelope {
    pub(crate) fn new(grid: &Grid, weight: f64, pens: Vec<f64>) -> Self {
        let pts = grid.points();
        let cross = |a: usize, b: usize| {
            (pts[a] + pts[b]) / 2.0 + (pens[b] - pens[a]) / (2.0 * weight * (pts[b] - pts[a]))
        };
        let mut hull: Vec<usize> = Vec::with_capacity(pts.len());
        let mut breaks: Vec<f64> = Vec::with_capacity(pts.len());
        for k in 0..pts.len() {
            while hull.len() >= 2 && cross(hull[hull.len() - 2], k) <= breaks[breaks.len() - 1] {
                hull.pop();
                breaks.pop();
            }
            if let Some(&last) = hull.last() {
                breaks.push(cross(last, k));
            }
            hull.push(k);
        }
        let span = 2.0 * grid.bound();
        let pmax = pens.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let slack = 1e-12 * (1.0 + weight * span * span + pmax) * pts.len() as f64;
        Self {
            weight,
            pens,
            hull,
            breaks,
            slack,
        }
    }

    fn cost(&self, pts: &[f64], k: usize, f: f64) -> f64 {
        let d = pts[k] - f;
        self.weight * d * d + self.pens[k]
    }

    /// Plain minimum over every grid index.
    pub(crate) fn scan(&self, pts: &[f64], f: f64) -> (usize, f64) {
        let mut best = (0, self.cost(pts, 0, f));
        for k in 1..pts.len() {
            let c = self.cost(pts, k, f);
            if c < best.1 {
                best = (k, c);
            }
        }
        best
    }

    /// Position on the envelope responsible for `f`.
    fn locate(&self, f: f64) -> usize {
        self.breaks.partition_point(|&b| b < f)
    }

    fn resolve(&self, pts: &[f64], f: f64, at: usize) -> (usize, f64) {
        let k = self.hull[at];
        let c = self.cost(pts, k, f);
        let mut lead = f64::INFINITY;
        if at > 0 {
            lead = lead.min(self.cost(pts, self.hull[at - 1], f) - c);
        }
        if at + 1 < self.hull.len() {
            lead = lead.min(self.cost(pts, self.hull[at + 1], f) - c);
        }
        if lead > self.slack {
            (k, c)
        } else {
            self.scan(pts, f)
        }
    }

    /// Grid index minimizing the cost at `f` and the minimal cost.
    pub(crate) fn best(&self, pts: &[f64], f: f64) -> (usize, f64) {
        self.resolve(pts, f, self.locate(f))
    }

    /// [`Envelope::best`] for ascending scores, sweeping the envelope once.
    pub(crate) fn best_sorted<'a>(
        &'a self,
        pts: &'a [f64],
        sorted: &'a [f64],
    ) -> impl Iterator<Item = (usize, f64)> + 'a {
        let mut at = 0;
        sorted.iter().map(move |&f| {
            while at < self.breaks.len() && self.breaks[at] < f {
                at += 1;
            }
            self.resolve(pts, f, at)
        })
    }
}

fn check_shape(lambda: &DualParams, calib: &CalibrationSet, spec: &FairnessSpec) -> Result<()> {
    if lambda.num_groups() != calib.groups().len()
        || lambda.num_constraints() != spec.num_constraints()
    {
        return Err(invalid(format!(
            "multiplier shape {}x{} does not match {} groups x {} constraints",
            lambda.num_groups(),
            lambda.num_constraints(),
            calib.groups().len(),
            spec.num_constraints()
        )));
    }
    Ok(())
}

/// Per-sample dual score `-pi_s (y - f)^2 - <lambda_s, a(y) - t>` for one group row.
///
/// `t` is the level for level columns and zero for pooled columns, so this
/// covers the level, threshold-parity and border variants.
pub fn dual_score(row: &[f64], score: f64, y: f64, spec: &FairnessSpec, weight: f64) -> f64 {
    let d = y - score;
    let penalty: f64 = spec
        .constraints()
        .iter()
        .zip(row)
        .map(|(c, l)| l * (f64::from(u8::from(y <= c.threshold)) - c.target.offset()))
        .sum();
    -weight * d * d - penalty
}

/// Everything one pass over the calibration set yields at a given `lambda`.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    /// `H(lambda)`.
    pub objective: f64,
    /// Unprojected subgradient of `H` at `lambda`.
    pub subgradient: DualParams,
    /// Per group and constraint, number of calibrated predictions `<= z_c`.
    pub counts_le: Vec<Vec<usize>>,
    pub violations: Vec<Vec<f64>>,
    pub max_violation: f64,
}

/// Evaluates the empirical dual at `lambda` in `O(N log N + |S| K)`.
pub fn evaluate_dual(
    lambda: &DualParams,
    calib: &CalibrationSet,
    grid: &Grid,
    spec: &FairnessSpec,
) -> Result<DualEvaluation> {
    check_shape(lambda, calib, spec)?;
    calib.check_range(grid)?;
    let layout = Layout::new(grid, spec);
    Ok(evaluate_with_layout(
        lambda,
        &calib.sorted_by_group(),
        calib,
        grid,
        &layout,
    ))
}

/// `sorted` holds each group's calibration scores in ascending order. Sums
/// run group by group in that order, so results do not depend on threads.
pub(crate) fn evaluate_with_layout(
    lambda: &DualParams,
    sorted: &[Vec<f64>],
    calib: &CalibrationSet,
    grid: &Grid,
    layout: &Layout,
) -> DualEvaluation {
    let n_groups = calib.groups().len();
    let k = grid.len();
    let pts = grid.points();
    let weights = calib.weights();
    let counts = calib.counts();

    let mut objective = 0.0;
    let mut hist = vec![0usize; k];
    let cols = layout.constraints().len();
    let mut counts_le = Vec::with_capacity(n_groups);
    for s in 0..n_groups {
        let row = lambda.row(s);
        let env = Envelope::new(grid, weights[s], layout.penalties(row, k));
        hist.iter_mut().for_each(|h| *h = 0);
        let mut sum = 0.0;
        for (idx, cost) in env.best_sorted(pts, &sorted[s]) {
            sum -= cost;
            hist[idx] += 1;
        }
        objective += layout.offset(row) + sum / counts[s] as f64;
        let mut cum = vec![0usize; k + 1];
        for i in 0..k {
            cum[i + 1] = cum[i] + hist[i];
        }
        counts_le.push((0..cols).map(|c| cum[layout.cut(c)]).collect::<Vec<_>>());
    }

    let mut subgradient = DualParams::zeros(n_groups, cols);
    for (s, row) in counts_le.iter().enumerate() {
        for (c, con) in layout.constraints().iter().enumerate() {
            let cdf = row[c] as f64 / counts[s] as f64;
            let g = match con.target {
                Target::Level(l) => l - cdf,
                Target::Pooled => -cdf,
            };
            subgradient.set(s, c, g);
        }
    }

    let violations = constraint_violations(&counts_le, counts, layout.constraints());
    let max_violation = violations.iter().flatten().fold(0.0f64, |m, &v| m.max(v));

    DualEvaluation {
        objective,
        subgradient,
        counts_le,
        violations,
        max_violation,
    }
}

/// Empirical dual objective `H(lambda)`.
pub fn dual_objective(
    lambda: &DualParams,
    calib: &CalibrationSet,
    grid: &Grid,
    spec: &FairnessSpec,
) -> Result<f64> {
    evaluate_dual(lambda, calib, grid, spec).map(|e| e.objective)
}

/// A subgradient of `H` at `lambda`: for level columns
/// `l_c - P_s(y* <= z_c)`, for pooled columns `-P_s(y* <= z_c)`, where `y*`
/// is each sample's maximizer under the shared tie rule.
pub fn dual_subgradient(
    lambda: &DualParams,
    calib: &CalibrationSet,
    grid: &Grid,
    spec: &FairnessSpec,
) -> Result<DualParams> {
    evaluate_dual(lambda, calib, grid, spec).map(|e| e.subgradient)
}

/// Euclidean projection onto the zero-sum set for pooled parity columns:
/// each such column has its across-group mean removed. Level columns are
/// unconstrained and left as is.
pub fn project_delta(lambda: &DualParams, spec: &FairnessSpec) -> DualParams {
    let mut out = lambda.clone();
    let groups = lambda.num_groups();
    if groups == 0 {
        return out;
    }
    for (c, con) in spec.constraints().iter().enumerate() {
        if con.target != Target::Pooled {
            continue;
        }
        let mean = lambda.column_sum(c) / groups as f64;
        for s in 0..groups {
            out.set(s, c, lambda.get(s, c) - mean);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::GroupId;

    fn grid5() -> Grid {
        Grid::new(1.0, 5).unwrap()
    }

    fn single(score: f64) -> CalibrationSet {
        CalibrationSet::new(vec![(score, GroupId::from("A"))], None).unwrap()
    }

    #[test]
    fn dual_score_examples() {
        let lz = FairnessSpec::lz(vec![0.25, 0.75], vec![0.0, 0.5]).unwrap();
        assert!((dual_score(&[0.0, 0.0], 0.3, 0.5, &lz, 1.0) + 0.04).abs() < 1e-15);
        assert_eq!(dual_score(&[1.0, 0.0], 0.0, -1.0, &lz, 1.0), -1.75);
        let zdp = FairnessSpec::zdp(vec![0.0, 0.5]).unwrap();
        assert_eq!(dual_score(&[1.0, 0.0], 0.0, -1.0, &zdp, 1.0), -2.0);
    }

    #[test]
    fn objective_at_zero_is_negative_quantization_error() {
        let spec = FairnessSpec::lz(vec![0.5], vec![0.0]).unwrap();
        let lambda = DualParams::zeros(1, 1);
        let h = dual_objective(&lambda, &single(0.3), &grid5(), &spec).unwrap();
        assert!((h + 0.04).abs() < 1e-15);

        let two = CalibrationSet::new(vec![(0.3, "A".into()), (-0.3, "B".into())], None).unwrap();
        let h = dual_objective(&DualParams::zeros(2, 1), &two, &grid5(), &spec).unwrap();
        assert!((h + 0.04).abs() < 1e-15, "{h}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = FairnessSpec::lz(vec![0.5], vec![0.0]).unwrap();
        assert!(dual_objective(&DualParams::zeros(2, 1), &single(0.3), &grid5(), &spec).is_err());
        assert!(dual_objective(&DualParams::zeros(1, 2), &single(0.3), &grid5(), &spec).is_err());
        // scores must already be clipped
        assert!(dual_objective(&DualParams::zeros(1, 1), &single(1.5), &grid5(), &spec).is_err());
    }

    #[test]
    fn subgradient_single_sample() {
        let spec = FairnessSpec::lz(vec![0.5], vec![0.0]).unwrap();
        let g = dual_subgradient(&DualParams::zeros(1, 1), &single(0.3), &grid5(), &spec).unwrap();
        assert_eq!(g.get(0, 0), 0.5);
    }

    #[test]
    fn balanced_group_has_zero_subgradient() {
        let spec = FairnessSpec::lz(vec![0.5], vec![0.0]).unwrap();
        let set = CalibrationSet::new(
            vec![
                (-0.6, "A".into()),
                (0.6, "A".into()),
                (-0.9, "A".into()),
                (0.9, "A".into()),
            ],
            None,
        )
        .unwrap();
        let g = dual_subgradient(&DualParams::zeros(1, 1), &set, &grid5(), &spec).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn projection_examples() {
        let zdp = FairnessSpec::zdp(vec![0.0]).unwrap();
        let lam = DualParams::from_rows(vec![vec![1.0], vec![0.0]]).unwrap();
        let p = project_delta(&lam, &zdp);
        assert_eq!(p.to_rows(), vec![vec![0.5], vec![-0.5]]);
        assert_eq!(project_delta(&p, &zdp), p);

        let lam = DualParams::from_rows(vec![vec![3.0], vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(
            project_delta(&lam, &zdp).to_rows(),
            vec![vec![2.0], vec![-1.0], vec![-1.0]]
        );

        let lz = FairnessSpec::lz(vec![0.5], vec![0.0]).unwrap();
        assert_eq!(project_delta(&lam, &lz), lam);

        let border = FairnessSpec::border([-0.5, 0.5], [0.25, 0.75], 1).unwrap();
        let lam = DualParams::from_rows(vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let p = project_delta(&lam, &border);
        assert_eq!(p.to_rows(), vec![vec![1.0, 2.0, 1.0], vec![0.0, 0.0, -1.0]]);
    }

    #[test]
    fn index_penalties_match_direct_sums() {
        let g = Grid::new(1.0, 9).unwrap();
        let spec = FairnessSpec::zdp(vec![-0.6, 0.0, 0.1, 1.0]).unwrap();
        let layout = Layout::new(&g, &spec);
        let row = [1.0, -2.0, 4.0, 8.0];
        let pens = layout.penalties(&row, g.len());
        for (k, &y) in g.points().iter().enumerate() {
            let direct: f64 = layout
                .constraints()
                .iter()
                .zip(&row)
                .filter(|(c, _)| y <= c.threshold)
                .map(|(_, l)| l)
                .sum();
            assert_eq!(pens[k], direct, "index {k}");
        }
    }

    #[test]
    fn envelope_agrees_with_scan() {
        let g = Grid::new(2.0, 41).unwrap();
        let spec = FairnessSpec::zdp(vec![-1.5, -0.4, 0.0, 0.3, 1.1]).unwrap();
        let layout = Layout::new(&g, &spec);
        let mut rng = crate::rng::stream(11, crate::rng::Stream::Solver);
        use rand::Rng;
        for _ in 0..200 {
            let row: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = rng.random_range(0.05..1.0);
            let env = Envelope::new(&g, w, layout.penalties(&row, g.len()));
            let mut scores: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
            // grid points and midpoints produce exact ties
            scores.extend(g.points().iter().copied());
            scores.extend(g.points().windows(2).map(|p| (p[0] + p[1]) / 2.0));
            scores.sort_by(f64::total_cmp);
            let swept: Vec<_> = env.best_sorted(g.points(), &scores).collect();
            for (f, got) in scores.iter().zip(swept) {
                assert_eq!(got, env.scan(g.points(), *f));
                assert_eq!(env.best(g.points(), *f), got);
            }
        }
    }
}
