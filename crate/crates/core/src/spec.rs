//! Fairness constraint families and the indicator algebra shared by the
//! solver, the predictor and the audit metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid;

/// Opaque sensitive-group label. Groups compare and sort by label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(String);

impl GroupId {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// What a constraint column compares the group CDF against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// `P_s(f <= z) = level`.
    Level(f64),
    /// `P_s(f <= z) = P(f <= z)`; the multiplier column lives in the zero-sum set.
    Pooled,
}

impl Target {
    /// Constant subtracted from the indicator in the dual score.
    pub fn offset(self) -> f64 {
        match self {
            Target::Level(l) => l,
            Target::Pooled => 0.0,
        }
    }
}

/// One column of the multiplier matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub threshold: f64,
    pub target: Target,
}

/// The three supported constraint families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", try_from = "SpecDoc")]
pub enum FairnessSpec {
    /// Prescribed CDF levels at prescribed thresholds.
    Lz {
        levels: Vec<f64>,
        thresholds: Vec<f64>,
    },
    /// Group CDFs equal the pooled CDF at each threshold.
    Zdp { thresholds: Vec<f64> },
    /// Prescribed levels at two borders plus pooled parity on an inner regular grid.
    Border {
        borders: [f64; 2],
        levels: [f64; 2],
        inner: usize,
    },
}

#[derive(Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum SpecDoc {
    Lz {
        levels: Vec<f64>,
        thresholds: Vec<f64>,
    },
    Zdp {
        thresholds: Vec<f64>,
    },
    Border {
        borders: [f64; 2],
        levels: [f64; 2],
        inner: usize,
    },
}

impl TryFrom<SpecDoc> for FairnessSpec {
    type Error = crate::Error;

    fn try_from(doc: SpecDoc) -> Result<Self> {
        match doc {
            SpecDoc::Lz { levels, thresholds } => FairnessSpec::lz(levels, thresholds),
            SpecDoc::Zdp { thresholds } => FairnessSpec::zdp(thresholds),
            SpecDoc::Border {
                borders,
                levels,
                inner,
            } => FairnessSpec::border(borders, levels, inner),
        }
    }
}

fn check_increasing(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(invalid(format!("{name} must not be empty")));
    }
    if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
        return Err(invalid(format!("{name} contains non-finite value {x}")));
    }
    if let Some(w) = xs.windows(2).find(|w| w[0] >= w[1]) {
        return Err(invalid(format!(
            "{name} must be strictly increasing, found {} followed by {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn check_levels(levels: &[f64]) -> Result<()> {
    check_increasing("levels", levels)?;
    if let Some(l) = levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(invalid(format!("levels must lie in (0, 1), got {l}")));
    }
    Ok(())
}

impl FairnessSpec {
    pub fn lz(levels: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        check_levels(&levels)?;
        check_increasing("thresholds", &thresholds)?;
        if levels.len() != thresholds.len() {
            return Err(invalid(format!(
                "{} levels but {} thresholds",
                levels.len(),
                thresholds.len()
            )));
        }
        Ok(Self::Lz { levels, thresholds })
    }

    pub fn zdp(thresholds: Vec<f64>) -> Result<Self> {
        check_increasing("thresholds", &thresholds)?;
        Ok(Self::Zdp { thresholds })
    }

    pub fn border(borders: [f64; 2], levels: [f64; 2], inner: usize) -> Result<Self> {
        check_levels(&levels)?;
        check_increasing("borders", &borders)?;
        if inner == 0 {
            return Err(invalid(
                "border constraint needs at least one inner threshold",
            ));
        }
        let spec = Self::Border {
            borders,
            levels,
            inner,
        };
        // the inner grid must stay strictly between the borders after rounding
        let mut all = vec![borders[0]];
        all.extend(spec.inner_thresholds());
        all.push(borders[1]);
        check_increasing("inner thresholds", &all)?;
        Ok(spec)
    }

    /// Full-distribution parity: pooled parity at every interior grid point.
    pub fn strong_dp(grid: &Grid) -> Result<Self> {
        let pts = grid.points();
        if pts.len() < 3 {
            return Err(invalid(
                "strong DP needs a grid with an interior point (K >= 3)",
            ));
        }
        Self::zdp(pts[1..pts.len() - 1].to_vec())
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Lz { .. } => "lz",
            Self::Zdp { .. } => "zdp",
            Self::Border { .. } => "border",
        }
    }

    /// Regular inner thresholds strictly between the borders (empty for other variants).
    pub fn inner_thresholds(&self) -> Vec<f64> {
        match self {
            Self::Border { borders, inner, .. } => {
                let [lo, hi] = *borders;
                let step = (hi - lo) / (*inner + 1) as f64;
                (1..=*inner).map(|m| lo + step * m as f64).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Constraint columns in multiplier order. For `Border` the two border
    /// columns come first, followed by the inner block.
    pub fn constraints(&self) -> Vec<Constraint> {
        match self {
            Self::Lz { levels, thresholds } => thresholds
                .iter()
                .zip(levels)
                .map(|(&threshold, &l)| Constraint {
                    threshold,
                    target: Target::Level(l),
                })
                .collect(),
            Self::Zdp { thresholds } => thresholds
                .iter()
                .map(|&threshold| Constraint {
                    threshold,
                    target: Target::Pooled,
                })
                .collect(),
            Self::Border {
                borders, levels, ..
            } => {
                let mut cols: Vec<Constraint> = borders
                    .iter()
                    .zip(levels)
                    .map(|(&threshold, &l)| Constraint {
                        threshold,
                        target: Target::Level(l),
                    })
                    .collect();
                cols.extend(
                    self.inner_thresholds()
                        .into_iter()
                        .map(|threshold| Constraint {
                            threshold,
                            target: Target::Pooled,
                        }),
                );
                cols
            }
        }
    }

    pub fn num_constraints(&self) -> usize {
        match self {
            Self::Lz { thresholds, .. } | Self::Zdp { thresholds } => thresholds.len(),
            Self::Border { inner, .. } => 2 + inner,
        }
    }

    /// Checks thresholds against the output range. Thresholds that are not
    /// grid points are allowed but logged.
    pub fn validate_for(&self, grid: &Grid) -> Result<()> {
        let a = grid.bound();
        for c in self.constraints() {
            if c.threshold < -a || c.threshold > a {
                return Err(invalid(format!(
                    "threshold {} lies outside [-{a}, {a}]",
                    c.threshold
                )));
            }
        }
        let off: Vec<f64> = self
            .constraints()
            .iter()
            .map(|c| c.threshold)
            .filter(|&z| !grid.contains(z))
            .collect();
        if !off.is_empty() {
            log::debug!("{} threshold(s) are not grid points: {:?}", off.len(), off);
        }
        Ok(())
    }
}

/// `a(y) = (1{y <= z_1}, ..., 1{y <= z_M})`.
pub fn indicator_vector(y: f64, thresholds: &[f64]) -> Vec<u8> {
    thresholds.iter().map(|&z| u8::from(y <= z)).collect()
}

/// `b(y) = a(y) - levels`.
pub fn centered_indicator(y: f64, thresholds: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if thresholds.len() != levels.len() {
        return Err(invalid(format!(
            "{} thresholds but {} levels",
            thresholds.len(),
            levels.len()
        )));
    }
    Ok(thresholds
        .iter()
        .zip(levels)
        .map(|(&z, &l)| f64::from(u8::from(y <= z)) - l)
        .collect())
}

/// Per-(group, constraint) absolute violation from exact counts.
///
/// `counts_le[s][c]` is the number of group-`s` predictions `<= threshold_c`
/// and `group_sizes[s]` the group total. Level columns compare against the
/// prescribed level, pooled columns against the pooled empirical CDF. Both the
/// solver and the audit metrics go through this function, so their reported
/// violations agree bit for bit.
pub fn constraint_violations(
    counts_le: &[Vec<usize>],
    group_sizes: &[usize],
    constraints: &[Constraint],
) -> Vec<Vec<f64>> {
    let total: usize = group_sizes.iter().sum();
    let pooled: Vec<f64> = (0..constraints.len())
        .map(|c| {
            let hits: usize = counts_le.iter().map(|row| row[c]).sum();
            hits as f64 / total as f64
        })
        .collect();
    counts_le
        .iter()
        .zip(group_sizes)
        .map(|(row, &n)| {
            constraints
                .iter()
                .enumerate()
                .map(|(c, con)| {
                    let cdf = row[c] as f64 / n as f64;
                    match con.target {
                        Target::Level(l) => (cdf - l).abs(),
                        Target::Pooled => (cdf - pooled[c]).abs(),
                    }
                })
                .collect()
        })
        .collect()
}

/// Lagrange multipliers, one row per group (sorted label order), one column per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct DualParams {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DualParams {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("multiplier rows have unequal lengths"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_groups(&self) -> usize {
        self.rows
    }

    pub fn num_constraints(&self) -> usize {
        self.cols
    }

    pub fn get(&self, group: usize, col: usize) -> f64 {
        self.values[group * self.cols + col]
    }

    pub fn set(&mut self, group: usize, col: usize, value: f64) {
        self.values[group * self.cols + col] = value;
    }

    pub fn row(&self, group: usize) -> &[f64] {
        &self.values[group * self.cols..(group + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|s| self.row(s).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &Self) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Self { values, ..*self }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum of column `col` across groups.
    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.rows).map(|s| self.get(s, col)).sum()
    }

    /// Columns `[2, cols)` of a border multiplier: the inner parity block.
    pub fn inner_block(&self) -> Vec<Vec<f64>> {
        self.to_rows()
            .into_iter()
            .map(|r| r[2.min(r.len())..].to_vec())
            .collect()
    }

    /// Columns `[0, 2)` of a border multiplier: the border-level block.
    pub fn border_block(&self) -> Vec<Vec<f64>> {
        self.to_rows()
            .into_iter()
            .map(|r| r[..2.min(r.len())].to_vec())
            .collect()
    }
}

impl Serialize for DualParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DualParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        DualParams::from_rows(rows).map_err(serde::de::Error::custom)
    }
}
