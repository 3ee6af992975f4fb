//! The discretized output space: a regular grid of `K` points on `[-A, A]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Regular grid `y_k = -A + 2A (k-1)/(K-1)`, `k = 1..K`.
///
/// Fair predictors only ever output values from this grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    bound: f64,
    points: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridDoc {
    a: f64,
    k: usize,
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GridDoc {
            a: self.bound,
            k: self.len(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = GridDoc::deserialize(deserializer)?;
        Grid::new(doc.a, doc.k).map_err(serde::de::Error::custom)
    }
}

impl Grid {
    pub fn new(bound: f64, size: usize) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(invalid(format!(
                "grid bound A must be positive and finite, got {bound}"
            )));
        }
        if size < 2 {
            return Err(invalid(format!(
                "grid size K must be at least 2, got {size}"
            )));
        }
        let last = size - 1;
        let span = 2.0 * bound;
        let points = (0..size)
            .map(|k| match k {
                0 => -bound,
                k if k == last => bound,
                k => -bound + span * k as f64 / last as f64,
            })
            .collect();
        Ok(Self { bound, points })
    }

    /// Output bound `A`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.bound / (self.len() - 1) as f64
    }

    pub fn contains(&self, y: f64) -> bool {
        self.points.binary_search_by(|p| p.total_cmp(&y)).is_ok()
    }

    /// Number of grid points `y_k <= t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p <= t)
    }

    /// Clip a value into `[-A, A]`.
    pub fn clip(&self, y: f64) -> f64 {
        y.clamp(-self.bound, self.bound)
    }

    /// Index of the grid cell whose lower point is at or just below `y`, clamped to the grid.
    pub(crate) fn floor_index(&self, y: f64) -> usize {
        let raw = ((y + self.bound) / self.spacing()).floor();
        if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.len() - 1)
        }
    }

    /// Nearest grid point; exact midpoints go to the smaller value.
    ///
    /// `y` must already lie in `[-A, A]`.
    pub fn snap(&self, y: f64) -> Result<f64> {
        if !(y >= -self.bound && y <= self.bound) {
            return Err(invalid(format!(
                "value {y} lies outside [-{a}, {a}]; clip before snapping",
                a = self.bound
            )));
        }
        Ok(self.points[self.snap_index(y)])
    }

    pub(crate) fn snap_index(&self, y: f64) -> usize {
        let k = self.floor_index(y);
        let lo = k.saturating_sub(1);
        let hi = (k + 2).min(self.len() - 1);
        let mut best = lo;
        let mut best_dist = (self.points[lo] - y).abs();
        for j in lo + 1..=hi {
            let d = (self.points[j] - y).abs();
            if d < best_dist {
                best = j;
                best_dist = d;
            }
        }
        best
    }
}
