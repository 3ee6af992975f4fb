#![allow(dead_code)]

use proptest::prelude::*;
use threshfair::{CalibrationSet, DualParams, FairnessSpec, Grid, GroupId};

/// A calibration set, grid and spec small enough for exhaustive checks.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: Grid,
    pub calib: CalibrationSet,
    pub spec: FairnessSpec,
}

impl Instance {
    pub fn lambda(&self, raw: &[f64]) -> DualParams {
        let cols = self.spec.num_constraints();
        let rows = (0..self.calib.groups().len())
            .map(|s| (0..cols).map(|c| raw[(s * cols + c) % raw.len()]).collect())
            .collect();
        DualParams::from_rows(rows).unwrap()
    }
}

/// Scores as fractions of the bound, tagged with one of up to three groups;
/// the first two entries pin groups 0 and 1 so every set has two groups.
fn entries() -> impl Strategy<Value = Vec<(f64, usize)>> {
    proptest::collection::vec((-1.0f64..=1.0, 0usize..3), 3..50).prop_map(|mut v| {
        v[0].1 = 0;
        v[1].1 = 1;
        v
    })
}

fn spec_for(
    kind: usize,
    z: (f64, f64),
    levels: (f64, f64),
    inner: usize,
    grid: &Grid,
) -> FairnessSpec {
    let a = grid.bound();
    let (z1, z2) = (-a * z.0, a * z.1);
    match kind {
        0 => FairnessSpec::lz(vec![levels.0, levels.1], vec![z1, z2]).unwrap(),
        1 => FairnessSpec::zdp(vec![z1, z2]).unwrap(),
        2 => FairnessSpec::border([z1, z2], [levels.0, levels.1], inner).unwrap(),
        _ => FairnessSpec::strong_dp(grid).unwrap(),
    }
}

pub fn instance() -> impl Strategy<Value = Instance> {
    (
        0.5f64..50.0,
        3usize..25,
        entries(),
        0usize..4,
        (0.01f64..0.99, 0.01f64..0.99),
        (0.05f64..0.45, 0.55f64..0.95),
        1usize..4,
    )
        .prop_map(|(a, k, entries, kind, z, levels, inner)| {
            let grid = Grid::new(a, k).unwrap();
            let calib = CalibrationSet::new(
                entries
                    .into_iter()
                    .map(|(f, g)| (f * a, GroupId::new(format!("g{g}"))))
                    .collect(),
                None,
            )
            .unwrap();
            let spec = spec_for(kind, z, levels, inner, &grid);
            Instance { grid, calib, spec }
        })
}

pub fn multipliers() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, 1..40)
}
