//! Synthetic data, CSV ingestion and seeded train/calibration/test splits.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselearner::{LabeledSample, UnlabeledSample};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Stream};
use crate::spec::GroupId;

pub const GROUP_A: &str = "A";
pub const GROUP_B: &str = "B";

/// Two-group synthetic regression problem with a location shift and a
/// quadratic polarization for group B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub p_group_b: f64,
    /// Standard deviation of the Gaussian noise.
    pub noise_sd: f64,
    /// Targets are clipped to `[-bound, bound]`.
    pub bound: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            p_group_b: 0.5,
            noise_sd: 5.0,
            bound: 100.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_group_b) {
            return Err(invalid(format!(
                "P(S=B) must lie in [0, 1], got {}",
                self.p_group_b
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(invalid(format!(
                "noise sd must be positive, got {}",
                self.noise_sd
            )));
        }
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(invalid(format!(
                "clip bound must be positive, got {}",
                self.bound
            )));
        }
        Ok(())
    }
}

/// Regression function `5 x1 + 3 x2 + 20 + 1{s = B} (15 + 2 (x1 - 5)^2)`.
pub fn synthetic_regression(x: &[f64], group_b: bool) -> f64 {
    let base = 5.0 * x[0] + 3.0 * x[1] + 20.0;
    if group_b {
        base + 15.0 + 2.0 * (x[0] - 5.0).powi(2)
    } else {
        base
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Synthetic);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| invalid(e.to_string()))?;
    Ok((0..cfg.n)
        .map(|_| {
            let x = vec![10.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>()];
            let is_b = rng.random::<f64>() < cfg.p_group_b;
            let y = synthetic_regression(&x, is_b) + noise.sample(&mut rng);
            LabeledSample {
                x,
                s: GroupId::from(if is_b { GROUP_B } else { GROUP_A }),
                y: y.clamp(-cfg.bound, cfg.bound),
            }
        })
        .collect())
}

/// One parsed CSV row; `y` is present when a target column was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    /// 1-based data row in the file (the header is not counted).
    pub row: usize,
    pub x: Vec<f64>,
    pub s: GroupId,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub rows: Vec<CsvRow>,
    /// Rows skipped because a used column was empty.
    pub dropped: usize,
}

impl LoadedCsv {
    pub fn labeled(&self) -> Result<Vec<LabeledSample>> {
        self.rows
            .iter()
            .map(|r| {
                r.y.map(|y| LabeledSample {
                    x: r.x.clone(),
                    s: r.s.clone(),
                    y,
                })
                .ok_or_else(|| invalid("dataset was loaded without a target column"))
            })
            .collect()
    }

    pub fn unlabeled(&self) -> Vec<UnlabeledSample> {
        self.rows
            .iter()
            .map(|r| UnlabeledSample {
                x: r.x.clone(),
                s: r.s.clone(),
            })
            .collect()
    }
}

/// Loads a header-first, comma-separated file. Rows with an empty value in
/// any used column are dropped and counted; malformed numbers are errors.
pub fn load_csv(
    path: &Path,
    features: &[String],
    group_col: &str,
    target_col: Option<&str>,
) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let feature_idx: Vec<usize> = features.iter().map(|f| find(f)).collect::<Result<_>>()?;
    let group_idx = find(group_col)?;
    let target_idx = target_col.map(find).transpose()?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let used = feature_idx
            .iter()
            .chain([&group_idx])
            .chain(target_idx.iter());
        if used.into_iter().any(|&idx| field(idx).is_empty()) {
            dropped += 1;
            continue;
        }
        let number = |idx: usize, column: &str| -> Result<f64> {
            let raw = field(idx);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Ingest {
                    path: path.to_owned(),
                    row,
                    column: column.to_owned(),
                    message: format!("`{raw}` is not a finite number"),
                }),
            }
        };
        let x = feature_idx
            .iter()
            .zip(features)
            .map(|(&idx, name)| number(idx, name))
            .collect::<Result<Vec<_>>>()?;
        let y = match (target_idx, target_col) {
            (Some(idx), Some(name)) => Some(number(idx, name)?),
            _ => None,
        };
        rows.push(CsvRow {
            row,
            x,
            s: GroupId::new(field(group_idx)),
            y,
        });
    }
    if dropped > 0 {
        log::info!(
            "{}: dropped {dropped} row(s) with missing values",
            path.display()
        );
    }
    if rows.is_empty() {
        return Err(invalid(format!("{}: no usable rows", path.display())));
    }
    Ok(LoadedCsv { rows, dropped })
}

/// Column names of the interchange format for `d` features.
pub fn feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Writes samples with header `x1..xd,s,y`. Values use the shortest
/// representation that parses back to the same float.
pub fn write_csv<W: std::io::Write>(samples: &[LabeledSample], out: W) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.x.len());
    let mut writer = csv::Writer::from_writer(out);
    let mut header = feature_names(d);
    header.push("s".into());
    header.push("y".into());
    writer.write_record(&header)?;
    for s in samples {
        let mut rec: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        rec.push(s.s.to_string());
        rec.push(s.y.to_string());
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
    pub seed: u64,
    /// Split each group separately with the same fractions.
    #[serde(default)]
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            calibration: 0.2,
            test: 0.2,
            seed: 0,
            stratified: false,
        }
    }
}

impl SplitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calibration, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(invalid("split fractions must be non-negative"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid("split fractions must sum to one"));
        }
        Ok(())
    }

    fn cuts(&self, n: usize) -> (usize, usize) {
        let cut = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let first = cut(self.train).min(n);
        let second = cut(self.train + self.calibration).clamp(first, n);
        (first, second)
    }
}

/// Seeded shuffle followed by contiguous cuts. Calibration rows lose their
/// labels. Every group present in the input must appear in every part.
pub fn split(
    samples: &[LabeledSample],
    cfg: &SplitConfig,
) -> Result<(Vec<LabeledSample>, Vec<UnlabeledSample>, Vec<LabeledSample>)> {
    cfg.validate()?;
    if samples.len() < 3 {
        return Err(invalid("need at least three samples to split"));
    }
    let mut rng = stream(cfg.seed, Stream::Split);
    let groups: BTreeSet<&GroupId> = samples.iter().map(|s| &s.s).collect();

    let (train_idx, cal_idx, test_idx) = if cfg.stratified {
        let mut parts = (Vec::new(), Vec::new(), Vec::new());
        for g in &groups {
            let mut idx: Vec<usize> = (0..samples.len())
                .filter(|&i| &samples[i].s == *g)
                .collect();
            idx.shuffle(&mut rng);
            let (a, b) = cfg.cuts(idx.len());
            parts.0.extend_from_slice(&idx[..a]);
            parts.1.extend_from_slice(&idx[a..b]);
            parts.2.extend_from_slice(&idx[b..]);
        }
        parts
    } else {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut rng);
        let (a, b) = cfg.cuts(idx.len());
        (idx[..a].to_vec(), idx[a..b].to_vec(), idx[b..].to_vec())
    };

    for (part, idx) in [
        ("training", &train_idx),
        ("calibration", &cal_idx),
        ("test", &test_idx),
    ] {
        let present: BTreeSet<&GroupId> = idx.iter().map(|&i| &samples[i].s).collect();
        if let Some(g) = groups.iter().find(|g| !present.contains(*g)) {
            return Err(Error::VanishingGroup {
                group: g.to_string(),
                part,
            });
        }
    }

    Ok((
        train_idx.iter().map(|&i| samples[i].clone()).collect(),
        cal_idx
            .iter()
            .map(|&i| samples[i].without_label())
            .collect(),
        test_idx.iter().map(|&i| samples[i].clone()).collect(),
    ))
}
