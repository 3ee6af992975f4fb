use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use threshfair::baselearner::RegressionTree;
use threshfair::data::{load_csv, CsvRow};
use threshfair::GroupId;

pub const MODEL_FORMAT: &str = "threshfair-model";
pub const MODEL_VERSION: u32 = 1;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    Ok(reader.headers()?.iter().map(str::to_owned).collect())
}

/// Explicit feature list, or every column except the group and target.
pub fn resolve_features(
    path: &Path,
    features: Option<&[String]>,
    group_col: &str,
    target_col: Option<&str>,
) -> Result<Vec<String>> {
    if let Some(f) = features {
        return Ok(f.to_vec());
    }
    let cols: Vec<String> = header(path)?
        .into_iter()
        .filter(|c| c != group_col && Some(c.as_str()) != target_col)
        .collect();
    if cols.is_empty() {
        bail!(
            "{}: no feature columns besides `{group_col}`",
            path.display()
        );
    }
    Ok(cols)
}

/// Base model file: the tree plus the feature columns it was trained on.
#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub features: Vec<String>,
    pub tree: serde_json::Value,
}

pub struct BaseModel {
    pub features: Vec<String>,
    pub tree: RegressionTree,
}

impl BaseModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let doc = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            features: self.features.clone(),
            tree: serde_json::from_str(&self.tree.to_json()?)?,
        };
        json_bytes(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read model {}", path.display()))?;
        let doc: ModelFile = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a model file", path.display()))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            bail!(
                "{}: expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                path.display(),
                doc.format,
                doc.version
            );
        }
        let tree = RegressionTree::from_json(&doc.tree.to_string())
            .with_context(|| format!("{}: invalid tree", path.display()))?;
        Ok(Self {
            features: doc.features,
            tree,
        })
    }
}

/// One input row with its base score.
pub struct Scored {
    pub row: usize,
    pub s: GroupId,
    pub score: f64,
    pub y: Option<f64>,
}

/// Where base scores come from: a trained model applied to feature columns,
/// or a column of precomputed predictions.
pub enum ScoreSource {
    Model {
        model: BaseModel,
        features: Vec<String>,
    },
    Column(String),
}

impl ScoreSource {
    pub fn new(
        model: Option<&Path>,
        pred_col: Option<&str>,
        features: Option<&[String]>,
    ) -> Result<Self> {
        match (model, pred_col) {
            (Some(path), None) => {
                let model = BaseModel::load(path)?;
                let features = features.map_or_else(|| model.features.clone(), <[String]>::to_vec);
                Ok(Self::Model { model, features })
            }
            (None, Some(col)) => Ok(Self::Column(col.to_owned())),
            _ => bail!("give exactly one of --model and --pred-col"),
        }
    }

    pub fn score(
        &self,
        path: &Path,
        group_col: &str,
        target_col: Option<&str>,
    ) -> Result<Vec<Scored>> {
        let columns = match self {
            Self::Model { features, .. } => features.clone(),
            Self::Column(col) => vec![col.clone()],
        };
        let loaded = load_csv(path, &columns, group_col, target_col)?;
        loaded
            .rows
            .into_iter()
            .map(|CsvRow { row, x, s, y }| {
                let score = match self {
                    Self::Model { model, .. } => model
                        .tree
                        .predict_sample(&x, &s)
                        .with_context(|| format!("{}: row {row}", path.display()))?,
                    Self::Column(_) => x[0],
                };
                Ok(Scored { row, s, score, y })
            })
            .collect()
    }
}

/// Inclusive ranges `a..b` and comma lists, e.g. `1..3,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a
                .trim()
                .parse()
                .with_context(|| format!("bad seed range `{part}`"))?;
            let b: u64 = b
                .trim()
                .parse()
                .with_context(|| format!("bad seed range `{part}`"))?;
            if b < a {
                bail!("empty seed range `{part}`");
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().with_context(|| format!("bad seed `{part}`"))?);
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

/// `ceil(n^(1/3))` rounded up to an odd number (so the grid contains 0), at least 3.
pub fn auto_grid_size(n: usize) -> usize {
    let mut k = (n as f64).cbrt().ceil() as usize;
    // guard against cbrt rounding just above an exact cube
    while k > 1 && (k - 1).pow(3) >= n {
        k -= 1;
    }
    let k = k.max(3);
    if k.is_multiple_of(2) {
        k + 1
    } else {
        k
    }
}
