use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledSample;
use crate::error::{invalid, Error, Result};
use crate::spec::GroupId;

pub const TREE_FORMAT: &str = "threshfair-tree";
pub const TREE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_samples_leaf: 20,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        parent: Option<usize>,
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        parent: Option<usize>,
        value: f64,
        samples: usize,
    },
}

/// CART regression tree grown greedily on squared loss. `x[j] <= threshold`
/// routes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    format: String,
    version: u32,
    n_features: usize,
    params: TreeParams,
    nodes: Vec<Node>,
    /// Sorted groups when the group enters as indicator features, one per
    /// group after the first, appended to `x`. Empty for feature-only trees.
    #[serde(default)]
    group_levels: Vec<GroupId>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    data: &'a [LabeledSample],
    params: TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.data[i].y).sum::<f64>() / idx.len() as f64
    }

    fn best_split(&self, idx: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let first = self.data[idx[0]].y;
        if idx.iter().all(|&i| self.data[i].y == first) {
            return None;
        }
        // centered targets keep the SSE arithmetic well conditioned
        let mean = self.mean(idx);
        let total: f64 = idx.iter().map(|&i| self.data[i].y - mean).sum();
        let total_sq: f64 = idx.iter().map(|&i| (self.data[i].y - mean).powi(2)).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let mut best: Option<BestSplit> = None;

        let d = self.data[idx[0]].x.len();
        let mut order = idx.to_vec();
        for feature in 0..d {
            order.sort_by(|&a, &b| self.data[a].x[feature].total_cmp(&self.data[b].x[feature]));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for pos in 1..n {
                let y = self.data[order[pos - 1]].y - mean;
                left_sum += y;
                left_sq += y * y;
                if pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let lo = self.data[order[pos - 1]].x[feature];
                let hi = self.data[order[pos]].x[feature];
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / pos as f64)
                    + (right_sq - right_sum * right_sum / (n - pos) as f64);
                let gain = parent_sse - sse;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent_sse.max(f64::MIN_POSITIVE))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        let split = if depth_ok {
            self.best_split(&idx)
        } else {
            None
        };
        match split {
            None => {
                let value = self.mean(&idx);
                self.nodes.push(Node::Leaf {
                    parent,
                    value,
                    samples: idx.len(),
                });
            }
            Some(b) => {
                self.nodes.push(Node::Split {
                    parent,
                    feature: b.feature,
                    threshold: b.threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                });
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| self.data[i].x[b.feature] <= b.threshold);
                let left = self.grow(l, depth + 1, Some(id));
                let right = self.grow(r, depth + 1, Some(id));
                if let Node::Split {
                    left: lslot,
                    right: rslot,
                    ..
                } = &mut self.nodes[id]
                {
                    *lslot = left;
                    *rslot = right;
                }
            }
        }
        id
    }
}

fn encode(levels: &[GroupId], x: &[f64], s: &GroupId) -> Vec<f64> {
    let mut out = x.to_vec();
    out.extend(
        levels
            .iter()
            .skip(1)
            .map(|g| if g == s { 1.0 } else { 0.0 }),
    );
    out
}

impl RegressionTree {
    pub fn fit(data: &[LabeledSample], params: TreeParams) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("cannot fit a tree on an empty dataset"));
        }
        let d = data[0].x.len();
        if d == 0 {
            return Err(invalid("samples need at least one feature"));
        }
        if let Some((i, _)) = data.iter().enumerate().find(|(_, s)| s.x.len() != d) {
            return Err(invalid(format!(
                "sample {i} has {} features, expected {d}",
                data[i].x.len()
            )));
        }
        if let Some((i, _)) = data
            .iter()
            .enumerate()
            .find(|(_, s)| !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()))
        {
            return Err(invalid(format!("sample {i} has a non-finite value")));
        }
        let mut builder = Builder {
            data,
            params,
            nodes: Vec::new(),
        };
        builder.grow((0..data.len()).collect(), 0, None);
        Ok(Self {
            format: TREE_FORMAT.to_owned(),
            version: TREE_VERSION,
            n_features: d,
            params,
            nodes: builder.nodes,
            group_levels: Vec::new(),
        })
    }

    /// Fits on the features plus group indicators, so predictions depend on
    /// `(x, s)`.
    pub fn fit_with_groups(data: &[LabeledSample], params: TreeParams) -> Result<Self> {
        let mut levels: Vec<GroupId> = data.iter().map(|s| s.s.clone()).collect();
        levels.sort();
        levels.dedup();
        let augmented: Vec<LabeledSample> = data
            .iter()
            .map(|s| LabeledSample {
                x: encode(&levels, &s.x, &s.s),
                s: s.s.clone(),
                y: s.y,
            })
            .collect();
        let mut tree = Self::fit(&augmented, params)?;
        tree.group_levels = levels;
        Ok(tree)
    }

    /// Number of raw features expected by the model (group indicators excluded).
    pub fn n_features(&self) -> usize {
        self.n_features + 1 - self.group_levels.len().max(1)
    }

    /// Groups seen in training when the tree is group-aware.
    pub fn group_levels(&self) -> &[GroupId] {
        &self.group_levels
    }

    /// Prediction for a sample; the group is ignored by feature-only trees.
    pub fn predict_sample(&self, x: &[f64], s: &GroupId) -> Result<f64> {
        if self.group_levels.is_empty() {
            return self.predict(x);
        }
        if !self.group_levels.contains(s) {
            return Err(Error::UnknownGroup(s.to_string()));
        }
        if x.len() != self.n_features() {
            return Err(invalid(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        self.route(&encode(&self.group_levels, x, s))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Prediction for a feature-only tree.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if !self.group_levels.is_empty() {
            return Err(invalid(
                "this tree uses the group as a feature; call predict_sample",
            ));
        }
        if x.len() != self.n_features {
            return Err(invalid(format!(
                "feature vector has {} entries, tree expects {}",
                x.len(),
                self.n_features
            )));
        }
        self.route(x)
    }

    fn route(&self, x: &[f64]) -> Result<f64> {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return Ok(*value),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    /// Sum of squared training residuals.
    pub fn sse(&self, data: &[LabeledSample]) -> Result<f64> {
        data.iter()
            .map(|s| self.predict_sample(&s.x, &s.s).map(|p| (p - s.y).powi(2)))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(text)?;
        if tree.format != TREE_FORMAT || tree.version != TREE_VERSION {
            return Err(Error::Format(format!(
                "expected {TREE_FORMAT} v{TREE_VERSION}, found {} v{}",
                tree.format, tree.version
            )));
        }
        tree.check_links()?;
        Ok(tree)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_links(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::Format("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                if *feature >= self.n_features
                    || *left <= i
                    || *right <= i
                    || *left >= n
                    || *right >= n
                {
                    return Err(Error::Format(format!("node {i} has invalid links")));
                }
            }
        }
        Ok(())
    }
}
