//! Base regressors. Everything downstream consumes plain `(score, group)`
//! pairs, so the built-in tree can be swapped for any external model's
//! predictions.

mod external;
mod tree;

use serde::{Deserialize, Serialize};

pub use external::scores_from_file;
pub use tree::{Node, RegressionTree, TreeParams, TREE_FORMAT, TREE_VERSION};

use crate::spec::GroupId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub s: GroupId,
    pub y: f64,
}

/// Features and group only; calibration never sees labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSample {
    pub x: Vec<f64>,
    pub s: GroupId,
}

impl LabeledSample {
    pub fn without_label(&self) -> UnlabeledSample {
        UnlabeledSample {
            x: self.x.clone(),
            s: self.s.clone(),
        }
    }
}
