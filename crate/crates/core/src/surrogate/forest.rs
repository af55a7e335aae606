//! Random-forest regression over feature vectors.
//!
//! Each tree is a CART regressor grown on a bootstrap resample. Every feature is
//! considered at every split; the split maximizing variance reduction wins, ties
//! going to the lower feature index and then the lower threshold. Sums are
//! accumulated in (value, target) order so a tree depends only on the multiset
//! of its bootstrap rows, not on their order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::features::FeatureVector;

pub const FOREST_FORMAT: &str = "gramnas-forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub version: u32,
    pub schema: Vec<String>,
    pub seed: u64,
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub trees: Vec<RegressionTree>,
}

/// Column-major training matrix.
struct Columns<'a> {
    cols: Vec<Vec<f64>>,
    targets: &'a [f64],
    /// Features that take more than one value; the others can never split.
    active: Vec<usize>,
    /// For each active feature, row indices ordered by (value, target).
    order: Vec<Vec<usize>>,
}

impl<'a> Columns<'a> {
    fn new(cols: Vec<Vec<f64>>, targets: &'a [f64]) -> Self {
        let active: Vec<usize> = (0..cols.len())
            .filter(|&f| cols[f].iter().any(|v| *v != cols[f][0]))
            .collect();
        let order = active
            .iter()
            .map(|&f| {
                let mut o: Vec<usize> = (0..targets.len()).collect();
                o.sort_by(|&a, &b| {
                    cols[f][a]
                        .total_cmp(&cols[f][b])
                        .then(targets[a].total_cmp(&targets[b]))
                });
                o
            })
            .collect();
        Columns {
            cols,
            targets,
            active,
            order,
        }
    }
}

/// Grows one tree. Bootstrap rows are laid out as positions grouped by source
/// row, and every per-feature list is a permutation of those positions.
struct TreeBuilder {
    min_leaf: usize,
    /// Original feature index of each active column.
    features: Vec<usize>,
    /// `xs[j][pos]`: value of active column `j` at a bootstrap position.
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    /// `sorted[j]` holds positions ordered by (column j, target); a node owns
    /// the same contiguous range in every list.
    sorted: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    column: usize,
    threshold: f64,
    score: f64,
    n_left: usize,
}

impl TreeBuilder {
    fn new(data: &Columns<'_>, bootstrap: &[usize], min_leaf: usize) -> Self {
        let n_rows = data.targets.len();
        let mut counts = vec![0u32; n_rows];
        for &r in bootstrap {
            counts[r] += 1;
        }
        // position range of each source row
        let mut start = vec![0u32; n_rows + 1];
        for r in 0..n_rows {
            start[r + 1] = start[r] + counts[r];
        }
        let n = bootstrap.len();
        let mut row_of = Vec::with_capacity(n);
        for (r, &c) in counts.iter().enumerate() {
            row_of.extend(std::iter::repeat_n(r, c as usize));
        }
        let xs = data
            .active
            .iter()
            .map(|&f| row_of.iter().map(|&r| data.cols[f][r]).collect())
            .collect();
        let ys: Vec<f64> = row_of.iter().map(|&r| data.targets[r]).collect();
        let expand = |order: &[usize]| -> Vec<u32> {
            let mut out = Vec::with_capacity(n);
            for &r in order {
                out.extend(start[r]..start[r + 1]);
            }
            out
        };
        let mut sorted: Vec<Vec<u32>> = data.order.iter().map(|o| expand(o)).collect();
        if sorted.is_empty() {
            let mut by_target: Vec<u32> = (0..n as u32).collect();
            by_target.sort_by(|&a, &b| ys[a as usize].total_cmp(&ys[b as usize]));
            sorted.push(by_target);
        }
        TreeBuilder {
            min_leaf: min_leaf.max(1),
            features: data.active.clone(),
            xs,
            ys,
            sorted,
            go_left: vec![false; n],
            scratch: Vec::with_capacity(n),
            nodes: Vec::new(),
        }
    }

    fn leaf(&mut self, lo: usize, hi: usize) -> usize {
        let value = mean(self.sorted[0][lo..hi].iter().map(|&p| self.ys[p as usize]));
        self.nodes.push(TreeNode::Leaf {
            value,
            samples: hi - lo,
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, lo: usize, hi: usize) -> Option<BestSplit> {
        let n = hi - lo;
        let total: f64 = self.sorted[0][lo..hi].iter().map(|&p| self.ys[p as usize]).sum();
        let mut best: Option<BestSplit> = None;
        for (j, xs) in self.xs.iter().enumerate() {
            let order = &self.sorted[j][lo..hi];
            if xs[order[0] as usize] == xs[order[n - 1] as usize] {
                continue;
            }
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.ys[order[i] as usize];
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf {
                    continue;
                }
                if n_right < self.min_leaf {
                    break;
                }
                let (a, b) = (xs[order[i] as usize], xs[order[i + 1] as usize]);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit {
                        column: j,
                        threshold,
                        score,
                        n_left,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, lo: usize, hi: usize) -> usize {
        let n = hi - lo;
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &p in &self.sorted[0][lo..hi] {
            let y = self.ys[p as usize];
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        if ymin == ymax || n < 2 * self.min_leaf || self.xs.is_empty() {
            return self.leaf(lo, hi);
        }
        let Some(split) = self.best_split(lo, hi) else {
            return self.leaf(lo, hi);
        };
        let xs = &self.xs[split.column];
        for &p in &self.sorted[split.column][lo..hi] {
            self.go_left[p as usize] = xs[p as usize] <= split.threshold;
        }
        for list in &mut self.sorted {
            self.scratch.clear();
            let range = &mut list[lo..hi];
            let mut w = 0;
            for i in 0..range.len() {
                let p = range[i];
                if self.go_left[p as usize] {
                    range[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            range[w..].copy_from_slice(&self.scratch);
            debug_assert_eq!(w, split.n_left);
        }
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0, samples: n });
        let mid = lo + split.n_left;
        let left = self.grow(lo, mid);
        let right = self.grow(mid, hi);
        self.nodes[id] = TreeNode::Split {
            feature: self.features[split.column],
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(data: &Columns<'_>, bootstrap: &[usize], min_leaf: usize) -> RegressionTree {
    let mut b = TreeBuilder::new(data, bootstrap, min_leaf);
    b.grow(0, bootstrap.len());
    RegressionTree { nodes: b.nodes }
}

fn columns<'a>(rows: &[FeatureVector], targets: &'a [f64]) -> Result<(Columns<'a>, Vec<String>), SurrogateError> {
    if rows.len() != targets.len() {
        return Err(SurrogateError::InvalidData(format!(
            "{} rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    if rows.len() < 2 {
        return Err(SurrogateError::InvalidData(format!(
            "need at least 2 rows, got {}",
            rows.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(SurrogateError::InvalidData(format!("non-finite target {t}")));
    }
    let schema = rows[0].schema.as_ref().clone();
    if let Some(bad) = rows.iter().find(|r| r.schema.as_ref() != &schema) {
        return Err(SurrogateError::SchemaMismatch {
            expected: schema.len(),
            found: bad.schema.len(),
        });
    }
    let cols = (0..schema.len())
        .map(|f| rows.iter().map(|r| r.values[f]).collect())
        .collect();
    Ok((Columns::new(cols, targets), schema))
}

/// Arithmetic mean that returns the common value exactly when all inputs are equal.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        sum += v;
        n += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        lo
    } else {
        (sum / n as f64).clamp(lo, hi)
    }
}

/// Draws one bootstrap resample (same size, with replacement) per tree.
pub fn draw_bootstraps(n_rows: usize, n_trees: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_trees)
        .map(|_| (0..n_rows).map(|_| rng.random_range(0..n_rows)).collect())
        .collect()
}

/// Fits a forest; the bootstrap draws are a function of `seed` and the row count only.
pub fn fit_forest(
    rows: &[FeatureVector],
    targets: &[f64],
    params: ForestParams,
    seed: u64,
) -> Result<ForestModel, SurrogateError> {
    if params.n_trees == 0 {
        return Err(SurrogateError::InvalidData("n_trees must be positive".into()));
    }
    let bootstraps = draw_bootstraps(rows.len(), params.n_trees, seed);
    fit_forest_with_bootstraps(rows, targets, params, seed, bootstraps)
}

/// Fits one tree per supplied bootstrap index list.
pub fn fit_forest_with_bootstraps(
    rows: &[FeatureVector],
    targets: &[f64],
    params: ForestParams,
    seed: u64,
    bootstraps: Vec<Vec<usize>>,
) -> Result<ForestModel, SurrogateError> {
    let (data, schema) = columns(rows, targets)?;
    if bootstraps.iter().flatten().any(|&i| i >= rows.len()) {
        return Err(SurrogateError::InvalidData("bootstrap index out of range".into()));
    }
    let trees: Vec<RegressionTree> = bootstraps
        .into_par_iter()
        .map(|b| fit_tree(&data, &b, params.min_samples_leaf))
        .collect();
    Ok(ForestModel {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        schema,
        seed,
        n_trees: trees.len(),
        min_samples_leaf: params.min_samples_leaf,
        trees,
    })
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        mean(self.trees.iter().map(|t| t.predict_row(row)))
    }

    pub fn predict(&self, inputs: &[FeatureVector]) -> Result<Vec<f64>, SurrogateError> {
        inputs
            .iter()
            .map(|x| {
                if x.schema.as_ref() != &self.schema {
                    return Err(SurrogateError::SchemaMismatch {
                        expected: self.schema.len(),
                        found: x.schema.len(),
                    });
                }
                Ok(self.predict_row(&x.values))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SurrogateError> {
        let model: ForestModel =
            serde_json::from_str(text).map_err(|e| SurrogateError::InvalidData(format!("model file: {e}")))?;
        if model.format != FOREST_FORMAT || model.version != FOREST_VERSION {
            return Err(SurrogateError::InvalidData(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }
}
