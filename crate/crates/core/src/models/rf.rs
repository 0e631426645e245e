//! Random forest classifier: bagged CART trees with Gini splits, grown from
//! scratch so that every tie-break and threshold is pinned down exactly.
//!
//! Determinism contract: a forest is a pure function of (data, config). Trees
//! are seeded per index, so parallel training yields the same model as serial.

use crate::error::{Error, Result};
use crate::models::{mix_seed, GridScore};
use crate::query::GridSearchSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestConfig {
    pub n_estimators: usize,
    /// Maximum tree height; a node at this depth becomes a leaf.
    pub max_depth: usize,
    /// Candidate features examined per split. `None` resolves to
    /// ceil(sqrt(F)) at train time.
    pub features_per_split: Option<usize>,
    /// Sample N rows with replacement per tree (on by default).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        RandomForestConfig {
            n_estimators: 100,
            max_depth: 10,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Grid explored when a training query does not pin one down.
pub fn default_grid() -> GridSearchSpec {
    GridSearchSpec {
        n_estimators: vec![50, 100, 200],
        max_depth: vec![5, 10, 15, 20],
    }
}

/// Flat tree node. Internal: `feature >= 0`, branch left when
/// `x[feature] <= threshold`. Leaf: `feature == -1`, `threshold` holds the
/// class index. Thresholds are f32 so the serialized model predicts
/// identically to the in-memory one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub feature: i32,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
}

impl TreeNode {
    fn leaf(class: usize) -> Self {
        TreeNode {
            feature: -1,
            threshold: class as f32,
            left: 0,
            right: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut i = 0usize;
        loop {
            let n = self.nodes[i];
            if n.feature < 0 {
                return n.threshold as usize;
            }
            i = if row[n.feature as usize] <= n.threshold as f64 {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub config: RandomForestConfig,
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForestModel {
    /// Per-class vote fractions for one row.
    pub fn vote_row(&self, row: &[f64]) -> Vec<f64> {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(row)] += 1;
        }
        let n = self.trees.len() as f64;
        votes.into_iter().map(|v| v as f64 / n).collect()
    }
}

pub(crate) fn resolved_mtry(requested: Option<usize>, n_features: usize) -> usize {
    requested
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .clamp(1, n_features)
}

/// Choose an f32 threshold t with a <= t < b (comparisons in f64), snapped to
/// the left value a rather than the midpoint: routing `v <= t` then agrees
/// with `v <= a` away from f32 rounding range, so strictly monotone warps of
/// a feature leave predictions unchanged (T(v) <= T(a) exactly when v <= a),
/// and the split partitions identically before and after serialization.
/// Returns None when a and b are too close for f32 to separate; that
/// candidate is skipped.
fn snap_threshold(a: f64, b: f64) -> Option<f32> {
    let mut t = a as f32;
    for _ in 0..4 {
        if (t as f64) >= a {
            break;
        }
        t = t.next_up();
    }
    if !t.is_finite() || (t as f64) >= b || (t as f64) < a {
        None
    } else {
        Some(t)
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_features: usize,
    mtry: usize,
    max_depth: usize,
    nodes: Vec<TreeNode>,
    rng: ChaCha8Rng,
}

impl TreeBuilder<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        counts
    }

    fn majority(counts: &[u64]) -> usize {
        let mut best = 0usize;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best
    }

    /// mtry distinct feature indices, ascending so equal-score ties resolve
    /// to the lowest feature index.
    fn sample_features(&mut self) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..self.n_features).collect();
        for i in 0..self.mtry {
            let j = self.rng.gen_range(i..self.n_features);
            pool.swap(i, j);
        }
        let mut picked = pool[..self.mtry].to_vec();
        picked.sort_unstable();
        picked
    }

    /// Weighted Gini numerator over both children, computed from integer
    /// class counts: nL - sumL2/nL + nR - sumR2/nR, lower is better. Integer
    /// count arithmetic keeps equal splits exactly equal, so tie-breaks fire.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f32)> {
        let n = idx.len();
        let total_counts = self.class_counts(idx);
        let features = self.sample_features();
        let mut best: Option<(f64, usize, f32)> = None;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for f in features {
            order.clear();
            order.extend_from_slice(idx);
            order.sort_unstable_by(|&a, &b| self.x[a][f].partial_cmp(&self.x[b][f]).unwrap());
            let mut left_counts = vec![0u64; self.n_classes];
            let mut sum_l2 = 0u64;
            // sum of squared counts on the right starts as the whole node
            let mut sum_r2: u64 = total_counts.iter().map(|&c| c * c).sum();
            let mut right_counts = total_counts.clone();
            for p in 1..n {
                let moved = self.y[order[p - 1]];
                sum_l2 += 2 * left_counts[moved] + 1;
                sum_r2 -= 2 * right_counts[moved] - 1;
                left_counts[moved] += 1;
                right_counts[moved] -= 1;
                let a = self.x[order[p - 1]][f];
                let b = self.x[order[p]][f];
                if a >= b {
                    continue;
                }
                let Some(thr) = snap_threshold(a, b) else {
                    continue;
                };
                let nl = p as f64;
                let nr = (n - p) as f64;
                let score = nl - sum_l2 as f64 / nl + nr - sum_r2 as f64 / nr;
                if best.map_or(true, |(s, _, _)| score < s) {
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> u32 {
        let slot = self.nodes.len() as u32;
        self.nodes.push(TreeNode::leaf(0));
        let counts = self.class_counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || idx.len() < 2 {
            self.nodes[slot as usize] = TreeNode::leaf(Self::majority(&counts));
            return slot;
        }
        let Some((feature, threshold)) = self.best_split(idx) else {
            self.nodes[slot as usize] = TreeNode::leaf(Self::majority(&counts));
            return slot;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .copied()
            .partition(|&i| self.x[i][feature] <= threshold as f64);
        debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());
        let left = self.grow(&left_idx, depth + 1);
        let right = self.grow(&right_idx, depth + 1);
        self.nodes[slot as usize] = TreeNode {
            feature: feature as i32,
            threshold,
            left,
            right,
        };
        slot
    }
}

fn train_tree(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    mtry: usize,
    config: &RandomForestConfig,
    seed: u64,
) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let idx: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = TreeBuilder {
        x,
        y,
        n_classes,
        n_features: x[0].len(),
        mtry,
        max_depth: config.max_depth,
        nodes: Vec::new(),
        rng,
    };
    builder.grow(&idx, 0);
    // node indices are stored as f32 in the serialized form
    assert!(builder.nodes.len() < (1 << 24), "tree too large");
    DecisionTree {
        nodes: builder.nodes,
    }
}

pub fn rf_train(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    config: &RandomForestConfig,
) -> Result<RandomForestModel> {
    if x.is_empty() {
        return Err(Error::DegenerateTraining("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} labels",
            x.len(),
            y.len()
        )));
    }
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(Error::DegenerateTraining("zero-width feature rows".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != n_features {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} features, expected {n_features}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateTraining(format!(
                "non-finite feature value in row {i}"
            )));
        }
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    if config.n_estimators == 0 {
        return Err(Error::DegenerateTraining("n_estimators must be > 0".into()));
    }
    let mtry = resolved_mtry(config.features_per_split, n_features);
    let trees: Vec<DecisionTree> = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| train_tree(x, y, n_classes, mtry, config, mix_seed(config.seed, t as u64)))
        .collect();
    Ok(RandomForestModel {
        config: config.clone(),
        n_classes,
        n_features,
        trees,
    })
}

pub fn rf_predict(model: &RandomForestModel, x: &[Vec<f64>]) -> Result<Vec<usize>> {
    Ok(rf_predict_with_votes(model, x)?.0)
}

/// Predicted class per row plus per-class vote fractions. Vote ties go to the
/// lowest class index.
pub fn rf_predict_with_votes(
    model: &RandomForestModel,
    x: &[Vec<f64>],
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    for (i, row) in x.iter().enumerate() {
        if row.len() != model.n_features {
            return Err(Error::FeatureDimMismatch {
                expected: model.n_features,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "non-finite feature value in row {i}"
            )));
        }
    }
    let votes: Vec<Vec<f64>> = x.par_iter().map(|row| model.vote_row(row)).collect();
    let classes = votes
        .iter()
        .map(|v| {
            let mut best = 0usize;
            for (c, &share) in v.iter().enumerate() {
                if share > v[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok((classes, votes))
}

fn val_accuracy(model: &RandomForestModel, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    let preds = rf_predict(model, x)?;
    let hits = preds.iter().zip(y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Train every (n_estimators, max_depth) cell, score on the validation split,
/// and return the winning config plus the full score table. Equal scores
/// resolve to smaller n_estimators, then smaller max_depth.
pub fn rf_grid_search(
    x_train: &[Vec<f64>],
    y_train: &[usize],
    x_val: &[Vec<f64>],
    y_val: &[usize],
    n_classes: usize,
    base: &RandomForestConfig,
    grid: &GridSearchSpec,
) -> Result<(RandomForestConfig, Vec<GridScore>)> {
    if x_val.is_empty() {
        return Err(Error::DegenerateTraining(
            "grid search needs a non-empty validation set".into(),
        ));
    }
    if x_val.len() != y_val.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} validation rows for {} labels",
            x_val.len(),
            y_val.len()
        )));
    }
    if grid.n_estimators.is_empty() || grid.max_depth.is_empty() {
        return Err(Error::DegenerateTraining("empty grid axis".into()));
    }
    let mut n_axis = grid.n_estimators.clone();
    let mut d_axis = grid.max_depth.clone();
    n_axis.sort_unstable();
    n_axis.dedup();
    d_axis.sort_unstable();
    d_axis.dedup();

    let mut scores = Vec::with_capacity(n_axis.len() * d_axis.len());
    let mut best: Option<(f64, usize, usize)> = None;
    for &n_estimators in &n_axis {
        for &max_depth in &d_axis {
            let config = RandomForestConfig {
                n_estimators,
                max_depth,
                ..base.clone()
            };
            let model = rf_train(x_train, y_train, n_classes, &config)?;
            let acc = val_accuracy(&model, x_val, y_val)?;
            scores.push(GridScore {
                n_estimators,
                max_depth,
                val_accuracy: acc,
            });
            // ascending iteration order makes strict > implement the tie-break
            if best.map_or(true, |(s, _, _)| acc > s) {
                best = Some((acc, n_estimators, max_depth));
            }
        }
    }
    let (_, n_estimators, max_depth) = best.unwrap();
    Ok((
        RandomForestConfig {
            n_estimators,
            max_depth,
            ..base.clone()
        },
        scores,
    ))
}

#[cfg(test)]
mod tests;
