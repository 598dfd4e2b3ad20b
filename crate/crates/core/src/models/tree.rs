//! Regression trees (variance reduction), random forests and gradient boosting.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::rng::{stream, Domain, IndexDraw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Mean target of the training rows reaching this node.
    pub value: f64,
    /// Number of training rows (with bootstrap multiplicity) reaching it.
    pub cover: f64,
    pub split: Option<Split>,
}

/// A binary regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Tree {
            nodes: vec![TreeNode {
                value,
                cover,
                split: None,
            }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if x[s.feature] <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        self.nodes[i].value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    /// Features used by at least one split, ascending.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| n.split.as_ref().map(|s| s.feature))
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Cover-weighted mean leaf value: the prediction with no feature known.
    pub fn expected_value(&self) -> f64 {
        let leaves: Vec<&TreeNode> = self.nodes.iter().filter(|n| n.split.is_none()).collect();
        let total: f64 = leaves.iter().map(|n| n.cover).sum();
        leaves.iter().map(|n| n.value * n.cover).sum::<f64>() / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

struct Grower<'a, F: FnMut() -> Vec<usize>> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: TreeConfig,
    features: F,
    nodes: Vec<TreeNode>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    n_left: usize,
}

impl<F: FnMut() -> Vec<usize>> Grower<'_, F> {
    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            value: sum / n,
            cover: n,
            split: None,
        });
        if depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(rows, sum) else {
            return id;
        };
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| {
            self.x[a][best.feature]
                .total_cmp(&self.x[b][best.feature])
                .then(a.cmp(&b))
        });
        let (l, r) = sorted.split_at(best.n_left);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        });
        id
    }

    fn best_split(&mut self, rows: &[usize], sum: f64) -> Option<Best> {
        let n = rows.len();
        let parent = sum * sum / n as f64;
        let scale = rows.iter().map(|&i| self.y[i] * self.y[i]).sum::<f64>();
        let mut best: Option<Best> = None;
        let mut order = rows.to_vec();
        for f in (self.features)() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[order[k]];
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                let n_left = k + 1;
                if n_left < self.cfg.min_leaf || n - n_left < self.cfg.min_leaf || a >= b {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64
                    - parent;
                if gain > 1e-12 * scale.max(f64::MIN_POSITIVE)
                    && best.as_ref().is_none_or(|bs| gain > bs.gain)
                {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold,
                        n_left,
                    });
                }
            }
        }
        best
    }
}

/// Grows one CART tree on `rows` (indices into `x`/`y`, repeats allowed).
/// `features` supplies the candidate features, ascending, at each split.
pub fn grow_tree<F: FnMut() -> Vec<usize>>(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    cfg: TreeConfig,
    features: F,
) -> Tree {
    let mut g = Grower {
        x,
        y,
        cfg,
        features,
        nodes: Vec::new(),
    };
    g.grow(rows, 0);
    Tree { nodes: g.nodes }
}

fn check_tree_inputs(n: usize, cfg: TreeConfig) -> Result<()> {
    if cfg.max_depth == 0 {
        return Err(NowcastError::InvalidSpec("depth must be >= 1".into()));
    }
    if cfg.min_leaf == 0 {
        return Err(NowcastError::InvalidSpec("min_leaf must be >= 1".into()));
    }
    if cfg.min_leaf > n {
        return Err(NowcastError::InsufficientData(format!(
            "min_leaf {} exceeds {n} training rows",
            cfg.min_leaf
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub tree: TreeConfig,
    pub max_features: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<Tree>,
}

impl ForestParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Picks `m` of `p` features without replacement, returned ascending.
fn feature_subset(rng: &mut impl RngCore, p: usize, m: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..p).collect();
    if m >= p {
        return all;
    }
    for i in 0..m {
        let j = i + rng.uniform_index(p - i);
        all.swap(i, j);
    }
    let mut out = all[..m].to_vec();
    out.sort_unstable();
    out
}

pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: ForestConfig, seed: u64) -> Result<ForestParams> {
    let n = y.len();
    check_tree_inputs(n, cfg.tree)?;
    if cfg.trees == 0 {
        return Err(NowcastError::InvalidSpec("trees must be >= 1".into()));
    }
    let p = x.first().map_or(0, Vec::len);
    let m = cfg.max_features.clamp(1, p.max(1));
    let trees = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, Domain::Tree, t as u64);
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.uniform_index(n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(x, y, &rows, cfg.tree, || feature_subset(&mut rng, p, m))
        })
        .collect();
    Ok(ForestParams { trees })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    pub rounds: usize,
    pub tree: TreeConfig,
    pub learning_rate: f64,
    pub subsample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedParams {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// In-sample mean squared error after each round, starting with the
    /// constant initial model.
    pub train_loss: Vec<f64>,
}

impl BoostedParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.init, |acc, t| acc + self.learning_rate * t.predict(x))
    }
}

pub fn fit_boosted(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: BoostConfig,
    seed: u64,
) -> Result<BoostedParams> {
    let n = y.len();
    check_tree_inputs(n, cfg.tree)?;
    if cfg.rounds == 0 {
        return Err(NowcastError::InvalidSpec("trees must be >= 1".into()));
    }
    if !(cfg.learning_rate >= 0.0) {
        return Err(NowcastError::InvalidSpec(format!(
            "learning_rate must be >= 0, got {}",
            cfg.learning_rate
        )));
    }
    if !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) {
        return Err(NowcastError::InvalidSpec(format!(
            "subsample must lie in (0, 1], got {}",
            cfg.subsample
        )));
    }
    let p = x.first().map_or(0, Vec::len);
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let mse = |f: &[f64]| f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mse(&fitted)];
    let mut trees = Vec::with_capacity(cfg.rounds);
    let take = ((cfg.subsample * n as f64).round() as usize).clamp(cfg.tree.min_leaf, n);
    for m in 0..cfg.rounds {
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let rows: Vec<usize> = if take < n {
            let mut rng = stream(seed, Domain::Boost, m as u64);
            let mut all: Vec<usize> = (0..n).collect();
            for i in 0..take {
                let j = i + rng.uniform_index(n - i);
                all.swap(i, j);
            }
            let mut r = all[..take].to_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let tree = grow_tree(x, &resid, &rows, cfg.tree, || (0..p).collect());
        for (f, row) in fitted.iter_mut().zip(x) {
            *f += cfg.learning_rate * tree.predict(row);
        }
        train_loss.push(mse(&fitted));
        trees.push(tree);
    }
    Ok(BoostedParams {
        init,
        learning_rate: cfg.learning_rate,
        trees,
        train_loss,
    })
}
