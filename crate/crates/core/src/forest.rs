//! Random forest baseline: bootstrap-sampled CART trees with Gini splits and
//! majority voting.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{streams, substream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training data contains a single class")]
    SingleClassInput,
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} feature rows but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` means `floor(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn features_for(&self, d: usize) -> Result<usize, ForestError> {
        let m = self
            .features_per_split
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if m == 0 || m > d {
            return Err(ForestError::InvalidConfig(format!(
                "features_per_split {m} outside [1, {d}]"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: u8,
        counts: [usize; 2],
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { label, .. } => return label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub dim: usize,
    pub trees: Vec<Tree>,
}

fn gini(c: [usize; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = c[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

fn majority(c: [usize; 2]) -> u8 {
    u8::from(c[1] > c[0])
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    m: usize,
    rng: R,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let mut c = [0, 0];
        for &r in rows {
            c[usize::from(self.y[r] != 0)] += 1;
        }
        c
    }

    /// Lowest weighted Gini split on `feature`, if the feature is not constant.
    fn best_on(&self, rows: &mut [usize], feature: usize, total: [usize; 2]) -> Option<Candidate> {
        let x = self.x;
        rows.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
        let n = rows.len() as f64;
        let mut left = [0usize, 0];
        let mut best: Option<Candidate> = None;
        for i in 0..rows.len() - 1 {
            left[usize::from(self.y[rows[i]] != 0)] += 1;
            let (a, b) = (x[rows[i]][feature], x[rows[i + 1]][feature]);
            if a == b {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let nl = (i + 1) as f64;
            let score = (nl * gini(left) + (n - nl) * gini(right)) / n;
            if best.is_none_or(|c| score < c.score) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                best = Some(Candidate {
                    score,
                    feature,
                    threshold,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let counts = self.counts(rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            label: majority(counts),
            counts,
        });
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || rows.len() < self.cfg.min_samples_split || self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        // Draw features in random order; past the first `m`, keep going only
        // until some feature yields a valid split.
        let mut best: Option<Candidate> = None;
        for (k, &f) in order.iter().enumerate() {
            if k >= self.m && best.is_some() {
                break;
            }
            if let Some(c) = self.best_on(rows, f, counts) {
                if best.is_none_or(|b| c.score < b.score) {
                    best = Some(c);
                }
            }
        }
        let Some(c) = best else {
            return id;
        };
        let x = self.x;
        rows.sort_by_key(|&r| x[r][c.feature] > c.threshold);
        let n_left = rows.iter().filter(|&&r| x[r][c.feature] <= c.threshold).count();
        let (l, r) = rows.split_at_mut(n_left);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        };
        id
    }
}

fn validate(x: &[Vec<f64>], y: &[u8]) -> Result<usize, ForestError> {
    if x.len() != y.len() {
        return Err(ForestError::LengthMismatch(x.len(), y.len()));
    }
    let d = x.first().map_or(0, Vec::len);
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(ForestError::DimensionMismatch {
            expected: d,
            found: row.len(),
        });
    }
    let ones = y.iter().filter(|&&v| v != 0).count();
    if ones == 0 || ones == y.len() {
        return Err(ForestError::SingleClassInput);
    }
    Ok(d)
}

/// Fits one tree on the given rows (duplicates allowed).
fn fit_tree<R: Rng>(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig, m: usize, rng: R, mut rows: Vec<usize>) -> Tree {
    let mut b = Builder {
        x,
        y,
        cfg,
        m,
        rng,
        nodes: Vec::new(),
    };
    b.grow(&mut rows, 0);
    Tree { nodes: b.nodes }
}

pub fn train_forest(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig) -> Result<Forest, ForestError> {
    let d = validate(x, y)?;
    let m = cfg.features_for(d)?;
    let n = x.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, streams::FOREST + i as u64);
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, y, cfg, m, rng, rows)
        })
        .collect();
    Ok(Forest { dim: d, trees })
}

impl Forest {
    /// Majority vote; ties go to label 0. The probability is the fraction of
    /// trees voting 1.
    pub fn predict(&self, x: &[f64]) -> Result<(u8, f64), ForestError> {
        if x.len() != self.dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let ones = self.trees.iter().filter(|t| t.predict(x) == 1).count();
        let n = self.trees.len();
        Ok((u8::from(2 * ones > n), ones as f64 / n as f64))
    }

    pub fn predict_proba(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, ForestError> {
        xs.iter().map(|x| self.predict(x).map(|(_, p)| p)).collect()
    }
}

pub fn predict_forest(forest: &Forest, x: &[f64]) -> Result<(u8, f64), ForestError> {
    forest.predict(x)
}
