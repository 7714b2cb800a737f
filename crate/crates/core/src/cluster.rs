//! K-means with k-means++ seeding, elbow and silhouette curves, and choice
//! of the cluster count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{streams, substream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("{n} points cannot form {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("points have inconsistent dimensionality")]
    DimensionMismatch,
    #[error("{0} ids for {1} points")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    /// WCSS after each assignment step of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<(), ClusterError> {
    if k == 0 || points.len() < k {
        return Err(ClusterError::TooFewPoints { n: points.len(), k });
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(ClusterError::DimensionMismatch);
    }
    Ok(())
}

/// k-means++ seeding from a given first seed: each further seed is drawn with
/// probability proportional to squared distance from the chosen ones.
fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, first: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (v, p) in d2.iter_mut().zip(points) {
            *v = v.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centroids)).unzip()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, opts: &KMeansOptions) -> KMeansResult {
    let k = centroids.len();
    let d = points[0].len();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (labels, dists) = assign(points, &centroids);
        trace.push(dists.iter().sum());
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut taken = vec![false; points.len()];
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            if counts[j] > 0 {
                next.push(sums[j].iter().map(|s| s / counts[j] as f64).collect::<Vec<f64>>());
            } else {
                // Re-seed at the point farthest from its own centroid.
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                next.push(points[far].clone());
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < opts.tol || iterations >= opts.max_iter {
            break;
        }
    }
    let (mut assignments, _) = assign(points, &centroids);
    hartigan(points, &mut assignments, &mut centroids);
    let wcss: f64 = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    if trace.last().is_none_or(|&t| wcss < t) {
        trace.push(wcss);
    }
    KMeansResult {
        assignments,
        centroids,
        wcss,
        trace,
        iterations,
    }
}

/// Single-point transfers that lower WCSS once centroids are updated
/// exactly. Every Lloyd fixed point that admits such a move is escaped; the
/// loop stops when no point can move.
fn hartigan(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    // Bounded so floating-point ties cannot cycle.
    for _ in 0..100 * points.len() {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = labels[i];
            let nf = counts[from] as f64;
            if counts[from] <= 1 {
                continue;
            }
            let removal = nf / (nf - 1.0) * sq_dist(p, &centroids[from]);
            let mut best = (from, removal);
            for (j, c) in centroids.iter().enumerate() {
                if j != from {
                    let nj = counts[j] as f64;
                    let add = nj / (nj + 1.0) * sq_dist(p, c);
                    if add < best.1 * (1.0 - 1e-12) {
                        best = (j, add);
                    }
                }
            }
            let to = best.0;
            if to == from {
                continue;
            }
            let (nf, nt) = (counts[from] as f64, counts[to] as f64);
            for (c, v) in centroids[from].iter_mut().zip(p) {
                *c = (*c * nf - v) / (nf - 1.0);
            }
            for (c, v) in centroids[to].iter_mut().zip(p) {
                *c = (*c * nt + v) / (nt + 1.0);
            }
            counts[from] -= 1;
            counts[to] += 1;
            labels[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
    }
    // Recompute means from scratch to drop incremental rounding.
    let d = points[0].len();
    for (j, c) in centroids.iter_mut().enumerate() {
        if counts[j] == 0 {
            continue;
        }
        let mut sum = vec![0.0; d];
        for (p, _) in points.iter().zip(labels.iter()).filter(|(_, &l)| l == j) {
            sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        *c = sum.into_iter().map(|s| s / counts[j] as f64).collect();
    }
}

/// Best of `opts.restarts` k-means++ / Lloyd runs by WCSS. Restart `r` for a
/// given `k` draws from its own substream, so the result does not depend on
/// thread scheduling.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeansResult, ClusterError> {
    check_points(points, k)?;
    let base = streams::KMEANS + ((k as u64) << 16);
    // First seeds are drawn without replacement across restarts, cycling
    // once every point has been used.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut substream(seed, base + 0xffff));
    let runs: Vec<KMeansResult> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, base + r as u64);
            let init = kmeans_pp(points, k, order[r % order.len()], &mut rng);
            lloyd(points, init, opts)
        })
        .collect();
    let mut best = None::<KMeansResult>;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `(k, wcss)` for each `k` in the range.
pub fn elbow_curve(
    points: &[Vec<f64>],
    ks: std::ops::RangeInclusive<usize>,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    check_points(points, *ks.end())?;
    ks.map(|k| kmeans(points, k, seed, opts).map(|r| (k, r.wcss)))
        .collect()
}

/// Mean silhouette coefficient with Euclidean distance. Points alone in their
/// cluster score 0, as do points with `a = b = 0`.
pub fn silhouette_mean(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64, ClusterError> {
    if points.len() != assignments.len() {
        return Err(ClusterError::LengthMismatch(assignments.len(), points.len()));
    }
    let k = assignments.iter().max().map_or(0, |&m| m + 1);
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(ClusterError::EmptyCluster(j));
    }
    let n = points.len();
    let s: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[assignments[j]] += sq_dist(&points[i], p).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(s.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k_selected: usize,
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss_curve: Vec<(usize, f64)>,
    pub silhouette_curve: Vec<(usize, f64)>,
    pub cluster_counts: Vec<usize>,
}

pub const ELBOW_RANGE: std::ops::RangeInclusive<usize> = 1..=10;
pub const SILHOUETTE_RANGE: std::ops::RangeInclusive<usize> = 2..=10;

/// Runs k-means for every `k` in 1..=10, picks the `k` in 2..=10 with the
/// highest mean silhouette (ties to the smaller `k`) and reports that
/// clustering. Both ranges are clipped to the number of points.
pub fn select_k(points: &[Vec<f64>], ids: &[String], seed: u64, opts: &KMeansOptions) -> Result<ClusterReport, ClusterError> {
    if ids.len() != points.len() {
        return Err(ClusterError::LengthMismatch(ids.len(), points.len()));
    }
    check_points(points, 2)?;
    let k_max = (*SILHOUETTE_RANGE.end()).min(points.len());
    let runs: Vec<KMeansResult> = (1..=k_max)
        .map(|k| kmeans(points, k, seed, opts))
        .collect::<Result<_, _>>()?;
    let wcss_curve: Vec<(usize, f64)> = runs.iter().enumerate().map(|(i, r)| (i + 1, r.wcss)).collect();
    let mut silhouette_curve = Vec::new();
    for (i, r) in runs.iter().enumerate().skip(1) {
        let s = match silhouette_mean(points, &r.assignments) {
            Ok(s) => s,
            // A run that collapsed to fewer clusters cannot be scored fairly.
            Err(ClusterError::EmptyCluster(_)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        silhouette_curve.push((i + 1, s));
    }
    let mut k_selected = 2;
    let mut best = f64::NEG_INFINITY;
    for &(k, s) in &silhouette_curve {
        if s > best {
            best = s;
            k_selected = k;
        }
    }
    let chosen = &runs[k_selected - 1];
    let mut cluster_counts = vec![0; k_selected];
    for &a in &chosen.assignments {
        cluster_counts[a] += 1;
    }
    Ok(ClusterReport {
        k_selected,
        assignments: ids.iter().cloned().zip(chosen.assignments.iter().copied()).collect(),
        centroids: chosen.centroids.clone(),
        wcss_curve,
        silhouette_curve,
        cluster_counts,
    })
}

/// Fraction of points whose cluster maps to their true class under the best
/// one-to-one matching of clusters to classes.
pub fn matching_agreement(assignments: &[usize], truth: &[u32]) -> f64 {
    assert_eq!(assignments.len(), truth.len());
    if assignments.is_empty() {
        return 0.0;
    }
    let mut classes: Vec<u32> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = assignments.iter().max().map_or(0, |&m| m + 1);
    let m = classes.len();
    assert!(m <= 20, "too many classes for exact matching");
    let mut table = vec![vec![0usize; m]; k];
    for (&a, t) in assignments.iter().zip(truth) {
        let c = classes.binary_search(t).expect("class present");
        table[a][c] += 1;
    }
    // dp[mask] = best matched count with the classes in `mask` used.
    let mut dp = vec![usize::MIN; 1 << m];
    let mut reach = vec![false; 1 << m];
    reach[0] = true;
    dp[0] = 0;
    for row in &table {
        let mut next = dp.clone();
        let mut next_reach = reach.clone();
        for mask in 0..1usize << m {
            if !reach[mask] {
                continue;
            }
            for (c, &hits) in row.iter().enumerate() {
                if mask & (1 << c) == 0 {
                    let nm = mask | (1 << c);
                    if !next_reach[nm] || dp[mask] + hits > next[nm] {
                        next[nm] = dp[mask] + hits;
                        next_reach[nm] = true;
                    }
                }
            }
        }
        dp = next;
        reach = next_reach;
    }
    let best = dp.iter().zip(&reach).filter(|(_, &r)| r).map(|(&v, _)| v).max().unwrap_or(0);
    best as f64 / assignments.len() as f64
}
