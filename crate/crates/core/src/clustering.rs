//! Server-side K-means over encrypted label distributions.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::EncryptedDistribution;
use crate::rng::{self, Stream};

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;

/// Result of Lloyd's algorithm on plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Objective after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // Rounding can run past the last positive weight.
            if dist[pick] == 0.0 {
                pick = dist.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // All points coincide with a chosen centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

/// K-means with k-means++ seeding. Empty clusters are reseeded at the point
/// farthest from its own centroid.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<KMeansFit> {
    if k == 0 || points.len() < k {
        return Err(Error::config(format!(
            "k-means needs 1 <= k <= number of points, got k={k} with {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::config("k-means points must share one dimension"));
    }

    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut labels = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut objective_history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            labels[i] = c;
            dists[i] = d;
            objective += d;
        }
        objective_history.push(objective);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        for c in 0..k {
            if counts[c] != 0 {
                continue;
            }
            let mut far = 0;
            for i in 0..points.len() {
                if dists[i] > dists[far] {
                    far = i;
                }
            }
            centroids[c] = points[far].clone();
            dists[far] = 0.0;
            shift = f64::INFINITY;
        }
        if shift <= TOLERANCE {
            break;
        }
    }

    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest(p, &centroids).0;
    }
    Ok(KMeansFit { labels, centroids, objective_history, iterations })
}

/// Client to cluster map produced once before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Indexed by client id; `None` for clients outside the fitted set.
    pub cluster_of: Vec<Option<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    /// Assignment placing every listed client in cluster 0.
    pub fn single(num_clients: usize) -> Self {
        Self {
            k: 1,
            cluster_of: vec![Some(0); num_clients],
            centroids: Vec::new(),
            objective_history: Vec::new(),
            iterations: 0,
        }
    }

    /// Assignment from explicit per-client labels (client id = index).
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        if k == 0 {
            return Err(Error::config("empty label list"));
        }
        Ok(Self {
            k,
            cluster_of: labels.iter().map(|&c| Some(c)).collect(),
            centroids: Vec::new(),
            objective_history: Vec::new(),
            iterations: 0,
        })
    }

    pub fn cluster_of(&self, client_id: usize) -> Result<usize> {
        self.cluster_of.get(client_id).copied().flatten().ok_or(Error::UnknownClient(client_id))
    }

    /// Cluster labels of clients `0..n` in id order.
    pub fn labels(&self) -> Vec<usize> {
        self.cluster_of.iter().filter_map(|c| *c).collect()
    }
}

/// Flattens each encrypted matrix and clusters the vectors.
pub fn fit_kmeans(encrypted: &[EncryptedDistribution], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if encrypted.len() < k || k == 0 {
        return Err(Error::config(format!(
            "cannot form {k} clusters from {} clients",
            encrypted.len()
        )));
    }
    let (d, p) = (encrypted[0].d(), encrypted[0].p());
    if let Some(bad) = encrypted.iter().find(|e| e.d() != d || e.p() != p) {
        return Err(Error::config(format!(
            "client {} sent a {}x{} matrix, expected {d}x{p}",
            bad.client_id,
            bad.d(),
            bad.p()
        )));
    }
    let points: Vec<Vec<f64>> = encrypted.iter().map(EncryptedDistribution::flatten).collect();
    let fit = kmeans(&points, k, &mut rng::stream(seed, Stream::KMeans))?;

    let max_id = encrypted.iter().map(|e| e.client_id).max().unwrap_or(0);
    let mut cluster_of = vec![None; max_id + 1];
    for (e, &label) in encrypted.iter().zip(&fit.labels) {
        if cluster_of[e.client_id].replace(label).is_some() {
            return Err(Error::config(format!("client {} submitted twice", e.client_id)));
        }
    }
    Ok(ClusterAssignment {
        k,
        cluster_of,
        centroids: fit.centroids,
        objective_history: fit.objective_history,
        iterations: fit.iterations,
    })
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // Both labelings are all-singletons or one block.
        return if rows.len() == cols.len() { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}
