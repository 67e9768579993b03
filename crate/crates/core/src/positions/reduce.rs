//! Dimensionality reduction: exact PCA and a UMAP-style neighbor embedding.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{cosine, euclidean, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceMethod {
    NeighborEmbedding,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// 1 − cosine similarity; zero vectors are at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Cosine => match cosine(a, b) {
                Some(s) => (1.0 - s).max(0.0),
                None => 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceParams {
    pub method: ReduceMethod,
    pub dims: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub epochs: usize,
    pub negative_samples: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for ReduceParams {
    fn default() -> Self {
        Self {
            method: ReduceMethod::NeighborEmbedding,
            dims: 2,
            n_neighbors: 15,
            min_dist: 0.1,
            epochs: 500,
            negative_samples: 5,
            metric: Metric::Cosine,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub method: ReduceMethod,
    pub dims: usize,
    pub seed: u64,
    pub agent_ids: Vec<String>,
    pub coords: Vec<Vec<f64>>,
}

impl Embedding {
    pub fn index_of(&self, agent_id: &str) -> Option<usize> {
        self.agent_ids.iter().position(|a| a == agent_id)
    }
}

/// Reduces `points` (one per agent id) to `params.dims` dimensions.
pub fn reduce(
    points: &[Vec<f64>],
    agent_ids: &[String],
    params: &ReduceParams,
) -> Result<Embedding> {
    if points.len() != agent_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: agent_ids.len(),
            actual: points.len(),
        });
    }
    if params.dims == 0 {
        return Err(Error::InvalidParameter("dims must be at least 1".into()));
    }
    if points.len() < params.dims + 1 {
        return Err(Error::InsufficientData(format!(
            "need at least {} points to embed in {} dimensions, got {}",
            params.dims + 1,
            params.dims,
            points.len()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidParameter(
            "points have differing dimensions".into(),
        ));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "points contain non-finite values".into(),
        ));
    }
    let coords = match params.method {
        ReduceMethod::Pca => pca(points, params.dims)?,
        ReduceMethod::NeighborEmbedding => neighbor_embedding(points, params)?,
    };
    Ok(Embedding {
        method: params.method,
        dims: params.dims,
        seed: params.seed,
        agent_ids: agent_ids.to_vec(),
        coords,
    })
}

/// Projection onto the top `dims` principal axes of the centered data.
///
/// Axis signs are fixed so the largest-magnitude loading is positive.
pub fn pca(points: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    if dims > d {
        return Err(Error::InvalidParameter(format!(
            "cannot project {d}-dimensional points onto {dims} components"
        )));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered;
    if cov.trace() <= 0.0 {
        return Err(Error::InsufficientData("input has zero variance".into()));
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut axes = Vec::with_capacity(dims);
    for &c in order.iter().take(dims) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    Ok((0..n)
        .map(|i| {
            axes.iter()
                .map(|axis| (0..d).map(|j| centered[(i, j)] * axis[j]).sum())
                .collect()
        })
        .collect())
}

/// k nearest neighbors of every point (self excluded, ties by index).
pub fn knn(points: &[Vec<f64>], k: usize, metric: Metric) -> Vec<Vec<(usize, f64)>> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (j, metric.distance(&points[i], &points[j])))
                .collect();
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
            row
        })
        .collect()
}

/// Fits `1 / (1 + a·x^(2b))` to the offset-exponential target curve used by
/// neighbor embeddings with spread 1.
pub fn fit_curve(min_dist: f64) -> (f64, f64) {
    let spread = 1.0;
    let xs: Vec<f64> = (1..=300).map(|i| i as f64 * 3.0 * spread / 300.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();
    let loss = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (f - y) * (f - y)
            })
            .sum()
    };
    // coarse grid then coordinate refinement
    let mut best = (1.0, 1.0, f64::INFINITY);
    for ia in 1..=60 {
        for ib in 1..=40 {
            let a = ia as f64 * 0.1;
            let b = ib as f64 * 0.05;
            let l = loss(a, b);
            if l < best.2 {
                best = (a, b, l);
            }
        }
    }
    let (mut a, mut b, mut l) = best;
    let mut step = 0.05;
    while step > 1e-7 {
        let mut improved = false;
        for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (na, nb) = (a + da, b + db);
            if na <= 0.0 || nb <= 0.0 {
                continue;
            }
            let nl = loss(na, nb);
            if nl < l {
                a = na;
                b = nb;
                l = nl;
                improved = true;
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    (a, b)
}

/// Symmetric fuzzy neighbor graph as `(i, j, weight)` with `i < j`.
fn fuzzy_graph(neighbors: &[Vec<(usize, f64)>]) -> Vec<(usize, usize, f64)> {
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, row) in neighbors.iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        let target = (row.len() as f64).log2().max(1e-3);
        let rho = row
            .iter()
            .map(|&(_, d)| d)
            .find(|&d| d > 0.0)
            .unwrap_or(0.0);
        let mean_d = row.iter().map(|&(_, d)| d).sum::<f64>() / row.len() as f64;
        let (mut lo, mut hi, mut sigma) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..64 {
            let psum: f64 = row
                .iter()
                .map(|&(_, d)| (-(d - rho).max(0.0) / sigma).exp())
                .sum();
            if (psum - target).abs() < 1e-5 {
                break;
            }
            if psum > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_infinite() {
                    sigma * 2.0
                } else {
                    (lo + hi) / 2.0
                };
            }
        }
        sigma = sigma.max(1e-3 * mean_d).max(1e-12);
        for &(j, d) in row {
            let w = (-(d - rho).max(0.0) / sigma).exp();
            directed.insert((i, j), w);
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let key = (i.min(j), i.max(j));
        if sym.contains_key(&key) {
            continue;
        }
        let w_rev = directed.get(&(j, i)).copied().unwrap_or(0.0);
        sym.insert(key, w + w_rev - w * w_rev);
    }
    sym.into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|((i, j), w)| (i, j, w))
        .collect()
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

fn neighbor_embedding(points: &[Vec<f64>], params: &ReduceParams) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let dims = params.dims;
    let k = params.n_neighbors.clamp(1, n - 1);
    let neighbors = knn(points, k, params.metric);
    let graph = fuzzy_graph(&neighbors);
    let (a, b) = fit_curve(params.min_dist);

    let mut y = initial_layout(points, dims, params.seed);

    let epochs = params.epochs.max(1);
    let max_w = graph.iter().map(|e| e.2).fold(0.0, f64::max);
    // directed edges in both orientations
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(graph.len() * 2);
    for &(i, j, w) in &graph {
        if w >= max_w / epochs as f64 {
            edges.push((i, j, w));
            edges.push((j, i, w));
        }
    }
    let per_sample: Vec<f64> = edges.iter().map(|e| max_w / e.2).collect();
    let neg_rate = params.negative_samples as f64;
    let per_neg: Vec<f64> = per_sample.iter().map(|p| p / neg_rate.max(1e-12)).collect();
    let mut next_sample = per_sample.clone();
    let mut next_neg = per_neg.clone();
    let mut r = rng(params.seed ^ 0x5eed_1a70);

    let mut diff = vec![0.0; dims];
    for epoch in 0..epochs {
        let lr = 1.0 - epoch as f64 / epochs as f64;
        let e = epoch as f64;
        for (ei, &(i, j, _)) in edges.iter().enumerate() {
            if next_sample[ei] > e {
                continue;
            }
            let d2 = sq_dist(&y[i], &y[j], &mut diff);
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                for dim in 0..dims {
                    let g = clip(coeff * diff[dim]) * lr;
                    y[i][dim] += g;
                    y[j][dim] -= g;
                }
            }
            next_sample[ei] += per_sample[ei];

            if params.negative_samples > 0 {
                let n_neg = ((e - next_neg[ei]) / per_neg[ei]).floor().max(0.0) as usize;
                for _ in 0..n_neg {
                    let other = r.random_range(0..n);
                    if other == i {
                        continue;
                    }
                    let d2 = sq_dist(&y[i], &y[other], &mut diff);
                    if d2 > 0.0 {
                        let coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                        for dim in 0..dims {
                            y[i][dim] += clip(coeff * diff[dim]) * lr;
                        }
                    } else {
                        for dim in 0..dims {
                            y[i][dim] += 4.0 * lr;
                        }
                    }
                }
                next_neg[ei] += n_neg as f64 * per_neg[ei];
            }
        }
    }
    if y.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("embedding diverged".into()));
    }
    Ok(y)
}

fn sq_dist(a: &[f64], b: &[f64], diff: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..a.len() {
        diff[d] = a[d] - b[d];
        s += diff[d] * diff[d];
    }
    s
}

/// PCA layout scaled to a ±10 box plus a small seeded jitter; random when
/// PCA is not possible.
fn initial_layout(points: &[Vec<f64>], dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let base = pca(points, dims).ok().filter(|c| {
        let m = c.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        m > 0.0
    });
    match base {
        Some(mut c) => {
            let m = c.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            for row in &mut c {
                for x in row {
                    *x = *x / m * 10.0 + r.random_range(-1e-4..1e-4);
                }
            }
            c
        }
        None => (0..points.len())
            .map(|_| (0..dims).map(|_| r.random_range(-10.0..10.0)).collect())
            .collect(),
    }
}

/// Places a new point as the inverse-distance weighted mean of the
/// embedded coordinates of its `k` nearest reference points.
pub fn project(
    reference: &[Vec<f64>],
    embedded: &[Vec<f64>],
    point: &[f64],
    k: usize,
    metric: Metric,
) -> Result<Vec<f64>> {
    if reference.is_empty() || reference.len() != embedded.len() {
        return Err(Error::InsufficientData(
            "no reference points to project onto".into(),
        ));
    }
    let mut dists: Vec<(usize, f64)> = reference
        .iter()
        .enumerate()
        .map(|(i, r)| (i, metric.distance(r, point)))
        .collect();
    dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dists.truncate(k.max(1));
    let dims = embedded[0].len();
    let mut out = vec![0.0; dims];
    let mut total = 0.0;
    for &(i, d) in &dists {
        let w = 1.0 / (d + 1e-9);
        total += w;
        for (o, x) in out.iter_mut().zip(&embedded[i]) {
            *o += w * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}
