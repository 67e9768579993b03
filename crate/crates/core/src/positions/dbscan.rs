//! Density-based clustering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::euclidean;

/// Cluster id per point, `None` for noise. Ids are dense and ordered by
/// descending cluster size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub eps: f64,
    pub min_samples: usize,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }

    pub fn noise(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(cluster))
            .map(|(i, _)| i)
            .collect()
    }

    /// Labels as integers with −1 for noise.
    pub fn as_signed(&self) -> Vec<i64> {
        self.labels
            .iter()
            .map(|l| l.map_or(-1, |c| c as i64))
            .collect()
    }
}

/// DBSCAN over an arbitrary symmetric distance.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Core points that are density-connected form a cluster.
/// A border point reachable from several clusters joins the one with the
/// lowest provisional id, where provisional ids rank clusters by core count
/// and then by smallest member index.
pub fn dbscan_with<F>(
    n: usize,
    distance: F,
    eps: f64,
    min_samples: usize,
) -> Result<ClusterAssignment>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if min_samples == 0 {
        return Err(Error::InvalidParameter(
            "min_samples must be at least 1".into(),
        ));
    }
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j == i || distance(i, j) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighborhoods
        .iter()
        .map(|nb| nb.len() >= min_samples)
        .collect();

    // connected components of the core graph
    let mut component = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !core[start] || component[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component[start] = id;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &q in &neighborhoods[p] {
                if core[q] && component[q] == usize::MAX {
                    component[q] = id;
                    members.push(q);
                    stack.push(q);
                }
            }
        }
        components.push(members);
    }

    // provisional ids: more core points first, then smallest member index
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by_key(|&c| {
        (
            std::cmp::Reverse(components[c].len()),
            *components[c].iter().min().expect("nonempty"),
        )
    });
    let mut provisional = vec![0usize; components.len()];
    for (rank, &c) in order.iter().enumerate() {
        provisional[c] = rank;
    }

    let mut labels: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        labels[i] = if core[i] {
            Some(provisional[component[i]])
        } else {
            neighborhoods[i]
                .iter()
                .filter(|&&q| core[q])
                .map(|&q| provisional[component[q]])
                .min()
        };
    }

    // final ids by descending total size, provisional id breaking ties
    let c = components.len();
    let mut sizes = vec![0usize; c];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    let mut final_order: Vec<usize> = (0..c).collect();
    final_order.sort_by_key(|&p| (std::cmp::Reverse(sizes[p]), p));
    let mut remap = vec![0usize; c];
    for (rank, &p) in final_order.iter().enumerate() {
        remap[p] = rank;
    }
    for l in labels.iter_mut().flatten() {
        *l = remap[*l];
    }

    Ok(ClusterAssignment {
        labels,
        eps,
        min_samples,
    })
}

/// DBSCAN with Euclidean distance.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Result<ClusterAssignment> {
    dbscan_with(
        points.len(),
        |i, j| euclidean(&points[i], &points[j]),
        eps,
        min_samples,
    )
}

/// Knee of the sorted k-th-nearest-neighbor distance curve.
///
/// The knee is the point farthest from the chord joining the curve's ends
/// after scaling both axes to [0, 1].
pub fn eps_elbow<F>(n: usize, distance: F, k: usize) -> Result<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InsufficientData(
            "need at least two points for eps selection".into(),
        ));
    }
    let k = k.clamp(1, n - 1);
    let mut kth: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| distance(i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    let (lo, hi) = (kth[0], kth[n - 1]);
    if hi <= lo {
        return Ok(if hi > 0.0 { hi } else { f64::EPSILON });
    }
    let m = (n - 1) as f64;
    let mut best = (0usize, -1.0);
    for (i, &d) in kth.iter().enumerate() {
        let x = i as f64 / m;
        let y = (d - lo) / (hi - lo);
        // distance below the chord y = x, convex curve
        let gap = x - y;
        if gap > best.1 {
            best = (i, gap);
        }
    }
    let eps = kth[best.0];
    Ok(if eps > 0.0 { eps } else { hi })
}
