//! Cluster validation metrics.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::util::euclidean;

/// Mean silhouette over labeled points under an arbitrary distance.
///
/// Unlabeled (`None`) points are ignored entirely. A point alone in its
/// cluster scores 0. Returns `None` with fewer than two clusters.
pub fn silhouette_with<F>(n: usize, distance: F, labels: &[Option<usize>]) -> Option<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    assert_eq!(labels.len(), n, "one label per point");
    let mut ids: Vec<usize> = labels.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return None;
    }
    let slot: HashMap<usize, usize> = ids.iter().enumerate().map(|(s, &c)| (c, s)).collect();
    let mut sizes = vec![0usize; ids.len()];
    for l in labels.iter().flatten() {
        sizes[slot[l]] += 1;
    }
    let labeled: Vec<usize> = (0..n).filter(|&i| labels[i].is_some()).collect();

    let scores: Vec<f64> = labeled
        .par_iter()
        .map(|&i| {
            let own = slot[&labels[i].expect("labeled")];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; ids.len()];
            for &j in &labeled {
                if j != i {
                    sums[slot[&labels[j].expect("labeled")]] += distance(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..ids.len())
                .filter(|&s| s != own)
                .map(|s| sums[s] / sizes[s] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Silhouette with Euclidean distance.
pub fn silhouette(points: &[Vec<f64>], labels: &[Option<usize>]) -> Option<f64> {
    silhouette_with(
        points.len(),
        |i, j| euclidean(&points[i], &points[j]),
        labels,
    )
}

/// Adjusted Rand index between two labelings of the same points.
///
/// Noise (`None`) is treated as its own group.
pub fn adjusted_rand_index(a: &[Option<usize>], b: &[Option<usize>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: HashMap<(Option<usize>, Option<usize>), u64> = HashMap::new();
    let mut rows: HashMap<Option<usize>, u64> = HashMap::new();
    let mut cols: HashMap<Option<usize>, u64> = HashMap::new();
    for i in 0..n {
        *table.entry((a[i], b[i])).or_default() += 1;
        *rows.entry(a[i]).or_default() += 1;
        *cols.entry(b[i]).or_default() += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&x| c2(x)).sum();
    let sum_a: f64 = rows.values().map(|&x| c2(x)).sum();
    let sum_b: f64 = cols.values().map(|&x| c2(x)).sum();
    let total = c2(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
