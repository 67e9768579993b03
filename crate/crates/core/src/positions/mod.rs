//! Position mining: reduce fingerprints, cluster them, validate the
//! clusters, and derive per-item modal labels and divisiveness.

pub mod dbscan;
pub mod metrics;
pub mod reduce;

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan, dbscan_with, eps_elbow, ClusterAssignment};
pub use metrics::{adjusted_rand_index, silhouette, silhouette_with};
pub use reduce::{knn, pca, project, reduce, Embedding, Metric, ReduceMethod, ReduceParams};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fingerprint::{flat_similarity, flatten, FingerprintSet};
use crate::util::{euclidean, mode_smallest, rng, sha256_hex, to_json_bytes};

/// Where DBSCAN runs: on the reduced coordinates or on the raw flattened
/// fingerprints with the reducer's metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSpace {
    Embedded,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    pub reduce: ReduceParams,
    /// `None` selects eps with the k-distance elbow heuristic.
    pub eps: Option<f64>,
    pub min_samples: usize,
    /// Neighbor rank for the k-distance elbow; `None` uses `min_samples`.
    pub elbow_k: Option<usize>,
    pub space: ClusterSpace,
    /// Also cluster the raw flattened fingerprints for comparison.
    pub raw_baseline: bool,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            reduce: ReduceParams::default(),
            eps: None,
            min_samples: 10,
            elbow_k: None,
            space: ClusterSpace::Embedded,
            raw_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBaseline {
    pub eps: f64,
    pub cluster_sizes: Vec<usize>,
    pub noise: usize,
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub schema_version: u32,
    pub fingerprint_set_hash: String,
    pub config: MineConfig,
    pub eps: f64,
    pub embedding: Embedding,
    pub assignment: ClusterAssignment,
    pub cluster_sizes: Vec<usize>,
    pub noise: usize,
    pub silhouette: Option<f64>,
    /// Silhouette of each single-trait demographic partition in the
    /// clustering space.
    pub demographic_silhouettes: BTreeMap<String, Option<f64>>,
    pub raw_baseline: Option<RawBaseline>,
    /// item id → modal label per cluster
    pub modal_labels: BTreeMap<String, Vec<Option<i32>>>,
    /// item id → mode(cluster 0) − mode(cluster 1)
    pub divisiveness: BTreeMap<String, i32>,
}

impl PositionReport {
    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    /// Cluster of an agent; `None` for noise or unknown ids.
    pub fn cluster_of(&self, agent_id: &str) -> Option<usize> {
        self.embedding
            .index_of(agent_id)
            .and_then(|i| self.assignment.labels[i])
    }

    pub fn hash(&self) -> String {
        sha256_hex(&to_json_bytes(self))
    }
}

/// Reduce → DBSCAN → silhouette, plus demographic comparison partitions and
/// (when a corpus is given and two clusters exist) modal labels and
/// divisiveness.
pub fn mine_positions(
    fpset: &FingerprintSet,
    corpus: Option<&Corpus>,
    config: &MineConfig,
) -> Result<PositionReport> {
    let flats = fpset.flats();
    let ids = fpset.ids();
    let embedding = reduce(&flats, &ids, &config.reduce)?;
    let metric = config.reduce.metric;
    let n = flats.len();

    let coords = &embedding.coords;
    let embedded_dist = |i: usize, j: usize| euclidean(&coords[i], &coords[j]);
    let raw_dist = |i: usize, j: usize| metric.distance(&flats[i], &flats[j]);

    let (eps, assignment, sil, demo) = match config.space {
        ClusterSpace::Embedded => cluster_and_score(n, embedded_dist, config, corpus, &ids)?,
        ClusterSpace::Raw => cluster_and_score(n, raw_dist, config, corpus, &ids)?,
    };

    let raw_baseline = if config.raw_baseline && config.space == ClusterSpace::Embedded {
        let raw_eps = eps_elbow(n, raw_dist, config.elbow_k.unwrap_or(config.min_samples))?;
        let a = dbscan_with(n, raw_dist, raw_eps, config.min_samples)?;
        Some(RawBaseline {
            eps: raw_eps,
            cluster_sizes: a.sizes(),
            noise: a.noise(),
            silhouette: silhouette_with(n, raw_dist, &a.labels),
        })
    } else {
        None
    };

    let (modal_labels, divisiveness) = match corpus {
        Some(c) => {
            let modal = cluster_modal_labels(c, &ids, &assignment)?;
            let div = if assignment.n_clusters() >= 2 {
                divisiveness(&modal, 0, 1)
            } else {
                BTreeMap::new()
            };
            (modal, div)
        }
        None => (BTreeMap::new(), BTreeMap::new()),
    };

    Ok(PositionReport {
        schema_version: crate::SCHEMA_VERSION,
        fingerprint_set_hash: fpset.hash(),
        config: config.clone(),
        eps,
        cluster_sizes: assignment.sizes(),
        noise: assignment.noise(),
        embedding,
        assignment,
        silhouette: sil,
        demographic_silhouettes: demo,
        raw_baseline,
        modal_labels,
        divisiveness,
    })
}

type Scored = (
    f64,
    ClusterAssignment,
    Option<f64>,
    BTreeMap<String, Option<f64>>,
);

fn cluster_and_score<F>(
    n: usize,
    dist: F,
    config: &MineConfig,
    corpus: Option<&Corpus>,
    ids: &[String],
) -> Result<Scored>
where
    F: Fn(usize, usize) -> f64 + Sync + Copy,
{
    let eps = match config.eps {
        Some(e) => e,
        None => eps_elbow(n, dist, config.elbow_k.unwrap_or(config.min_samples))?,
    };
    let assignment = dbscan_with(n, dist, eps, config.min_samples)?;
    let sil = silhouette_with(n, dist, &assignment.labels);
    let mut demo = BTreeMap::new();
    if let Some(corpus) = corpus {
        for (name, labels) in demographic_partitions(corpus, ids) {
            demo.insert(name, silhouette_with(n, dist, &labels));
        }
    }
    Ok((eps, assignment, sil, demo))
}

/// For each demographic trait, a labeling of `agent_ids` by trait value
/// (`None` where the agent lacks the trait or is not a corpus annotator).
pub fn demographic_partitions(
    corpus: &Corpus,
    agent_ids: &[String],
) -> BTreeMap<String, Vec<Option<usize>>> {
    let mut out = BTreeMap::new();
    for name in corpus.traits() {
        let mut values: BTreeMap<&str, usize> = BTreeMap::new();
        for a in corpus.annotators() {
            if let Some(v) = a.demographics.get(&name) {
                let next = values.len();
                values.entry(v.as_str()).or_insert(next);
            }
        }
        // renumber in sorted value order
        let sorted: HashMap<&str, usize> =
            values.keys().enumerate().map(|(i, k)| (*k, i)).collect();
        let labels = agent_ids
            .iter()
            .map(|id| {
                corpus
                    .annotator_index(id)
                    .and_then(|i| corpus.annotators()[i].demographics.get(&name))
                    .map(|v| sorted[v.as_str()])
            })
            .collect();
        out.insert(name, labels);
    }
    out
}

/// Mode of the labels each cluster's members gave each item; ties go to
/// the smallest label. Items no cluster member annotated are absent.
pub fn cluster_modal_labels(
    corpus: &Corpus,
    agent_ids: &[String],
    assignment: &ClusterAssignment,
) -> Result<BTreeMap<String, Vec<Option<i32>>>> {
    if agent_ids.len() != assignment.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: agent_ids.len(),
            actual: assignment.labels.len(),
        });
    }
    let c = assignment.n_clusters();
    let mut buckets: HashMap<usize, Vec<Vec<i32>>> = HashMap::new();
    for (agent, cluster) in agent_ids.iter().zip(&assignment.labels) {
        let Some(cluster) = *cluster else { continue };
        let Some(ai) = corpus.annotator_index(agent) else {
            continue;
        };
        for a in corpus.annotator_annotations(ai) {
            buckets.entry(a.item).or_insert_with(|| vec![Vec::new(); c])[cluster].push(a.label);
        }
    }
    Ok(buckets
        .into_iter()
        .map(|(item, per_cluster)| {
            let modes = per_cluster.into_iter().map(mode_smallest).collect();
            (corpus.items()[item].item_id.clone(), modes)
        })
        .collect())
}

/// `mode(a) − mode(b)` for every item where both clusters have a mode.
pub fn divisiveness(
    modal: &BTreeMap<String, Vec<Option<i32>>>,
    cluster_a: usize,
    cluster_b: usize,
) -> BTreeMap<String, i32> {
    modal
        .iter()
        .filter_map(|(item, modes)| {
            let a = (*modes.get(cluster_a)?)?;
            let b = (*modes.get(cluster_b)?)?;
            Some((item.clone(), a - b))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCount {
    pub available: usize,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivisiveSample {
    pub schema_version: u32,
    pub per_stratum: usize,
    pub seed: u64,
    pub strata: BTreeMap<i32, StratumCount>,
    /// Shuffled item ids.
    pub items: Vec<String>,
}

/// Up to `per_stratum` items uniformly from each divisiveness value, then
/// shuffled together.
pub fn sample_divisive(
    divisiveness: &BTreeMap<String, i32>,
    per_stratum: usize,
    seed: u64,
) -> Result<DivisiveSample> {
    if per_stratum == 0 {
        return Err(Error::InvalidParameter(
            "per_stratum must be at least 1".into(),
        ));
    }
    let mut strata: BTreeMap<i32, Vec<&String>> = BTreeMap::new();
    for (item, &d) in divisiveness {
        strata.entry(d).or_default().push(item);
    }
    let mut r = rng(seed);
    let mut items = Vec::new();
    let mut counts = BTreeMap::new();
    for (d, members) in &strata {
        let chosen: Vec<&&String> = members.choose_multiple(&mut r, per_stratum).collect();
        counts.insert(
            *d,
            StratumCount {
                available: members.len(),
                sampled: chosen.len(),
            },
        );
        items.extend(chosen.into_iter().map(|s| (*s).clone()));
    }
    items.shuffle(&mut r);
    Ok(DivisiveSample {
        schema_version: crate::SCHEMA_VERSION,
        per_stratum,
        seed,
        strata: counts,
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSpace {
    Fingerprint,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub agent_id: String,
    /// Cosine similarity (fingerprint space) or Euclidean distance
    /// (embedding space).
    pub score: f64,
}

/// Top-`k` neighbors of an agent, excluding itself. Agents with an
/// undefined similarity are skipped. Ties go to the smaller agent id.
pub fn nearest_neighbors(
    fpset: &FingerprintSet,
    embedding: Option<&Embedding>,
    agent_id: &str,
    k: usize,
    space: NeighborSpace,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut out: Vec<Neighbor> = match space {
        NeighborSpace::Fingerprint => {
            let me = fpset
                .get(agent_id)
                .ok_or_else(|| Error::UnknownAgent(agent_id.to_string()))?;
            let flat = flatten(me);
            let mut v: Vec<Neighbor> = fpset
                .agents
                .iter()
                .filter(|f| f.agent_id != agent_id)
                .filter_map(|f| {
                    flat_similarity(&flat, &flatten(f)).map(|s| Neighbor {
                        agent_id: f.agent_id.clone(),
                        score: s,
                    })
                })
                .collect();
            v.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then_with(|| a.agent_id.cmp(&b.agent_id))
            });
            v
        }
        NeighborSpace::Embedding => {
            let emb = embedding.ok_or_else(|| {
                Error::InvalidParameter("embedding space requires an embedding".into())
            })?;
            let i = emb
                .index_of(agent_id)
                .ok_or_else(|| Error::UnknownAgent(agent_id.to_string()))?;
            let mut v: Vec<Neighbor> = emb
                .agent_ids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, id)| Neighbor {
                    agent_id: id.clone(),
                    score: euclidean(&emb.coords[i], &emb.coords[j]),
                })
                .collect();
            v.sort_by(|a, b| {
                a.score
                    .total_cmp(&b.score)
                    .then_with(|| a.agent_id.cmp(&b.agent_id))
            });
            v
        }
    };
    out.truncate(k);
    Ok(out)
}

/// Fraction of reference points whose local density (inverse mean distance
/// to their `k` nearest reference neighbors) is at most the density at
/// `point`. Low values mean the point sits in a sparse region.
pub fn density_percentile(reference: &[Vec<f64>], point: &[f64], k: usize) -> f64 {
    let n = reference.len();
    if n < 2 {
        return 1.0;
    }
    let k = k.clamp(1, n - 1);
    let density = |dists: &mut Vec<f64>| {
        dists.sort_by(f64::total_cmp);
        let mean = dists.iter().take(k).sum::<f64>() / k as f64;
        1.0 / (mean + 1e-12)
    };
    let mut own: Vec<f64> = reference.iter().map(|r| euclidean(r, point)).collect();
    let own = density(&mut own);
    let below = (0..n)
        .filter(|&i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(&reference[i], &reference[j]))
                .collect();
            density(&mut d) <= own
        })
        .count();
    below as f64 / n as f64
}
