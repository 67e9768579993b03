//! Annotator fingerprints: a K×L matrix per agent whose column for label
//! `l` is the mean topic distribution of the documents the agent gave `l`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelScheme};
use crate::error::{Error, Result};
use crate::util::{cosine, sha256_hex, to_json_bytes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Crowd,
    DataScientist,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub agent_id: String,
    pub agent_kind: AgentKind,
    /// K rows (topics) × L columns (labels).
    pub matrix: Vec<Vec<f64>>,
    /// Documents aggregated per label.
    pub support: Vec<usize>,
}

impl Fingerprint {
    pub fn topics(&self) -> usize {
        self.matrix.len()
    }

    pub fn labels(&self) -> usize {
        self.support.len()
    }

    pub fn total_support(&self) -> usize {
        self.support.iter().sum()
    }

    /// Column `label_index` as a vector over topics.
    pub fn column(&self, label_index: usize) -> Vec<f64> {
        self.matrix.iter().map(|row| row[label_index]).collect()
    }
}

/// Builds a fingerprint from `(topic distribution, label)` pairs.
///
/// Pairs are accumulated in a canonical order so the result does not depend
/// on the order they are given in.
pub fn build_fingerprint(
    agent_id: &str,
    agent_kind: AgentKind,
    labeled_docs: &[(&[f64], i32)],
    scheme: &LabelScheme,
    topics: usize,
) -> Result<Fingerprint> {
    let l = scheme.len();
    let mut sorted: Vec<(usize, &[f64])> = Vec::with_capacity(labeled_docs.len());
    for &(dist, label) in labeled_docs {
        if dist.len() != topics {
            return Err(Error::DimensionMismatch {
                expected: topics,
                actual: dist.len(),
            });
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || dist.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "topic distribution for `{agent_id}` does not sum to 1 (sum {sum})"
            )));
        }
        sorted.push((scheme.check(label)?, dist));
    }
    sorted.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let mut matrix = vec![vec![0.0; l]; topics];
    let mut support = vec![0usize; l];
    for (col, dist) in sorted {
        support[col] += 1;
        for (t, &p) in dist.iter().enumerate() {
            matrix[t][col] += p;
        }
    }
    for (col, &n) in support.iter().enumerate() {
        if n > 0 {
            for row in &mut matrix {
                row[col] /= n as f64;
            }
        }
    }
    Ok(Fingerprint {
        agent_id: agent_id.to_string(),
        agent_kind,
        matrix,
        support,
    })
}

/// Row-major (by topic) flattening: element `i·L + j` is `matrix[i][j]`.
pub fn flatten(fp: &Fingerprint) -> Vec<f64> {
    fp.matrix.iter().flatten().copied().collect()
}

/// Cosine similarity of flattened fingerprints; `None` if either is empty.
pub fn fingerprint_similarity(a: &Fingerprint, b: &Fingerprint) -> Result<Option<f64>> {
    if a.topics() != b.topics() || a.labels() != b.labels() {
        return Err(Error::DimensionMismatch {
            expected: a.topics() * a.labels(),
            actual: b.topics() * b.labels(),
        });
    }
    Ok(flat_similarity(&flatten(a), &flatten(b)))
}

/// Cosine on already-flattened nonnegative vectors, clamped to [0, 1].
pub fn flat_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    cosine(a, b).map(|s| s.clamp(0.0, 1.0))
}

/// Elementwise mean of fingerprints (used as a cluster centroid).
pub fn centroid<'a, I>(agent_id: &str, members: I) -> Option<Fingerprint>
where
    I: IntoIterator<Item = &'a Fingerprint>,
{
    let mut iter = members.into_iter();
    let first = iter.next()?;
    let mut matrix = first.matrix.clone();
    let mut support = first.support.clone();
    let mut n = 1usize;
    for fp in iter {
        for (row, other) in matrix.iter_mut().zip(&fp.matrix) {
            for (x, y) in row.iter_mut().zip(other) {
                *x += y;
            }
        }
        for (s, o) in support.iter_mut().zip(&fp.support) {
            *s += o;
        }
        n += 1;
    }
    for row in &mut matrix {
        for x in row {
            *x /= n as f64;
        }
    }
    Some(Fingerprint {
        agent_id: agent_id.to_string(),
        agent_kind: AgentKind::Crowd,
        matrix,
        support,
    })
}

/// Fingerprints that share K, L and a topic model, ordered by agent id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSet {
    pub schema_version: u32,
    pub topic_model_hash: String,
    pub topics: usize,
    pub labels: Vec<i32>,
    pub min_annotations: usize,
    pub agents: Vec<Fingerprint>,
    /// Agents left out for having too few annotations.
    pub excluded: Vec<String>,
}

impl FingerprintSet {
    pub fn new(
        topic_model_hash: &str,
        topics: usize,
        labels: Vec<i32>,
        min_annotations: usize,
    ) -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            topic_model_hash: topic_model_hash.to_string(),
            topics,
            labels,
            min_annotations,
            agents: Vec::new(),
            excluded: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn index_of(&self, agent_id: &str) -> Option<usize> {
        self.agents
            .binary_search_by(|f| f.agent_id.as_str().cmp(agent_id))
            .ok()
    }

    pub fn get(&self, agent_id: &str) -> Option<&Fingerprint> {
        self.index_of(agent_id).map(|i| &self.agents[i])
    }

    /// Inserts or replaces, keeping id order.
    pub fn insert(&mut self, fp: Fingerprint) -> Result<()> {
        if fp.topics() != self.topics || fp.labels() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.topics * self.labels.len(),
                actual: fp.topics() * fp.labels(),
            });
        }
        match self
            .agents
            .binary_search_by(|f| f.agent_id.as_str().cmp(&fp.agent_id))
        {
            Ok(i) => self.agents[i] = fp,
            Err(i) => self.agents.insert(i, fp),
        }
        Ok(())
    }

    pub fn flats(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(flatten).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.agents.iter().map(|f| f.agent_id.clone()).collect()
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        to_json_bytes(self)
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.to_json_bytes())
    }
}

/// Per-annotator fingerprints for every annotator with at least
/// `min_annotations` annotations. `doc_topics[i]` is item `i`'s topic
/// distribution.
pub fn batch_fingerprints(
    corpus: &Corpus,
    doc_topics: &[Vec<f64>],
    topic_model_hash: &str,
    min_annotations: usize,
) -> Result<FingerprintSet> {
    if doc_topics.len() != corpus.items().len() {
        return Err(Error::DimensionMismatch {
            expected: corpus.items().len(),
            actual: doc_topics.len(),
        });
    }
    let k = doc_topics.first().map(|d| d.len()).unwrap_or(0);
    let scheme = corpus.scheme();
    let built: Vec<std::result::Result<Fingerprint, String>> = (0..corpus.annotators().len())
        .into_par_iter()
        .map(|ai| {
            let id = &corpus.annotators()[ai].annotator_id;
            let n = corpus.annotator_annotation_count(ai);
            if n == 0 || n < min_annotations {
                return Ok(Err(id.clone()));
            }
            let docs: Vec<(&[f64], i32)> = corpus
                .annotator_annotations(ai)
                .map(|a| (doc_topics[a.item].as_slice(), a.label))
                .collect();
            build_fingerprint(id, AgentKind::Crowd, &docs, scheme, k).map(Ok)
        })
        .collect::<Result<_>>()?;

    let mut set = FingerprintSet::new(
        topic_model_hash,
        k,
        scheme.labels().to_vec(),
        min_annotations,
    );
    let mut zero = 0usize;
    for r in built {
        match r {
            Ok(fp) => set.agents.push(fp),
            Err(id) => {
                if corpus
                    .annotator_index(&id)
                    .is_some_and(|i| corpus.annotator_annotation_count(i) == 0)
                {
                    zero += 1;
                }
                set.excluded.push(id);
            }
        }
    }
    if zero > 0 {
        log::warn!("{zero} annotators have no annotations and were excluded");
    }
    if set.excluded.len() > zero {
        log::warn!(
            "{} annotators below the {min_annotations}-annotation threshold were excluded",
            set.excluded.len() - zero
        );
    }
    // corpus annotators are already id-sorted
    debug_assert!(set.agents.windows(2).all(|w| w[0].agent_id < w[1].agent_id));
    Ok(set)
}

/// Per-label count of documents per agent, keyed by agent id.
pub fn supports(set: &FingerprintSet) -> BTreeMap<String, Vec<usize>> {
    set.agents
        .iter()
        .map(|f| (f.agent_id.clone(), f.support.clone()))
        .collect()
}
