//! Word-count classifiers treated as annotators.
//!
//! A multinomial logistic regression is trained on per-item modal labels
//! from some subset of annotators, then fingerprinted by predicting a label
//! for every item, exactly as if it were an annotator who labeled them all.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::fingerprint::{
    build_fingerprint, centroid, flat_similarity, flatten, AgentKind, Fingerprint, FingerprintSet,
};
use crate::positions::{density_percentile, PositionReport};
use crate::util::{mode_smallest, rng, sha256_hex, to_json_bytes};

/// Sparse nonnegative feature row: `(feature index, value)` sorted by index.
pub type SparseRow = Vec<(u32, f64)>;

/// Item × term count matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix {
    pub rows: Vec<SparseRow>,
    pub n_features: usize,
}

/// Counts of in-vocabulary tokens for every corpus item.
pub fn doc_term_counts(corpus: &Corpus, vocabulary: &Vocabulary) -> DocTermMatrix {
    let rows = corpus
        .items()
        .iter()
        .map(|item| {
            let mut ids = vocabulary.encode(&item.tokens);
            ids.sort_unstable();
            let mut row: SparseRow = Vec::new();
            for id in ids {
                match row.last_mut() {
                    Some((last, n)) if *last == id => *n += 1.0,
                    _ => row.push((id, 1.0)),
                }
            }
            row
        })
        .collect();
    DocTermMatrix {
        rows,
        n_features: vocabulary.len(),
    }
}

/// Whose labels a classifier learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelSource {
    All,
    Cluster(usize),
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSource::All => f.write_str("all"),
            LabelSource::Cluster(c) => write!(f, "cluster:{c}"),
        }
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(LabelSource::All);
        }
        s.strip_prefix("cluster:")
            .and_then(|c| c.parse().ok())
            .map(LabelSource::Cluster)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "label source `{s}` is not `all` or `cluster:<id>`"
                ))
            })
    }
}

impl Serialize for LabelSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-item mode of the labels given by `annotators`; ties go to the
/// smallest label. Items none of them annotated are absent.
pub fn modal_label_targets(corpus: &Corpus, annotators: &[usize]) -> Result<BTreeMap<usize, i32>> {
    if annotators.is_empty() {
        return Err(Error::InsufficientData("annotator subset is empty".into()));
    }
    let mut per_item: BTreeMap<usize, Vec<i32>> = BTreeMap::new();
    for &ai in annotators {
        if ai >= corpus.annotators().len() {
            return Err(Error::UnknownAnnotator(format!("#{ai}")));
        }
        for a in corpus.annotator_annotations(ai) {
            per_item.entry(a.item).or_default().push(a.label);
        }
    }
    Ok(per_item
        .into_iter()
        .filter_map(|(item, labels)| mode_smallest(labels).map(|m| (item, m)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl TrainParams {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            max_epochs: 5000,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub schema_version: u32,
    pub label_source: LabelSource,
    pub c: f64,
    pub seed: u64,
    pub vocabulary_hash: String,
    /// Classes in ascending order; row `k` of `weights` scores `classes[k]`.
    pub classes: Vec<i32>,
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub epochs: usize,
    pub final_loss: f64,
    pub converged: bool,
}

impl ClassifierModel {
    pub fn n_features(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&to_json_bytes(self))
    }

    fn scores_sparse(&self, row: &[(u32, f64)]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + row.iter().map(|&(j, x)| w[j as usize] * x).sum::<f64>())
            .collect()
    }
}

/// Class index with the highest score, ties to the first (smallest label).
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Predicted label for a dense feature row.
pub fn predict(model: &ClassifierModel, row: &[f64]) -> Result<i32> {
    if row.len() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            actual: row.len(),
        });
    }
    let scores: Vec<f64> = model
        .weights
        .iter()
        .zip(&model.intercepts)
        .map(|(w, b)| b + w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>())
        .collect();
    Ok(model.classes[argmax(&scores)])
}

/// Predicted label for a sparse feature row.
pub fn predict_sparse(model: &ClassifierModel, row: &[(u32, f64)]) -> Result<i32> {
    if let Some(&(j, _)) = row.iter().find(|(j, _)| *j as usize >= model.n_features()) {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            actual: j as usize + 1,
        });
    }
    Ok(model.classes[argmax(&model.scores_sparse(row))])
}

/// Root mean squared difference between labels read as numbers.
pub fn rmse(predictions: &[i32], targets: &[i32]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InsufficientData("no targets to score".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    let sq: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let d = (p - t) as f64;
            d * d
        })
        .sum();
    Ok((sq / targets.len() as f64).sqrt())
}

/// RMSE of the model's predictions against per-item targets.
pub fn rmse_vs_mode(
    model: &ClassifierModel,
    x: &DocTermMatrix,
    targets: &BTreeMap<usize, i32>,
) -> Result<f64> {
    let mut preds = Vec::with_capacity(targets.len());
    let mut truth = Vec::with_capacity(targets.len());
    for (&item, &t) in targets {
        let row = x
            .rows
            .get(item)
            .ok_or_else(|| Error::UnknownItem(format!("#{item}")))?;
        preds.push(predict_sparse(model, row)?);
        truth.push(t);
    }
    rmse(&preds, &truth)
}

/// Regularized multinomial cross-entropy over a training set.
///
/// The objective is `(1/n) [Σ_i CE_i + ‖W‖² / (2C)]`; intercepts are not
/// penalized.
pub struct Objective<'a> {
    rows: &'a [&'a [(u32, f64)]],
    targets: Vec<usize>,
    n_classes: usize,
    n_features: usize,
    c: f64,
}

impl<'a> Objective<'a> {
    /// `targets[i]` is the class index of `rows[i]`.
    pub fn new(
        rows: &'a [&'a [(u32, f64)]],
        targets: Vec<usize>,
        n_classes: usize,
        n_features: usize,
        c: f64,
    ) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: targets.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::InsufficientData("no training rows".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C must be positive, got {c}"
            )));
        }
        Ok(Self {
            rows,
            targets,
            n_classes,
            n_features,
            c,
        })
    }

    /// Parameter vector length: `L·V` weights followed by `L` intercepts.
    pub fn dim(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn logits(&self, theta: &[f64], row: &[(u32, f64)], out: &mut [f64]) {
        let v = self.n_features;
        let bias = &theta[self.n_classes * v..];
        for (k, o) in out.iter_mut().enumerate() {
            let w = &theta[k * v..(k + 1) * v];
            *o = bias[k] + row.iter().map(|&(j, x)| w[j as usize] * x).sum::<f64>();
        }
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let w = &theta[..self.n_classes * self.n_features];
        w.iter().map(|x| x * x).sum::<f64>() / (2.0 * self.c)
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let mut z = vec![0.0; self.n_classes];
        let mut ce = 0.0;
        for (row, &y) in self.rows.iter().zip(&self.targets) {
            self.logits(theta, row, &mut z);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            ce += lse - z[y];
        }
        (ce + self.penalty(theta)) / self.rows.len() as f64
    }

    pub fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (l, v) = (self.n_classes, self.n_features);
        let mut grad = vec![0.0; self.dim()];
        let mut z = vec![0.0; l];
        let mut ce = 0.0;
        for (row, &y) in self.rows.iter().zip(&self.targets) {
            self.logits(theta, row, &mut z);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|s| (s - m).exp()).sum();
            ce += m + sum.ln() - z[y];
            for k in 0..l {
                let p = (z[k] - m).exp() / sum;
                let r = p - if k == y { 1.0 } else { 0.0 };
                let g = &mut grad[k * v..(k + 1) * v];
                for &(j, x) in row.iter() {
                    g[j as usize] += r * x;
                }
                grad[l * v + k] += r;
            }
        }
        for (g, w) in grad[..l * v].iter_mut().zip(&theta[..l * v]) {
            *g += w / self.c;
        }
        let n = self.rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        ((ce + self.penalty(theta)) / n, grad)
    }
}

/// Training rows with their target labels; returns the fitted model and the
/// objective value after every accepted step (starting with the initial
/// value).
pub fn train_classifier_traced(
    rows: &[&[(u32, f64)]],
    targets: &[i32],
    n_features: usize,
    params: &TrainParams,
) -> Result<(ClassifierModel, Vec<f64>)> {
    let mut classes: Vec<i32> = targets.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InsufficientData(
            "training targets need at least two distinct labels".into(),
        ));
    }
    if let Some(&(j, _)) = rows
        .iter()
        .flat_map(|r| r.iter())
        .find(|(j, _)| *j as usize >= n_features)
    {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            actual: j as usize + 1,
        });
    }
    let idx: Vec<usize> = targets
        .iter()
        .map(|t| classes.binary_search(t).expect("class present"))
        .collect();
    let objective = Objective::new(rows, idx, classes.len(), n_features, params.c)?;

    let mut theta = vec![0.0; objective.dim()];
    let (mut loss, mut grad) = objective.loss_and_gradient(&theta);
    let mut trace = vec![loss];
    let mut step = 1.0;
    let mut epochs = 0;
    let mut converged = false;
    while epochs < params.max_epochs {
        epochs += 1;
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        // Armijo backtracking from a step slightly larger than the last one
        step *= 2.0;
        let accepted = loop {
            let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let l = objective.loss(&candidate);
            if l.is_finite() && l <= loss - 1e-4 * step * gnorm2 {
                break Some((candidate, l));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((candidate, new_loss)) = accepted else {
            converged = true;
            break;
        };
        let change = loss - new_loss;
        theta = candidate;
        let (l, g) = objective.loss_and_gradient(&theta);
        loss = l;
        grad = g;
        trace.push(loss);
        if change < params.tolerance {
            converged = true;
            break;
        }
    }
    if !loss.is_finite() || theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("classifier loss is not finite".into()));
    }

    let (l, v) = (classes.len(), n_features);
    let model = ClassifierModel {
        schema_version: crate::SCHEMA_VERSION,
        label_source: LabelSource::All,
        c: params.c,
        seed: params.seed,
        vocabulary_hash: String::new(),
        weights: (0..l).map(|k| theta[k * v..(k + 1) * v].to_vec()).collect(),
        intercepts: theta[l * v..].to_vec(),
        classes,
        epochs,
        final_loss: loss,
        converged,
    };
    Ok((model, trace))
}

/// Full-batch gradient descent with backtracking line search.
pub fn train_classifier(
    rows: &[&[(u32, f64)]],
    targets: &[i32],
    n_features: usize,
    params: &TrainParams,
) -> Result<ClassifierModel> {
    train_classifier_traced(rows, targets, n_features, params).map(|(m, _)| m)
}

/// Fingerprint of a model that labels every item with its prediction.
pub fn model_fingerprint(
    agent_id: &str,
    model: &ClassifierModel,
    corpus: &Corpus,
    x: &DocTermMatrix,
    doc_topics: &[Vec<f64>],
) -> Result<Fingerprint> {
    if x.rows.len() != doc_topics.len() || doc_topics.len() != corpus.items().len() {
        return Err(Error::DimensionMismatch {
            expected: corpus.items().len(),
            actual: doc_topics.len().min(x.rows.len()),
        });
    }
    let preds: Vec<i32> = x
        .rows
        .iter()
        .map(|r| predict_sparse(model, r))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&[f64], i32)> = doc_topics.iter().map(|d| d.as_slice()).zip(preds).collect();
    let k = doc_topics.first().map_or(0, |d| d.len());
    build_fingerprint(agent_id, AgentKind::Model, &pairs, corpus.scheme(), k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    /// Share of items held out for RMSE.
    pub holdout_ratio: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    /// Neighbors used for the density percentile of model fingerprints.
    pub density_k: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            holdout_ratio: 0.2,
            max_epochs: 5000,
            tolerance: 1e-8,
            density_k: 15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label_source: LabelSource,
    pub c: f64,
    pub fingerprint_id: String,
    /// RMSE against all-annotator modal labels on held-out items.
    pub rmse: f64,
    /// Similarity to each cluster centroid, by cluster id.
    pub centroid_similarity: Vec<Option<f64>>,
    pub closest_cluster: Option<usize>,
    /// Share of annotator fingerprints in sparser regions than this model.
    pub density_percentile: f64,
    pub epochs: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSweepReport {
    pub schema_version: u32,
    pub config: SweepConfig,
    pub vocabulary_hash: String,
    pub train_items: usize,
    pub heldout_items: usize,
    pub entries: Vec<SweepEntry>,
    /// label source → index into `entries` of the lowest-RMSE model
    pub best: BTreeMap<String, usize>,
}

impl ModelSweepReport {
    pub fn hash(&self) -> String {
        sha256_hex(&to_json_bytes(self))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ModelSweepReport,
    pub models: Vec<ClassifierModel>,
    pub fingerprints: Vec<Fingerprint>,
}

/// Agent id used for a sweep model's fingerprint.
pub fn model_agent_id(source: LabelSource, c: f64) -> String {
    format!("model/{source}/C={c}")
}

/// Trains one model per (label source, C): label sources are all annotators
/// and each cluster's members.
pub fn sweep(
    corpus: &Corpus,
    vocabulary: &Vocabulary,
    doc_topics: &[Vec<f64>],
    fpset: &FingerprintSet,
    positions: &PositionReport,
    config: &SweepConfig,
) -> Result<SweepOutcome> {
    let n_clusters = positions.n_clusters();
    if n_clusters < 2 {
        return Err(Error::InsufficientData(format!(
            "model sweep needs at least two clusters, found {n_clusters}"
        )));
    }
    if config.grid.is_empty() {
        return Err(Error::InvalidParameter("empty C grid".into()));
    }
    if !(config.holdout_ratio > 0.0 && config.holdout_ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "holdout ratio must be in (0, 1), got {}",
            config.holdout_ratio
        )));
    }
    let x = doc_term_counts(corpus, vocabulary);

    let mut items: Vec<usize> = (0..corpus.items().len()).collect();
    items.shuffle(&mut rng(config.seed));
    let n_hold = ((items.len() as f64) * config.holdout_ratio).round() as usize;
    let mut heldout = items[..n_hold].to_vec();
    let mut train = items[n_hold..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();

    let all_annotators: Vec<usize> = (0..corpus.annotators().len()).collect();
    let all_targets = modal_label_targets(corpus, &all_annotators)?;
    let eval_targets: BTreeMap<usize, i32> = heldout
        .iter()
        .filter_map(|i| all_targets.get(i).map(|&t| (*i, t)))
        .collect();
    if eval_targets.is_empty() {
        return Err(Error::InsufficientData(
            "no annotated items in the held-out split".into(),
        ));
    }

    let mut sources = vec![(LabelSource::All, all_targets.clone())];
    for c in 0..n_clusters {
        let members: Vec<usize> = positions
            .embedding
            .agent_ids
            .iter()
            .zip(&positions.assignment.labels)
            .filter(|(_, l)| **l == Some(c))
            .filter_map(|(id, _)| corpus.annotator_index(id))
            .collect();
        sources.push((
            LabelSource::Cluster(c),
            modal_label_targets(corpus, &members)?,
        ));
    }

    let centroids: Vec<Option<Vec<f64>>> = (0..n_clusters)
        .map(|c| {
            let members = positions
                .embedding
                .agent_ids
                .iter()
                .zip(&positions.assignment.labels)
                .filter(|(_, l)| **l == Some(c))
                .filter_map(|(id, _)| fpset.get(id));
            centroid(&format!("centroid/{c}"), members).map(|f| flatten(&f))
        })
        .collect();
    let reference = fpset.flats();

    let jobs: Vec<(LabelSource, &BTreeMap<usize, i32>, f64)> = sources
        .iter()
        .flat_map(|(s, t)| config.grid.iter().map(move |&c| (*s, t, c)))
        .collect();
    let results: Vec<(SweepEntry, ClassifierModel, Fingerprint)> = jobs
        .par_iter()
        .map(|&(source, targets, c)| {
            let (rows, ys): (Vec<&[(u32, f64)]>, Vec<i32>) = train
                .iter()
                .filter_map(|i| targets.get(i).map(|&t| (x.rows[*i].as_slice(), t)))
                .unzip();
            let params = TrainParams {
                c,
                max_epochs: config.max_epochs,
                tolerance: config.tolerance,
                seed: config.seed,
            };
            let mut model = train_classifier(&rows, &ys, x.n_features, &params)?;
            model.label_source = source;
            model.vocabulary_hash = vocabulary.hash();
            let id = model_agent_id(source, c);
            let fp = model_fingerprint(&id, &model, corpus, &x, doc_topics)?;
            let flat = flatten(&fp);
            let sims: Vec<Option<f64>> = centroids
                .iter()
                .map(|cen| cen.as_ref().and_then(|cv| flat_similarity(&flat, cv)))
                .collect();
            let closest = sims
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.map(|s| (i, s)))
                .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((i, s)),
                })
                .map(|(i, _)| i);
            let entry = SweepEntry {
                label_source: source,
                c,
                fingerprint_id: id,
                rmse: rmse_vs_mode(&model, &x, &eval_targets)?,
                centroid_similarity: sims,
                closest_cluster: closest,
                density_percentile: density_percentile(&reference, &flat, config.density_k),
                epochs: model.epochs,
                final_loss: model.final_loss,
                converged: model.converged,
            };
            Ok((entry, model, fp))
        })
        .collect::<Result<_>>()?;

    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    for (i, (e, _, _)) in results.iter().enumerate() {
        let key = e.label_source.to_string();
        match best.get(&key) {
            Some(&b) if results[b].0.rmse <= e.rmse => {}
            _ => {
                best.insert(key, i);
            }
        }
    }
    let mut entries = Vec::with_capacity(results.len());
    let mut models = Vec::with_capacity(results.len());
    let mut fingerprints = Vec::with_capacity(results.len());
    for (e, m, f) in results {
        entries.push(e);
        models.push(m);
        fingerprints.push(f);
    }
    Ok(SweepOutcome {
        report: ModelSweepReport {
            schema_version: crate::SCHEMA_VERSION,
            config: config.clone(),
            vocabulary_hash: vocabulary.hash(),
            train_items: train.len(),
            heldout_items: heldout.len(),
            entries,
            best,
        },
        models,
        fingerprints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusBuilder, LabelScheme};

    fn toy() -> (Vec<SparseRow>, Vec<i32>) {
        // feature 0 marks class -1, feature 1 marks class 1
        let rows = vec![
            vec![(0, 2.0)],
            vec![(0, 1.0), (2, 1.0)],
            vec![(1, 3.0)],
            vec![(1, 1.0), (2, 2.0)],
        ];
        (rows, vec![-1, -1, 1, 1])
    }

    #[test]
    fn label_source_round_trip() {
        for s in [LabelSource::All, LabelSource::Cluster(3)] {
            assert_eq!(s.to_string().parse::<LabelSource>().unwrap(), s);
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<LabelSource>(&j).unwrap(), s);
        }
        assert!("cluster:x".parse::<LabelSource>().is_err());
    }

    #[test]
    fn modal_targets() {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        b.add_item("i", "x").unwrap();
        b.add_item("j", "y").unwrap();
        b.add_annotation("i", "a", -2).unwrap();
        b.add_annotation("i", "b", -2).unwrap();
        b.add_annotation("i", "c", 0).unwrap();
        b.add_annotation("j", "a", 1).unwrap();
        b.add_annotation("j", "c", 0).unwrap();
        let c = b.build();
        let all = modal_label_targets(&c, &[0, 1, 2]).unwrap();
        assert_eq!(all[&0], -2);
        assert_eq!(all[&1], 0);
        let b_only = modal_label_targets(&c, &[1]).unwrap();
        assert_eq!(b_only.len(), 1);
        assert_eq!(b_only[&0], -2);
        assert!(modal_label_targets(&c, &[]).is_err());
    }

    #[test]
    fn separable_toy_fits_exactly() {
        let (rows, y) = toy();
        let refs: Vec<&[(u32, f64)]> = rows.iter().map(|r| r.as_slice()).collect();
        let (m, trace) = train_classifier_traced(&refs, &y, 3, &TrainParams::new(100.0)).unwrap();
        for (r, t) in rows.iter().zip(&y) {
            assert_eq!(predict_sparse(&m, r).unwrap(), *t);
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(predict(&m, &[2.0, 0.0, 0.0]).unwrap(), -1);
    }

    #[test]
    fn heavy_penalty_flattens_weights() {
        let (rows, mut y) = toy();
        y[3] = -1;
        let refs: Vec<&[(u32, f64)]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = train_classifier(&refs, &y, 3, &TrainParams::new(1e-6)).unwrap();
        assert!(m.weights.iter().flatten().all(|w| w.abs() < 1e-4));
        for r in &rows {
            assert_eq!(predict_sparse(&m, r).unwrap(), -1);
        }
    }

    #[test]
    fn training_errors() {
        let (rows, _) = toy();
        let refs: Vec<&[(u32, f64)]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(train_classifier(&refs, &[1, 1, 1, 1], 3, &TrainParams::new(1.0)).is_err());
        assert!(train_classifier(&refs, &[0, 1, 1, 1], 3, &TrainParams::new(0.0)).is_err());
        assert!(train_classifier(&refs, &[0, 1, 1, 1], 2, &TrainParams::new(1.0)).is_err());
    }

    #[test]
    fn zero_model_predicts_smallest_label() {
        let m = ClassifierModel {
            schema_version: 1,
            label_source: LabelSource::All,
            c: 1.0,
            seed: 0,
            vocabulary_hash: String::new(),
            classes: vec![-2, 0, 1],
            weights: vec![vec![0.0; 2]; 3],
            intercepts: vec![0.0; 3],
            epochs: 0,
            final_loss: 0.0,
            converged: true,
        };
        assert_eq!(predict(&m, &[1.0, 5.0]).unwrap(), -2);
        assert!(matches!(
            predict(&m, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(predict_sparse(&m, &[(7, 1.0)]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1, 2], &[1, 2]).unwrap(), 0.0);
        assert_eq!(rmse(&[0, 0, 0], &[-2, -2, -2]).unwrap(), 2.0);
        assert_eq!(rmse(&[-2, 0], &[0, 0]).unwrap(), 2f64.sqrt());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn doc_term_counts_merge_duplicates() {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        b.add_item("i", "aa bb aa zz").unwrap();
        let c = b.build();
        let v = Vocabulary::from_parts(vec!["aa".into(), "bb".into()], vec![1, 1]);
        let x = doc_term_counts(&c, &v);
        assert_eq!(x.rows[0], vec![(0, 2.0), (1, 1.0)]);
        assert_eq!(x.n_features, 2);
    }
}
