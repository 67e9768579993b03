//! Latent Dirichlet Allocation by collapsed Gibbs sampling.
//!
//! Documents are sequences of vocabulary ids. The fitted [`TopicModel`]
//! keeps the final word-topic pseudocounts and a smoothed point estimate of
//! every training document's topic distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::util::{derive_seed, rng, sha256_hex, to_json_bytes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    /// Document-topic prior; `None` means 50/K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            seed: 0,
        }
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > u16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "K must be in 1..=65535, got {}",
                self.k
            )));
        }
        let alpha = self.resolved_alpha();
        if !(alpha > 0.0 && alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(
                "LDA hyperparameters must be positive".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted topic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub schema_version: u32,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub vocabulary_hash: String,
    pub vocabulary: Vec<String>,
    /// K rows × V columns of assignment counts.
    pub word_topic_counts: Vec<Vec<u32>>,
    /// Per training document, smoothed topic proportions.
    pub doc_topic: Vec<Vec<f64>>,
    /// Training documents without in-vocabulary tokens (uniform rows).
    pub skipped_docs: Vec<usize>,
}

/// Sequential collapsed Gibbs sampler state.
pub struct LdaSampler<'d> {
    docs: &'d [Vec<u32>],
    k: usize,
    v: usize,
    alpha: f64,
    beta: f64,
    /// word-major: `word * k + topic`
    word_topic: Vec<u32>,
    topic_totals: Vec<u64>,
    doc_topic: Vec<u32>,
    assignments: Vec<Vec<u16>>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
    sweeps: usize,
}

impl<'d> LdaSampler<'d> {
    /// Random initial assignment of every token.
    pub fn new(docs: &'d [Vec<u32>], vocab_size: usize, params: &LdaParams) -> Result<Self> {
        params.validate()?;
        if vocab_size == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if docs.is_empty() {
            return Err(Error::InsufficientData("no documents".into()));
        }
        if let Some(&w) = docs.iter().flatten().find(|&&w| w as usize >= vocab_size) {
            return Err(Error::DimensionMismatch {
                expected: vocab_size,
                actual: w as usize + 1,
            });
        }
        let k = params.k;
        let mut rng = rng(params.seed);
        let mut word_topic = vec![0u32; vocab_size * k];
        let mut topic_totals = vec![0u64; k];
        let mut doc_topic = vec![0u32; docs.len() * k];
        let mut assignments = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut z = Vec::with_capacity(doc.len());
            for &w in doc {
                let t = rng.random_range(0..k);
                word_topic[w as usize * k + t] += 1;
                topic_totals[t] += 1;
                doc_topic[d * k + t] += 1;
                z.push(t as u16);
            }
            assignments.push(z);
        }
        Ok(Self {
            docs,
            k,
            v: vocab_size,
            alpha: params.resolved_alpha(),
            beta: params.beta,
            word_topic,
            topic_totals,
            doc_topic,
            assignments,
            rng,
            probs: vec![0.0; k],
            sweeps: 0,
        })
    }

    /// One pass over every token.
    pub fn sweep(&mut self) {
        let k = self.k;
        let v_beta = self.v as f64 * self.beta;
        for (d, doc) in self.docs.iter().enumerate() {
            let dt = &mut self.doc_topic[d * k..(d + 1) * k];
            for (i, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = self.assignments[d][i] as usize;
                let wt = &mut self.word_topic[w * k..(w + 1) * k];
                wt[old] -= 1;
                self.topic_totals[old] -= 1;
                dt[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    total += (dt[t] as f64 + self.alpha) * (wt[t] as f64 + self.beta)
                        / (self.topic_totals[t] as f64 + v_beta);
                    self.probs[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.probs.iter().position(|&c| u < c).unwrap_or(k - 1);

                wt[new] += 1;
                self.topic_totals[new] += 1;
                dt[new] += 1;
                self.assignments[d][i] = new as u16;
            }
        }
        self.sweeps += 1;
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Sum of all word-topic counts.
    pub fn total_assignments(&self) -> u64 {
        self.word_topic.iter().map(|&c| c as u64).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.len() as u64).sum()
    }

    /// Collapsed log p(w | z) of the current state.
    pub fn log_likelihood(&self) -> f64 {
        word_log_likelihood(
            self.k,
            self.v,
            self.beta,
            |t, w| self.word_topic[w * self.k + t],
            &self.topic_totals,
        )
    }

    pub fn into_model(self, vocabulary: &Vocabulary, params: &LdaParams) -> TopicModel {
        let k = self.k;
        let mut word_topic_counts = vec![vec![0u32; self.v]; k];
        for w in 0..self.v {
            for t in 0..k {
                word_topic_counts[t][w] = self.word_topic[w * k + t];
            }
        }
        let mut skipped = Vec::new();
        let doc_topic = self
            .docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                if doc.is_empty() {
                    skipped.push(d);
                }
                smoothed(&self.doc_topic[d * k..(d + 1) * k], self.alpha)
            })
            .collect();
        TopicModel {
            schema_version: crate::SCHEMA_VERSION,
            k,
            alpha: self.alpha,
            beta: self.beta,
            iterations: params.iterations,
            seed: params.seed,
            vocabulary_hash: vocabulary.hash(),
            vocabulary: vocabulary.terms().to_vec(),
            word_topic_counts,
            doc_topic,
            skipped_docs: skipped,
        }
    }
}

fn smoothed<T: Copy + Into<f64>>(counts: &[T], alpha: f64) -> Vec<f64> {
    let n: f64 = counts.iter().map(|&c| c.into()).sum();
    let denom = n + counts.len() as f64 * alpha;
    counts.iter().map(|&c| (c.into() + alpha) / denom).collect()
}

fn word_log_likelihood(
    k: usize,
    v: usize,
    beta: f64,
    count: impl Fn(usize, usize) -> u32,
    totals: &[u64],
) -> f64 {
    let mut ll = k as f64 * (ln_gamma(v as f64 * beta) - v as f64 * ln_gamma(beta));
    for t in 0..k {
        for w in 0..v {
            let c = count(t, w);
            if c > 0 {
                ll += ln_gamma(c as f64 + beta);
            } else {
                ll += ln_gamma(beta);
            }
        }
        ll -= ln_gamma(totals[t] as f64 + v as f64 * beta);
    }
    ll
}

/// Fits LDA on pre-encoded documents.
///
/// Documents without in-vocabulary tokens are kept (uniform topic rows) and
/// listed in [`TopicModel::skipped_docs`].
pub fn fit_lda(
    docs: &[Vec<u32>],
    vocabulary: &Vocabulary,
    params: &LdaParams,
) -> Result<TopicModel> {
    let mut sampler = LdaSampler::new(docs, vocabulary.len(), params)?;
    if sampler.total_tokens() == 0 {
        return Err(Error::InsufficientData("no in-vocabulary tokens".into()));
    }
    for _ in 0..params.iterations {
        sampler.sweep();
    }
    let model = sampler.into_model(vocabulary, params);
    if !model.skipped_docs.is_empty() {
        log::warn!(
            "{} documents have no in-vocabulary tokens and get uniform topic rows",
            model.skipped_docs.len()
        );
    }
    Ok(model)
}

impl TopicModel {
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn topic_total(&self, topic: usize) -> u64 {
        self.word_topic_counts[topic]
            .iter()
            .map(|&c| c as u64)
            .sum()
    }

    /// Smoothed word distributions, word-major (`word * K + topic`).
    pub fn phi_word_major(&self) -> Vec<f64> {
        let k = self.k;
        let v = self.vocab_size();
        let totals: Vec<f64> = (0..k)
            .map(|t| self.topic_total(t) as f64 + v as f64 * self.beta)
            .collect();
        let mut phi = vec![0.0; v * k];
        for t in 0..k {
            for w in 0..v {
                phi[w * k + t] = (self.word_topic_counts[t][w] as f64 + self.beta) / totals[t];
            }
        }
        phi
    }

    /// Topic `t` as a distribution over the vocabulary.
    pub fn topic_word_distribution(&self, topic: usize) -> Vec<f64> {
        let v = self.vocab_size() as f64;
        let total = self.topic_total(topic) as f64 + v * self.beta;
        self.word_topic_counts[topic]
            .iter()
            .map(|&c| (c as f64 + self.beta) / total)
            .collect()
    }

    pub fn log_likelihood(&self) -> f64 {
        let totals: Vec<u64> = (0..self.k).map(|t| self.topic_total(t)).collect();
        word_log_likelihood(
            self.k,
            self.vocab_size(),
            self.beta,
            |t, w| self.word_topic_counts[t][w],
            &totals,
        )
    }

    pub fn inferencer(&self) -> Inferencer<'_> {
        Inferencer {
            model: self,
            phi: self.phi_word_major(),
        }
    }

    /// SHA-256 of the serialized model.
    pub fn hash(&self) -> String {
        sha256_hex(&to_json_bytes(self))
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_parts(self.vocabulary.clone(), vec![0; self.vocabulary.len()])
    }
}

/// Fold-in inference with the model's word distributions held fixed.
pub struct Inferencer<'m> {
    model: &'m TopicModel,
    phi: Vec<f64>,
}

impl Inferencer<'_> {
    /// Topic distribution of an unseen document.
    ///
    /// Runs `iterations` fold-in sweeps and averages the smoothed estimate
    /// over the second half of them. Documents without in-vocabulary tokens
    /// get the uniform distribution.
    pub fn infer(&self, doc: &[u32], iterations: usize, seed: u64) -> Vec<f64> {
        let k = self.model.k;
        if doc.is_empty() {
            return vec![1.0 / k as f64; k];
        }
        let alpha = self.model.alpha;
        let mut rng = rng(seed);
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = doc
            .iter()
            .map(|_| {
                let t = rng.random_range(0..k);
                counts[t] += 1;
                t
            })
            .collect();
        let iterations = iterations.max(1);
        let burn_in = iterations / 2;
        let mut acc = vec![0.0; k];
        let mut probs = vec![0.0; k];
        for it in 0..iterations {
            for (i, &w) in doc.iter().enumerate() {
                let phi = &self.phi[w as usize * k..(w as usize + 1) * k];
                counts[z[i]] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (counts[t] as f64 + alpha) * phi[t];
                    probs[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let t = probs.iter().position(|&c| u < c).unwrap_or(k - 1);
                counts[t] += 1;
                z[i] = t;
            }
            if it >= burn_in {
                for (a, s) in acc.iter_mut().zip(smoothed(&counts, alpha)) {
                    *a += s;
                }
            }
        }
        let sum: f64 = acc.iter().sum();
        acc.iter().map(|a| a / sum).collect()
    }

    /// log Σ_t θ_t φ_tw
    pub fn token_log_prob(&self, theta: &[f64], w: u32) -> f64 {
        let k = self.model.k;
        let phi = &self.phi[w as usize * k..(w as usize + 1) * k];
        theta.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>().ln()
    }
}

/// Topic distribution of an unseen document (see [`Inferencer::infer`]).
pub fn infer_doc_topics(model: &TopicModel, doc: &[u32], iterations: usize, seed: u64) -> Vec<f64> {
    if doc.is_empty() {
        log::warn!("document has no in-vocabulary tokens; returning uniform topics");
    }
    model.inferencer().infer(doc, iterations, seed)
}

/// exp(−mean token log-likelihood) given per-document topic proportions.
pub fn perplexity_with(model: &TopicModel, docs: &[Vec<u32>], thetas: &[Vec<f64>]) -> Result<f64> {
    if docs.len() != thetas.len() {
        return Err(Error::DimensionMismatch {
            expected: docs.len(),
            actual: thetas.len(),
        });
    }
    let inf = model.inferencer();
    let mut ll = 0.0;
    let mut n = 0usize;
    for (doc, theta) in docs.iter().zip(thetas) {
        for &w in doc {
            ll += inf.token_log_prob(theta, w);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(
            "documents contain no in-vocabulary tokens".into(),
        ));
    }
    Ok((-ll / n as f64).exp())
}

/// Perplexity of the training documents under their fitted proportions.
pub fn training_perplexity(model: &TopicModel, docs: &[Vec<u32>]) -> Result<f64> {
    perplexity_with(model, docs, &model.doc_topic)
}

/// Held-out perplexity by document completion: proportions are folded in
/// on the even-position tokens of each document and the odd-position
/// tokens are scored.
pub fn heldout_perplexity(
    model: &TopicModel,
    docs: &[Vec<u32>],
    fold_in_iterations: usize,
    seed: u64,
) -> Result<f64> {
    let inf = model.inferencer();
    let mut ll = 0.0;
    let mut n = 0usize;
    for (d, doc) in docs.iter().enumerate() {
        let observed: Vec<u32> = doc.iter().step_by(2).copied().collect();
        let theta = inf.infer(&observed, fold_in_iterations, derive_seed(seed, d as u64));
        for &w in doc.iter().skip(1).step_by(2) {
            ll += inf.token_log_prob(&theta, w);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(
            "held-out documents contain no scorable tokens".into(),
        ));
    }
    Ok((-ll / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEvaluation {
    pub k: usize,
    pub training_perplexity: f64,
    pub heldout_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub schema_version: u32,
    pub evaluations: Vec<KEvaluation>,
    pub chosen_k: usize,
    pub train_docs: usize,
    pub heldout_docs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectKConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub holdout_ratio: f64,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub fold_in_iterations: usize,
    pub seed: u64,
}

impl Default for SelectKConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 20,
            holdout_ratio: 0.2,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            fold_in_iterations: 50,
            seed: 0,
        }
    }
}

/// Fits every K in range on a seeded train split and picks the one with the
/// lowest held-out perplexity (ties go to the smaller K).
pub fn select_k(
    docs: &[Vec<u32>],
    vocabulary: &Vocabulary,
    config: &SelectKConfig,
) -> Result<KSelectionReport> {
    if config.k_min == 0 || config.k_min > config.k_max {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k_min <= k_max, got {}..{}",
            config.k_min, config.k_max
        )));
    }
    if !(config.holdout_ratio > 0.0 && config.holdout_ratio < 1.0) {
        return Err(Error::InvalidParameter(
            "holdout_ratio must be in (0, 1)".into(),
        ));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng(config.seed));
    let n_hold = ((docs.len() as f64) * config.holdout_ratio).round() as usize;
    let (hold_idx, train_idx) = order.split_at(n_hold.min(docs.len()));
    let hold: Vec<Vec<u32>> = hold_idx.iter().map(|&i| docs[i].clone()).collect();
    let train: Vec<Vec<u32>> = train_idx.iter().map(|&i| docs[i].clone()).collect();
    if hold.iter().map(|d| d.len() / 2).sum::<usize>() == 0 {
        return Err(Error::InsufficientData(
            "holdout split contains no scorable tokens".into(),
        ));
    }
    if train.iter().all(|d| d.is_empty()) {
        return Err(Error::InsufficientData(
            "training split contains no tokens".into(),
        ));
    }

    let evaluations: Vec<KEvaluation> = (config.k_min..=config.k_max)
        .into_par_iter()
        .map(|k| {
            let params = LdaParams {
                k,
                alpha: config.alpha,
                beta: config.beta,
                iterations: config.iterations,
                seed: derive_seed(config.seed, k as u64),
            };
            let model = fit_lda(&train, vocabulary, &params)?;
            Ok(KEvaluation {
                k,
                training_perplexity: training_perplexity(&model, &train)?,
                heldout_perplexity: heldout_perplexity(
                    &model,
                    &hold,
                    config.fold_in_iterations,
                    derive_seed(config.seed, 1_000 + k as u64),
                )?,
            })
        })
        .collect::<Result<_>>()?;

    let chosen_k = evaluations
        .iter()
        .fold(None::<&KEvaluation>, |best, e| match best {
            Some(b) if b.heldout_perplexity <= e.heldout_perplexity => Some(b),
            _ => Some(e),
        })
        .map(|e| e.k)
        .expect("at least one K evaluated");

    Ok(KSelectionReport {
        schema_version: crate::SCHEMA_VERSION,
        evaluations,
        chosen_k,
        train_docs: train.len(),
        heldout_docs: hold.len(),
        seed: config.seed,
    })
}

/// The `n` highest-count terms of a topic, ties broken lexicographically.
pub fn top_words(model: &TopicModel, topic: usize, n: usize) -> Result<Vec<String>> {
    if topic >= model.k {
        return Err(Error::InvalidParameter(format!(
            "topic {topic} out of range for K={}",
            model.k
        )));
    }
    let counts = &model.word_topic_counts[topic];
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then_with(|| model.vocabulary[a].cmp(&model.vocabulary[b]))
    });
    Ok(idx
        .into_iter()
        .take(n)
        .map(|i| model.vocabulary[i].clone())
        .collect())
}
