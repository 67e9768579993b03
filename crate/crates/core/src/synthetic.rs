//! Seeded generators for corpora with known structure.
//!
//! * [`disjoint_topics`]: documents drawn from topics with disjoint
//!   vocabularies.
//! * [`two_policy_population`]: annotators split between two labeling
//!   policies that disagree on some topics.
//! * [`lexicon_world`]: two annotator groups whose toxic-rated documents use
//!   lexicon categories at configurable rates.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusBuilder, LabelScheme};
use crate::divergence::Lexicon;
use crate::positions::ClusterAssignment;
use crate::util::rng;

/// Term `i` of planted topic `t`.
pub fn topic_word(t: usize, i: usize) -> String {
    format!("t{t}w{i}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjointTopicsConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub docs: usize,
    pub doc_len: usize,
    /// Share of a document's tokens drawn from its dominant topic; the rest
    /// come from the other topics uniformly.
    pub purity: f64,
    pub seed: u64,
}

impl Default for DisjointTopicsConfig {
    fn default() -> Self {
        Self {
            topics: 3,
            words_per_topic: 30,
            docs: 300,
            doc_len: 40,
            purity: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisjointTopics {
    pub docs: Vec<Vec<String>>,
    /// Dominant topic per document.
    pub dominant: Vec<usize>,
}

impl DisjointTopics {
    /// Planted topic of a generated term.
    pub fn topic_of(word: &str) -> Option<usize> {
        let rest = word.strip_prefix('t')?;
        let (t, _) = rest.split_once('w')?;
        t.parse().ok()
    }
}

fn draw_doc<R: Rng>(r: &mut R, dominant: usize, cfg: &DisjointTopicsConfig) -> Vec<String> {
    (0..cfg.doc_len)
        .map(|_| {
            let t = if cfg.topics == 1 || r.random::<f64>() < cfg.purity {
                dominant
            } else {
                let other = r.random_range(0..cfg.topics - 1);
                if other >= dominant {
                    other + 1
                } else {
                    other
                }
            };
            topic_word(t, r.random_range(0..cfg.words_per_topic))
        })
        .collect()
}

pub fn disjoint_topics(cfg: &DisjointTopicsConfig) -> DisjointTopics {
    let mut r = rng(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut dominant = Vec::with_capacity(cfg.docs);
    for d in 0..cfg.docs {
        let t = d % cfg.topics;
        docs.push(draw_doc(&mut r, t, cfg));
        dominant.push(t);
    }
    DisjointTopics { docs, dominant }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPolicyConfig {
    pub annotators: usize,
    pub docs: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub doc_len: usize,
    pub purity: f64,
    pub annotations_per_annotator: usize,
    /// Fraction of annotators following policy 0.
    pub majority_share: f64,
    /// Probability that a label is replaced by one drawn uniformly from the
    /// labels the policies use.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for TwoPolicyConfig {
    fn default() -> Self {
        Self {
            annotators: 200,
            docs: 2000,
            topics: 3,
            words_per_topic: 40,
            doc_len: 30,
            purity: 0.9,
            annotations_per_annotator: 60,
            majority_share: 0.6,
            label_noise: 0.1,
            seed: 0,
        }
    }
}

/// Label policy `p` assigns to documents of topic `t`.
///
/// Policy 0 cycles through a fixed label sequence; policy 1 uses the same
/// sequence shifted by one topic, so the two disagree on every topic when
/// there are at least two.
pub fn policy_label(policy: usize, topic: usize, topics: usize) -> i32 {
    const SEQ: [i32; 5] = [-2, 0, 1, -1, 2];
    let t = if policy == 0 {
        topic
    } else {
        (topic + 1) % topics
    };
    SEQ[t % SEQ.len()]
}

#[derive(Debug, Clone)]
pub struct TwoPolicyPopulation {
    pub corpus: Corpus,
    /// annotator id → planted policy
    pub policy: BTreeMap<String, usize>,
    /// Dominant topic per item, in corpus item order.
    pub dominant: Vec<usize>,
}

impl TwoPolicyPopulation {
    /// Planted policies aligned with `agent_ids`.
    pub fn truth(&self, agent_ids: &[String]) -> Vec<Option<usize>> {
        agent_ids
            .iter()
            .map(|id| self.policy.get(id).copied())
            .collect()
    }
}

/// Annotators in two policy groups label topic-dominated documents.
///
/// Noise only draws from labels some policy uses: a fingerprint column is
/// a full topic distribution even when a single document supports it, so
/// stray labels would split each policy into sub-groups by support pattern.
/// Each annotator also gets `gender` and `age_group` traits drawn
/// independently of their policy.
pub fn two_policy_population(cfg: &TwoPolicyConfig) -> TwoPolicyPopulation {
    let mut r = rng(cfg.seed);
    let topic_cfg = DisjointTopicsConfig {
        topics: cfg.topics,
        words_per_topic: cfg.words_per_topic,
        docs: cfg.docs,
        doc_len: cfg.doc_len,
        purity: cfg.purity,
        seed: cfg.seed,
    };
    let scheme = LabelScheme::toxicity();
    let mut b = CorpusBuilder::new(scheme.clone());
    let width = cfg.docs.max(1).to_string().len();
    let mut dominant = Vec::with_capacity(cfg.docs);
    for d in 0..cfg.docs {
        let t = d % cfg.topics;
        let text = draw_doc(&mut r, t, &topic_cfg).join(" ");
        b.add_item(format!("d{d:0width$}"), text)
            .expect("unique ids");
        dominant.push(t);
    }

    let a_width = cfg.annotators.max(1).to_string().len();
    let mut ids: Vec<String> = (0..cfg.annotators)
        .map(|a| format!("a{a:0a_width$}"))
        .collect();
    ids.shuffle(&mut r);
    let n_major = (cfg.annotators as f64 * cfg.majority_share).round() as usize;
    let mut policy = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        policy.insert(id.clone(), usize::from(i >= n_major));
    }

    let genders = ["female", "male"];
    let ages = ["18-30", "30-45", "45-60"];
    let doc_indices: Vec<usize> = (0..cfg.docs).collect();
    let mut used: Vec<i32> = (0..2)
        .flat_map(|p| (0..cfg.topics).map(move |t| policy_label(p, t, cfg.topics)))
        .collect();
    used.sort_unstable();
    used.dedup();
    for (id, &p) in &policy {
        b.set_trait(id, "gender", genders[r.random_range(0..genders.len())]);
        b.set_trait(id, "age_group", ages[r.random_range(0..ages.len())]);
        let n = cfg.annotations_per_annotator.min(cfg.docs);
        let chosen: Vec<usize> = doc_indices.choose_multiple(&mut r, n).copied().collect();
        for d in chosen {
            let label = if r.random::<f64>() < cfg.label_noise {
                used[r.random_range(0..used.len())]
            } else {
                policy_label(p, dominant[d], cfg.topics)
            };
            b.add_annotation(&format!("d{d:0width$}"), id, label)
                .expect("valid generated annotation");
        }
    }
    TwoPolicyPopulation {
        corpus: b.build(),
        policy,
        dominant,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconWorldConfig {
    pub categories: usize,
    pub terms_per_category: usize,
    /// Categories whose rate is multiplied by `effect` for group 1.
    pub shifted: Vec<usize>,
    pub effect: f64,
    pub group_size: usize,
    pub docs_per_annotator: usize,
    pub doc_len: usize,
    /// Per-token probability of drawing a term from each category.
    pub base_rate: f64,
    pub seed: u64,
}

/// Rate multiplier at which the shifted categories are detected with power
/// at least 0.9 under the default configuration.
pub const REFERENCE_EFFECT: f64 = 1.5;

impl Default for LexiconWorldConfig {
    fn default() -> Self {
        Self {
            categories: 8,
            terms_per_category: 5,
            shifted: vec![0, 1, 2],
            effect: REFERENCE_EFFECT,
            group_size: 60,
            docs_per_annotator: 10,
            doc_len: 30,
            base_rate: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LexiconWorld {
    pub corpus: Corpus,
    pub lexicon: Lexicon,
    pub agent_ids: Vec<String>,
    pub assignment: ClusterAssignment,
}

/// Name of generated category `c`.
pub fn category_name(c: usize) -> String {
    format!("cat{c:02}")
}

/// Two equally sized annotator groups, each annotator rating their own
/// documents as toxic. Tokens are category terms with probability
/// `base_rate` per category (scaled by `effect` for shifted categories in
/// group 1), otherwise filler words.
pub fn lexicon_world(cfg: &LexiconWorldConfig) -> LexiconWorld {
    let mut r = rng(cfg.seed);
    let term = |c: usize, i: usize| format!("c{c}term{i}");
    let lexicon = Lexicon::from_map(
        (0..cfg.categories)
            .map(|c| {
                (
                    category_name(c),
                    (0..cfg.terms_per_category).map(|i| term(c, i)).collect(),
                )
            })
            .collect(),
    )
    .expect("generated lexicon is valid");

    let mut b = CorpusBuilder::new(LabelScheme::toxicity());
    let mut agent_ids = Vec::new();
    let mut labels = Vec::new();
    let mut doc = 0usize;
    for group in 0..2 {
        let rates: Vec<f64> = (0..cfg.categories)
            .map(|c| {
                if group == 1 && cfg.shifted.contains(&c) {
                    cfg.base_rate * cfg.effect
                } else {
                    cfg.base_rate
                }
            })
            .collect();
        for a in 0..cfg.group_size {
            let id = format!("g{group}a{a:04}");
            for _ in 0..cfg.docs_per_annotator {
                let tokens: Vec<String> = (0..cfg.doc_len)
                    .map(|_| {
                        let mut u = r.random::<f64>();
                        for (c, &p) in rates.iter().enumerate() {
                            if u < p {
                                return term(c, r.random_range(0..cfg.terms_per_category));
                            }
                            u -= p;
                        }
                        format!("filler{}", r.random_range(0..50))
                    })
                    .collect();
                let item = format!("doc{doc:07}");
                doc += 1;
                b.add_item(&item, tokens.join(" ")).expect("unique ids");
                b.add_annotation(&item, &id, -2).expect("valid annotation");
            }
            agent_ids.push(id);
            labels.push(Some(group));
        }
    }
    LexiconWorld {
        corpus: b.build(),
        lexicon,
        agent_ids,
        assignment: ClusterAssignment {
            labels,
            eps: 0.0,
            min_samples: 1,
        },
    }
}
