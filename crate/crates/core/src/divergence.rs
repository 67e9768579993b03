//! Lexical divergence between two annotator positions.
//!
//! For every lexicon category, each annotator gets the total number of
//! category-term occurrences across the documents they rated at or below
//! the toxic threshold. The two clusters' count distributions are compared
//! with a two-sample Kolmogorov-Smirnov test, and p-values are adjusted
//! across categories with Holm's step-down procedure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::positions::ClusterAssignment;

/// Category name → lowercase terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    pub fn from_map(raw: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidParameter("lexicon has no categories".into()));
        }
        let mut categories = BTreeMap::new();
        for (name, terms) in raw {
            let set: BTreeSet<String> = terms
                .iter()
                .map(|t| t.trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect();
            if set.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "lexicon category `{name}` is empty"
                )));
            }
            categories.insert(name, set);
        }
        Ok(Self { categories })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.categories.keys().cloned().collect()
    }

    /// term → indices of the categories containing it
    fn term_index(&self) -> HashMap<&str, Vec<usize>> {
        let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
        for (c, terms) in self.categories.values().enumerate() {
            for t in terms {
                index.entry(t.as_str()).or_default().push(c);
            }
        }
        index
    }
}

/// Reads a `{"category": ["term", ...]}` JSON file.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let raw: BTreeMap<String, Vec<String>> = crate::util::read_json(path)?;
    Lexicon::from_map(raw)
}

/// Per-category counts for one annotator over their toxic-rated documents.
pub fn category_counts(
    corpus: &Corpus,
    lexicon: &Lexicon,
    annotator_id: &str,
    toxic_threshold: i32,
) -> Result<BTreeMap<String, u64>> {
    let ai = corpus.require_annotator(annotator_id)?;
    let counts = Counter::new(corpus, lexicon).counts(ai, toxic_threshold);
    Ok(lexicon
        .categories
        .keys()
        .cloned()
        .zip(counts.counts)
        .collect())
}

struct Counter<'a> {
    corpus: &'a Corpus,
    index: HashMap<&'a str, Vec<usize>>,
    n_categories: usize,
}

struct AnnotatorCounts {
    counts: Vec<u64>,
    toxic_docs: usize,
}

impl<'a> Counter<'a> {
    fn new(corpus: &'a Corpus, lexicon: &'a Lexicon) -> Self {
        Self {
            corpus,
            index: lexicon.term_index(),
            n_categories: lexicon.len(),
        }
    }

    fn counts(&self, annotator: usize, toxic_threshold: i32) -> AnnotatorCounts {
        let mut counts = vec![0u64; self.n_categories];
        let mut toxic_docs = 0;
        for a in self.corpus.annotator_annotations(annotator) {
            if a.label > toxic_threshold {
                continue;
            }
            toxic_docs += 1;
            for token in &self.corpus.items()[a.item].tokens {
                if let Some(cats) = self.index.get(token.as_str()) {
                    for &c in cats {
                        counts[c] += 1;
                    }
                }
            }
        }
        AnnotatorCounts { counts, toxic_docs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData(
            "KS test needs two nonempty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidParameter("KS samples contain NaN".into()));
    }
    let d = ks_statistic(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let en = (n * m / (n + m)).sqrt();
    Ok(KsResult {
        d,
        p: kolmogorov_sf(en * d),
    })
}

/// sup |F_a − F_b| over all observed values.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] == v {
            i += 1;
        }
        while j < m && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Survival function of the limiting Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        // theta-function form converges fast for small arguments
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for j in 1..=50 {
            let k = (2 * j - 1) as f64;
            let term = (c * k * k).exp();
            s += term;
            if term < 1e-300 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            s += if j % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        2.0 * s
    };
    q.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmResult {
    /// Adjusted p-values in the input order.
    pub adjusted: Vec<f64>,
    pub reject: Vec<bool>,
    /// Input indices in ascending raw-p order.
    pub order: Vec<usize>,
}

/// Holm's step-down adjustment.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<HolmResult> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!(
            "p-value {p} outside [0, 1]"
        )));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(scaled);
        adjusted[i] = running;
    }
    let reject = adjusted.iter().map(|&p| p <= alpha).collect();
    Ok(HolmResult {
        adjusted,
        reject,
        order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Raw occurrence totals.
    None,
    /// Totals divided by the annotator's number of toxic-rated documents.
    PerDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceConfig {
    pub toxic_threshold: i32,
    pub alpha: f64,
    pub top_n: usize,
    pub normalize: Normalization,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            toxic_threshold: -1,
            alpha: 0.05,
            top_n: 25,
            normalize: Normalization::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTest {
    pub category: String,
    pub d: f64,
    pub p: f64,
    pub adjusted_p: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub schema_version: u32,
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub size_a: usize,
    pub size_b: usize,
    pub config: DivergenceConfig,
    /// Every category, in lexicon order.
    pub categories: Vec<CategoryTest>,
    /// Rejected categories by descending D (at most `top_n`).
    pub top: Vec<CategoryTest>,
}

impl DivergenceReport {
    /// `category, D, p, adj_p, reject` for every category by descending D.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<&CategoryTest> = self.categories.iter().collect();
        rows.sort_by(|a, b| {
            b.d.total_cmp(&a.d)
                .then_with(|| a.category.cmp(&b.category))
        });
        let mut out = String::from("category\tD\tp\tadj_p\treject\n");
        for r in rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.category, r.d, r.p, r.adjusted_p, r.reject
            );
        }
        out
    }
}

/// Tests every category between two groups of per-annotator count vectors.
pub fn compare_counts(
    categories: &[String],
    counts_a: &[Vec<f64>],
    counts_b: &[Vec<f64>],
    alpha: f64,
    top_n: usize,
) -> Result<(Vec<CategoryTest>, Vec<CategoryTest>)> {
    let tests: Vec<KsResult> = (0..categories.len())
        .into_par_iter()
        .map(|c| {
            let a: Vec<f64> = counts_a.iter().map(|v| v[c]).collect();
            let b: Vec<f64> = counts_b.iter().map(|v| v[c]).collect();
            ks_two_sample(&a, &b)
        })
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = tests.iter().map(|t| t.p).collect();
    let holm = holm_bonferroni(&raw, alpha)?;
    let all: Vec<CategoryTest> = categories
        .iter()
        .enumerate()
        .map(|(c, name)| CategoryTest {
            category: name.clone(),
            d: tests[c].d,
            p: tests[c].p,
            adjusted_p: holm.adjusted[c],
            reject: holm.reject[c],
        })
        .collect();
    let mut top: Vec<CategoryTest> = all.iter().filter(|t| t.reject).cloned().collect();
    top.sort_by(|a, b| {
        b.d.total_cmp(&a.d)
            .then_with(|| a.category.cmp(&b.category))
    });
    top.truncate(top_n);
    Ok((all, top))
}

/// Category-count KS comparison between two clusters of annotators.
///
/// `agent_ids[i]` is the agent behind `assignment.labels[i]`.
pub fn divergence_report(
    corpus: &Corpus,
    lexicon: &Lexicon,
    agent_ids: &[String],
    assignment: &ClusterAssignment,
    cluster_a: usize,
    cluster_b: usize,
    config: &DivergenceConfig,
) -> Result<DivergenceReport> {
    corpus.scheme().check(config.toxic_threshold)?;
    let members = |c: usize| -> Result<Vec<usize>> {
        let m: Vec<usize> = agent_ids
            .iter()
            .zip(&assignment.labels)
            .filter(|(_, l)| **l == Some(c))
            .map(|(id, _)| corpus.require_annotator(id))
            .collect::<Result<_>>()?;
        if m.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "cluster {c} has {} annotators; need at least 2",
                m.len()
            )));
        }
        Ok(m)
    };
    let ma = members(cluster_a)?;
    let mb = members(cluster_b)?;
    let counter = Counter::new(corpus, lexicon);
    let vectors = |group: &[usize]| -> Vec<Vec<f64>> {
        group
            .par_iter()
            .map(|&ai| {
                let c = counter.counts(ai, config.toxic_threshold);
                let scale = match config.normalize {
                    Normalization::None => 1.0,
                    Normalization::PerDoc if c.toxic_docs > 0 => 1.0 / c.toxic_docs as f64,
                    Normalization::PerDoc => 0.0,
                };
                c.counts.iter().map(|&x| x as f64 * scale).collect()
            })
            .collect()
    };
    let (all, top) = compare_counts(
        &lexicon.names(),
        &vectors(&ma),
        &vectors(&mb),
        config.alpha,
        config.top_n,
    )?;
    Ok(DivergenceReport {
        schema_version: crate::SCHEMA_VERSION,
        cluster_a,
        cluster_b,
        size_a: ma.len(),
        size_b: mb.len(),
        config: config.clone(),
        categories: all,
        top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusBuilder, LabelScheme};

    #[test]
    fn lexicon_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.json");
        std::fs::write(&p, r#"{"death":["kill","die","Kill"]}"#).unwrap();
        let lex = load_lexicon(&p).unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.categories["death"].len(), 2);
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_lexicon(&p), Err(Error::Json { .. })));
        std::fs::write(&p, r#"{"x":[]}"#).unwrap();
        assert!(load_lexicon(&p).is_err());
        std::fs::write(&p, "{}").unwrap();
        assert!(load_lexicon(&p).is_err());
    }

    fn lex(pairs: &[(&str, &[&str])]) -> Lexicon {
        Lexicon::from_map(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_multiplicity_and_overlap() {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        b.add_item("d1", "I will kill you, kill").unwrap();
        b.add_item("d2", "kill it").unwrap();
        b.add_annotation("d1", "w", -2).unwrap();
        b.add_annotation("d2", "w", 1).unwrap();
        b.add_annotation("d2", "v", 0).unwrap();
        let c = b.build();
        let l = lex(&[("death", &["kill"]), ("violence", &["kill", "hit"])]);
        let counts = category_counts(&c, &l, "w", -1).unwrap();
        assert_eq!(counts["death"], 2);
        assert_eq!(counts["violence"], 2);
        let none = category_counts(&c, &l, "v", -1).unwrap();
        assert!(none.values().all(|&v| v == 0));
        assert!(matches!(
            category_counts(&c, &l, "nobody", -1),
            Err(Error::UnknownAnnotator(_))
        ));
    }

    #[test]
    fn ks_examples() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap().d, 1.0);
        assert_eq!(
            ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]),
            0.25
        );
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn kolmogorov_sf_reference_points() {
        // reference values of the limiting distribution's survival function
        assert!((kolmogorov_sf(1.0) - 0.269_999_671_677_355_9).abs() < 1e-12);
        assert!((kolmogorov_sf(1.36) - 0.049_485_876_755_377_88).abs() < 1e-12);
        assert!((kolmogorov_sf(0.5) - 0.963_945_243_664_705_6).abs() < 1e-12);
        // the two series agree where they meet
        let lo = kolmogorov_sf(1.18 - 1e-12);
        let hi = kolmogorov_sf(1.18);
        assert!((lo - hi).abs() < 1e-10);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!(kolmogorov_sf(10.0) < 1e-80);
    }

    #[test]
    fn holm_examples() {
        let h = holm_bonferroni(&[0.01, 0.04, 0.03], 0.05).unwrap();
        let expected = [0.03, 0.06, 0.06];
        for (a, e) in h.adjusted.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(h.reject, vec![true, false, false]);
        assert_eq!(h.order, vec![0, 2, 1]);
        assert_eq!(holm_bonferroni(&[0.2], 0.05).unwrap().adjusted, vec![0.2]);
        let z = holm_bonferroni(&[0.0, 0.0], 0.05).unwrap();
        assert_eq!(z.adjusted, vec![0.0, 0.0]);
        assert_eq!(z.reject, vec![true, true]);
        assert!(holm_bonferroni(&[1.5], 0.05).is_err());
    }

    #[test]
    fn report_same_cluster_passes_nothing() {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        for i in 0..4 {
            b.add_item(format!("d{i}"), "kill kill hate").unwrap();
        }
        for (i, w) in ["a", "b", "c", "d"].iter().enumerate() {
            b.add_annotation(&format!("d{i}"), w, -2).unwrap();
        }
        let c = b.build();
        let l = lex(&[("death", &["kill"]), ("hate", &["hate"])]);
        let ids: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
        let asg = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(1), Some(1)],
            eps: 1.0,
            min_samples: 1,
        };
        let r = divergence_report(&c, &l, &ids, &asg, 0, 0, &DivergenceConfig::default()).unwrap();
        assert!(r.top.is_empty());
        assert!(r.categories.iter().all(|t| t.d == 0.0 && t.p == 1.0));
        let one = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(0), Some(1)],
            ..asg
        };
        assert!(matches!(
            divergence_report(&c, &l, &ids, &one, 0, 1, &DivergenceConfig::default()),
            Err(Error::InsufficientData(_))
        ));
        assert!(r.to_tsv().starts_with("category\tD\tp\tadj_p\treject\n"));
    }
}
