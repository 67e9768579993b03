//! Reliability baselines: worker-unit and media-unit vectors, pairwise
//! worker agreement, and Krippendorff's alpha.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Annotation, Corpus, LabelScheme};
use crate::error::{Error, Result};

/// One-hot label vector for one worker on one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerUnitVector {
    pub annotator_id: String,
    pub item_id: String,
    pub vector: Vec<u32>,
}

/// Sum of the worker-unit vectors on an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaUnitVector {
    pub item_id: String,
    pub vector: Vec<u32>,
}

pub fn one_hot(label: i32, scheme: &LabelScheme) -> Result<Vec<u32>> {
    let idx = scheme.check(label)?;
    let mut v = vec![0; scheme.len()];
    v[idx] = 1;
    Ok(v)
}

pub fn worker_unit_vector(corpus: &Corpus, annotation: &Annotation) -> Result<WorkerUnitVector> {
    Ok(WorkerUnitVector {
        annotator_id: corpus.annotators()[annotation.annotator]
            .annotator_id
            .clone(),
        item_id: corpus.items()[annotation.item].item_id.clone(),
        vector: one_hot(annotation.label, corpus.scheme())?,
    })
}

pub fn media_unit_vector(corpus: &Corpus, item: usize) -> MediaUnitVector {
    let mut vector = vec![0u32; corpus.scheme().len()];
    for a in corpus.item_annotations(item) {
        // labels were validated at load time
        vector[corpus.scheme().check(a.label).expect("label in scheme")] += 1;
    }
    MediaUnitVector {
        item_id: corpus.items()[item].item_id.clone(),
        vector,
    }
}

/// Cosine similarity between two workers' concatenated one-hot vectors over
/// the items both annotated.
///
/// Returns `Ok(None)` when the workers share no item. With one-hot blocks
/// the cosine reduces to the fraction of shared items with equal labels.
pub fn pairwise_worker_agreement(corpus: &Corpus, a: &str, b: &str) -> Result<Option<f64>> {
    let ia = corpus.require_annotator(a)?;
    let ib = corpus.require_annotator(b)?;
    let labels_a: HashMap<usize, i32> = corpus
        .annotator_annotations(ia)
        .map(|x| (x.item, x.label))
        .collect();
    let mut shared = 0usize;
    let mut agree = 0usize;
    for x in corpus.annotator_annotations(ib) {
        if let Some(&la) = labels_a.get(&x.item) {
            shared += 1;
            if la == x.label {
                agree += 1;
            }
        }
    }
    if shared == 0 {
        return Ok(None);
    }
    Ok(Some(agree as f64 / shared as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMetric {
    Nominal,
    Ordinal,
    Interval,
}

impl std::str::FromStr for AlphaMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "ordinal" => Ok(Self::Ordinal),
            "interval" => Ok(Self::Interval),
            other => Err(Error::InvalidParameter(format!(
                "unknown alpha metric `{other}`"
            ))),
        }
    }
}

/// L×L coincidence matrix over pairable values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceMatrix {
    pub values: Vec<i32>,
    pub counts: Vec<Vec<f64>>,
}

impl CoincidenceMatrix {
    /// Builds the matrix from per-unit label-count vectors. Units with fewer
    /// than two values are not pairable and contribute nothing.
    pub fn from_unit_counts<'a, I>(values: Vec<i32>, units: I) -> Self
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let l = values.len();
        let mut counts = vec![vec![0.0; l]; l];
        for unit in units {
            let m: u32 = unit.iter().sum();
            if m < 2 {
                continue;
            }
            let w = 1.0 / (m - 1) as f64;
            for c in 0..l {
                if unit[c] == 0 {
                    continue;
                }
                for k in 0..l {
                    let pairs = if c == k {
                        unit[c] as f64 * (unit[c] as f64 - 1.0)
                    } else {
                        unit[c] as f64 * unit[k] as f64
                    };
                    counts[c][k] += pairs * w;
                }
            }
        }
        Self { values, counts }
    }

    pub fn marginals(&self) -> Vec<f64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// Squared difference between value indices `c` and `k`.
    pub fn delta_squared(&self, metric: AlphaMetric, c: usize, k: usize) -> f64 {
        match metric {
            AlphaMetric::Nominal => f64::from(u8::from(c != k)),
            AlphaMetric::Interval => {
                let d = (self.values[c] - self.values[k]) as f64;
                d * d
            }
            AlphaMetric::Ordinal => {
                let n = self.marginals();
                let (lo, hi) = if c <= k { (c, k) } else { (k, c) };
                let between: f64 = n[lo..=hi].iter().sum();
                let d = between - (n[c] + n[k]) / 2.0;
                d * d
            }
        }
    }

    /// Alpha from observed and expected disagreement; `None` without
    /// pairable values.
    pub fn alpha(&self, metric: AlphaMetric) -> Option<f64> {
        let l = self.values.len();
        let n_c = self.marginals();
        let n: f64 = n_c.iter().sum();
        if n <= 1.0 {
            return None;
        }
        let mut observed = 0.0;
        let mut expected = 0.0;
        for c in 0..l {
            for k in 0..l {
                let d2 = self.delta_squared(metric, c, k);
                observed += self.counts[c][k] * d2;
                expected += n_c[c] * n_c[k] * d2;
            }
        }
        if observed == 0.0 {
            return Some(1.0);
        }
        Some(1.0 - (n - 1.0) * observed / expected)
    }
}

/// Krippendorff's alpha over every item of the corpus.
pub fn krippendorff_alpha(corpus: &Corpus, metric: AlphaMetric) -> Result<f64> {
    let units: Vec<Vec<u32>> = (0..corpus.items().len())
        .map(|i| media_unit_vector(corpus, i).vector)
        .collect();
    let matrix = CoincidenceMatrix::from_unit_counts(
        corpus.scheme().labels().to_vec(),
        units.iter().map(|u| u.as_slice()),
    );
    matrix.alpha(metric).ok_or_else(|| {
        Error::InsufficientData("no item has two or more annotations; alpha undefined".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub schema_version: u32,
    pub metric: AlphaMetric,
    pub alpha: f64,
    pub alpha_by_metric: BTreeMap<String, f64>,
    pub item_annotation_histogram: BTreeMap<usize, usize>,
}

pub fn agreement_report(corpus: &Corpus, metric: AlphaMetric) -> Result<AgreementReport> {
    let mut by_metric = BTreeMap::new();
    for m in [
        AlphaMetric::Nominal,
        AlphaMetric::Ordinal,
        AlphaMetric::Interval,
    ] {
        let name = serde_json::to_value(m).expect("enum serializes");
        by_metric.insert(
            name.as_str().expect("string tag").to_string(),
            krippendorff_alpha(corpus, m)?,
        );
    }
    let mut histogram = BTreeMap::new();
    for item in 0..corpus.items().len() {
        *histogram
            .entry(corpus.item_annotation_count(item))
            .or_insert(0) += 1;
    }
    Ok(AgreementReport {
        schema_version: crate::SCHEMA_VERSION,
        metric,
        alpha: krippendorff_alpha(corpus, metric)?,
        alpha_by_metric: by_metric,
        item_annotation_histogram: histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusBuilder;

    fn corpus(rows: &[(&str, &str, i32)]) -> Corpus {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        let mut items: Vec<&str> = rows.iter().map(|r| r.0).collect();
        items.sort();
        items.dedup();
        for i in items {
            b.add_item(i, "").unwrap();
        }
        for &(i, w, l) in rows {
            b.add_annotation(i, w, l).unwrap();
        }
        b.build()
    }

    #[test]
    fn one_hot_positions() {
        let s = LabelScheme::toxicity();
        assert_eq!(one_hot(-2, &s).unwrap(), vec![1, 0, 0, 0, 0]);
        assert_eq!(one_hot(2, &s).unwrap(), vec![0, 0, 0, 0, 1]);
        assert_eq!(one_hot(0, &s).unwrap(), vec![0, 0, 1, 0, 0]);
        assert!(matches!(one_hot(5, &s), Err(Error::LabelOutsideScheme(5))));
    }

    #[test]
    fn media_unit_sums() {
        let mut rows = Vec::new();
        let ids: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            rows.push(("a", id.as_str(), if i < 3 { -2 } else { 0 }));
        }
        rows.push(("b", "w0", 1));
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        for i in ["a", "b", "c"] {
            b.add_item(i, "").unwrap();
        }
        for &(i, w, l) in &rows {
            b.add_annotation(i, w, l).unwrap();
        }
        let c = b.build();
        assert_eq!(media_unit_vector(&c, 0).vector, vec![3, 0, 7, 0, 0]);
        assert_eq!(media_unit_vector(&c, 1).vector, vec![0, 0, 0, 1, 0]);
        assert_eq!(media_unit_vector(&c, 2).vector, vec![0, 0, 0, 0, 0]);
        let wu = worker_unit_vector(&c, &c.annotations()[0]).unwrap();
        assert_eq!(wu.vector.iter().sum::<u32>(), 1);
    }

    #[test]
    fn pairwise_cases() {
        let c = corpus(&[
            ("i1", "a", 0),
            ("i1", "b", 0),
            ("i2", "a", 1),
            ("i2", "b", -1),
            ("i3", "c", 2),
        ]);
        assert_eq!(pairwise_worker_agreement(&c, "a", "b").unwrap(), Some(0.5));
        assert_eq!(pairwise_worker_agreement(&c, "a", "c").unwrap(), None);
        assert!(matches!(
            pairwise_worker_agreement(&c, "a", "zz"),
            Err(Error::UnknownAnnotator(_))
        ));
        let same = corpus(&[
            ("i1", "a", 0),
            ("i1", "b", 0),
            ("i2", "a", 2),
            ("i2", "b", 2),
        ]);
        assert_eq!(
            pairwise_worker_agreement(&same, "a", "b").unwrap(),
            Some(1.0)
        );
    }

    #[test]
    fn alpha_perfect_agreement_is_one() {
        let c = corpus(&[
            ("i1", "a", 0),
            ("i1", "b", 0),
            ("i2", "a", -2),
            ("i2", "b", -2),
        ]);
        for m in [
            AlphaMetric::Nominal,
            AlphaMetric::Ordinal,
            AlphaMetric::Interval,
        ] {
            assert_eq!(krippendorff_alpha(&c, m).unwrap(), 1.0);
        }
        let single = corpus(&[("i1", "a", 0), ("i1", "b", 0)]);
        assert_eq!(
            krippendorff_alpha(&single, AlphaMetric::Interval).unwrap(),
            1.0
        );
    }

    #[test]
    fn alpha_requires_pairable_item() {
        let c = corpus(&[("i1", "a", 0), ("i2", "b", 1)]);
        assert!(matches!(
            krippendorff_alpha(&c, AlphaMetric::Nominal),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn alpha_nominal_textbook_value() {
        // two coders, binary values, 10 units; well-known worked example
        // with alpha = 0.095 (Krippendorff 2011, section on nominal data)
        let a = [0, 1, 0, 0, 0, 0, 0, 0, 1, 0];
        let b = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0];
        let mut rows = Vec::new();
        let ids: Vec<String> = (0..10).map(|i| format!("u{i:02}")).collect();
        for i in 0..10 {
            rows.push((ids[i].as_str(), "a", a[i]));
            rows.push((ids[i].as_str(), "b", b[i]));
        }
        let c = corpus(&rows);
        let alpha = krippendorff_alpha(&c, AlphaMetric::Nominal).unwrap();
        assert!((alpha - 0.095).abs() < 5e-4, "{alpha}");
    }
}
