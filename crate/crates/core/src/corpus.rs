//! Crowd-annotated corpus data model, ingestion and tokenization.
//!
//! Canonical files are UTF-8 TSV with a header row:
//!
//! * `items.tsv`: `item_id, text`
//! * `annotations.tsv`: `item_id, annotator_id, label`
//! * `demographics.tsv`: `annotator_id, trait, value` (long form, optional)
//!
//! Fields that contain tabs, quotes or newlines are double-quoted.
//! [`load_wp_toxicity`] adapts the public Wikipedia toxicity release onto the
//! same model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered integer label scale, e.g. −2..+2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme", into = "RawScheme")]
pub struct LabelScheme {
    labels: Vec<i32>,
    names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawScheme {
    labels: Vec<i32>,
    names: Vec<String>,
}

impl TryFrom<RawScheme> for LabelScheme {
    type Error = Error;
    fn try_from(raw: RawScheme) -> Result<Self> {
        LabelScheme::new(raw.labels, raw.names)
    }
}

impl From<LabelScheme> for RawScheme {
    fn from(s: LabelScheme) -> Self {
        RawScheme {
            labels: s.labels,
            names: s.names,
        }
    }
}

impl LabelScheme {
    pub fn new(labels: Vec<i32>, names: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidScheme("need at least two labels".into()));
        }
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidScheme(
                "labels must be strictly increasing".into(),
            ));
        }
        if names.len() != labels.len() {
            return Err(Error::InvalidScheme(format!(
                "{} labels but {} names",
                labels.len(),
                names.len()
            )));
        }
        Ok(Self { labels, names })
    }

    /// Scale with numeric names only.
    pub fn from_labels(labels: Vec<i32>) -> Result<Self> {
        let names = labels.iter().map(|l| format!("{l:+}")).collect();
        Self::new(labels, names)
    }

    /// The five-point toxicity scale from the Wikipedia toxicity task.
    pub fn toxicity() -> Self {
        Self::new(
            vec![-2, -1, 0, 1, 2],
            [
                "Very toxic",
                "Toxic",
                "Neither",
                "Healthy contribution",
                "Very healthy contribution",
            ]
            .map(String::from)
            .to_vec(),
        )
        .expect("static scheme is valid")
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: i32) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    pub fn check(&self, label: i32) -> Result<usize> {
        self.index_of(label).ok_or(Error::LabelOutsideScheme(label))
    }

    pub fn label_at(&self, index: usize) -> i32 {
        self.labels[index]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerOptions {
    pub lowercase: bool,
    pub strip_sentinels: bool,
    pub sentinels: Vec<String>,
    pub min_token_len: usize,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_sentinels: true,
            sentinels: vec!["NEWLINE_TOKEN".into(), "TAB_TOKEN".into()],
            min_token_len: 2,
        }
    }
}

/// Splits on non-alphanumeric characters after removing sentinel markers.
pub fn tokenize(text: &str, options: &TokenizerOptions) -> Vec<String> {
    let mut owned;
    let mut text = text;
    if options.strip_sentinels {
        for sentinel in options.sentinels.iter().filter(|s| !s.is_empty()) {
            if text.contains(sentinel.as_str()) {
                owned = text.replace(sentinel.as_str(), " ");
                text = &owned;
            }
        }
    }
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().count() >= options.min_token_len)
        .map(|t| {
            if options.lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub item_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotator {
    pub annotator_id: String,
    pub demographics: BTreeMap<String, String>,
}

/// One label given by one annotator to one item, by corpus index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub item: usize,
    pub annotator: usize,
    pub label: i32,
}

/// Immutable, referentially consistent corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    scheme: LabelScheme,
    items: Vec<Item>,
    annotators: Vec<Annotator>,
    annotations: Vec<Annotation>,
    item_index: HashMap<String, usize>,
    annotator_index: HashMap<String, usize>,
    by_item: Vec<Vec<usize>>,
    by_annotator: Vec<Vec<usize>>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme
            && self.items == other.items
            && self.annotators == other.annotators
            && self.annotations == other.annotations
    }
}

impl Corpus {
    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn annotators(&self) -> &[Annotator] {
        &self.annotators
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_index.get(item_id).copied()
    }

    pub fn annotator_index(&self, annotator_id: &str) -> Option<usize> {
        self.annotator_index.get(annotator_id).copied()
    }

    pub fn require_item(&self, item_id: &str) -> Result<usize> {
        self.item_index(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))
    }

    pub fn require_annotator(&self, annotator_id: &str) -> Result<usize> {
        self.annotator_index(annotator_id)
            .ok_or_else(|| Error::UnknownAnnotator(annotator_id.to_string()))
    }

    /// Annotations on an item.
    pub fn item_annotations(&self, item: usize) -> impl Iterator<Item = &Annotation> + '_ {
        self.by_item[item]
            .iter()
            .map(move |&i| &self.annotations[i])
    }

    /// Annotations by an annotator, in file order.
    pub fn annotator_annotations(
        &self,
        annotator: usize,
    ) -> impl Iterator<Item = &Annotation> + '_ {
        self.by_annotator[annotator]
            .iter()
            .map(move |&i| &self.annotations[i])
    }

    pub fn item_annotation_count(&self, item: usize) -> usize {
        self.by_item[item].len()
    }

    pub fn annotator_annotation_count(&self, annotator: usize) -> usize {
        self.by_annotator[annotator].len()
    }

    /// Re-tokenizes every item.
    pub fn retokenize(&mut self, options: &TokenizerOptions) {
        for item in &mut self.items {
            item.tokens = tokenize(&item.text, options);
        }
    }

    /// Token lists in item order.
    pub fn documents(&self) -> Vec<&[String]> {
        self.items.iter().map(|i| i.tokens.as_slice()).collect()
    }

    /// Demographic trait names present on any annotator, sorted.
    pub fn traits(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .annotators
            .iter()
            .flat_map(|a| a.demographics.keys())
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Writes the canonical TSV files into `dir`.
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = tsv_writer(&dir.join("items.tsv"))?;
        write_record(&mut w, &dir.join("items.tsv"), ["item_id", "text"])?;
        for item in &self.items {
            write_record(&mut w, &dir.join("items.tsv"), [&item.item_id, &item.text])?;
        }
        flush(w, &dir.join("items.tsv"))?;

        let path = dir.join("annotations.tsv");
        let mut w = tsv_writer(&path)?;
        write_record(&mut w, &path, ["item_id", "annotator_id", "label"])?;
        for a in &self.annotations {
            write_record(
                &mut w,
                &path,
                [
                    self.items[a.item].item_id.as_str(),
                    self.annotators[a.annotator].annotator_id.as_str(),
                    &a.label.to_string(),
                ],
            )?;
        }
        flush(w, &path)?;

        let path = dir.join("demographics.tsv");
        let mut w = tsv_writer(&path)?;
        write_record(&mut w, &path, ["annotator_id", "trait", "value"])?;
        for annotator in &self.annotators {
            for (k, v) in &annotator.demographics {
                write_record(&mut w, &path, [&annotator.annotator_id, k, v])?;
            }
        }
        flush(w, &path)
    }
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().delimiter(b'\t').from_writer(file))
}

fn write_record<I, T>(w: &mut csv::Writer<File>, path: &Path, record: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(record).map_err(|e| csv_error(path, e))
}

fn flush(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Incremental corpus construction with integrity checks.
#[derive(Debug)]
pub struct CorpusBuilder {
    scheme: LabelScheme,
    items: Vec<Item>,
    item_index: HashMap<String, usize>,
    annotators: Vec<Annotator>,
    annotator_index: HashMap<String, usize>,
    annotations: Vec<Annotation>,
    seen_pairs: std::collections::HashSet<(usize, usize)>,
    tokenizer: TokenizerOptions,
}

impl CorpusBuilder {
    pub fn new(scheme: LabelScheme) -> Self {
        Self {
            scheme,
            items: Vec::new(),
            item_index: HashMap::new(),
            annotators: Vec::new(),
            annotator_index: HashMap::new(),
            annotations: Vec::new(),
            seen_pairs: Default::default(),
            tokenizer: TokenizerOptions::default(),
        }
    }

    pub fn tokenizer(mut self, options: TokenizerOptions) -> Self {
        self.tokenizer = options;
        self
    }

    pub fn add_item(
        &mut self,
        item_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<usize> {
        let item_id = item_id.into();
        if self.item_index.contains_key(&item_id) {
            return Err(Error::DuplicateId(item_id));
        }
        let idx = self.items.len();
        self.item_index.insert(item_id.clone(), idx);
        self.items.push(Item {
            item_id,
            text: text.into(),
            tokens: Vec::new(),
        });
        Ok(idx)
    }

    /// Registers the annotator if new and returns its index.
    pub fn annotator(&mut self, annotator_id: &str) -> usize {
        if let Some(&idx) = self.annotator_index.get(annotator_id) {
            return idx;
        }
        let idx = self.annotators.len();
        self.annotator_index.insert(annotator_id.to_string(), idx);
        self.annotators.push(Annotator {
            annotator_id: annotator_id.to_string(),
            demographics: BTreeMap::new(),
        });
        idx
    }

    pub fn set_trait(&mut self, annotator_id: &str, name: &str, value: &str) {
        let idx = self.annotator(annotator_id);
        self.annotators[idx]
            .demographics
            .insert(name.to_string(), value.to_string());
    }

    pub fn add_annotation(&mut self, item_id: &str, annotator_id: &str, label: i32) -> Result<()> {
        let item = *self
            .item_index
            .get(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        self.scheme.check(label)?;
        let annotator = self.annotator(annotator_id);
        if !self.seen_pairs.insert((annotator, item)) {
            return Err(Error::DuplicateAnnotation {
                annotator: annotator_id.to_string(),
                item: item_id.to_string(),
            });
        }
        self.annotations.push(Annotation {
            item,
            annotator,
            label,
        });
        Ok(())
    }

    /// Finalizes: annotators are sorted by id, items keep insertion order.
    pub fn build(self) -> Corpus {
        let CorpusBuilder {
            scheme,
            mut items,
            item_index,
            annotators,
            annotations,
            tokenizer,
            ..
        } = self;

        let mut order: Vec<usize> = (0..annotators.len()).collect();
        order.sort_by(|&a, &b| annotators[a].annotator_id.cmp(&annotators[b].annotator_id));
        let mut remap = vec![0usize; annotators.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut slots: Vec<Option<Annotator>> = annotators.into_iter().map(Some).collect();
        let annotators: Vec<Annotator> = order
            .iter()
            .map(|&old| slots[old].take().expect("each slot taken once"))
            .collect();
        let annotations: Vec<Annotation> = annotations
            .into_iter()
            .map(|a| Annotation {
                annotator: remap[a.annotator],
                ..a
            })
            .collect();
        let annotator_index = annotators
            .iter()
            .enumerate()
            .map(|(i, a)| (a.annotator_id.clone(), i))
            .collect();

        for item in &mut items {
            item.tokens = tokenize(&item.text, &tokenizer);
        }

        let mut by_item = vec![Vec::new(); items.len()];
        let mut by_annotator = vec![Vec::new(); annotators.len()];
        for (i, a) in annotations.iter().enumerate() {
            by_item[a.item].push(i);
            by_annotator[a.annotator].push(i);
        }

        Corpus {
            scheme,
            items,
            annotators,
            annotations,
            item_index,
            annotator_index,
            by_item,
            by_annotator,
        }
    }
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(file))
}

/// Column positions resolved from a header row.
fn columns(reader: &mut csv::Reader<File>, path: &Path, wanted: &[&str]) -> Result<Vec<usize>> {
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("missing column `{name}`"),
                })
        })
        .collect()
}

fn line_error(path: &Path, record: &csv::StringRecord, err: Error) -> Error {
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    match err {
        Error::MalformedRow { .. } => err,
        other => Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: other.to_string(),
        },
    }
}

fn field<'r>(record: &'r csv::StringRecord, col: usize, path: &Path) -> Result<&'r str> {
    record.get(col).ok_or_else(|| Error::MalformedRow {
        path: path.to_path_buf(),
        line: record.position().map(|p| p.line()).unwrap_or(0),
        message: format!("expected at least {} fields", col + 1),
    })
}

/// Loads the canonical TSV files.
///
/// Annotators are the union of ids in the annotations and demographics
/// files. Items are tokenized with the default [`TokenizerOptions`].
pub fn load_corpus(
    items_path: &Path,
    annotations_path: &Path,
    demographics_path: Option<&Path>,
    scheme: LabelScheme,
) -> Result<Corpus> {
    let mut builder = CorpusBuilder::new(scheme);

    let mut r = tsv_reader(items_path)?;
    let cols = columns(&mut r, items_path, &["item_id", "text"])?;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(items_path, e))?;
        let id = field(&rec, cols[0], items_path)?;
        let text = field(&rec, cols[1], items_path)?;
        builder
            .add_item(id, text)
            .map_err(|e| line_error(items_path, &rec, e))?;
    }

    let mut r = tsv_reader(annotations_path)?;
    let cols = columns(
        &mut r,
        annotations_path,
        &["item_id", "annotator_id", "label"],
    )?;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(annotations_path, e))?;
        let item = field(&rec, cols[0], annotations_path)?;
        let annotator = field(&rec, cols[1], annotations_path)?;
        let label = parse_label(field(&rec, cols[2], annotations_path)?)
            .map_err(|e| line_error(annotations_path, &rec, e))?;
        builder
            .add_annotation(item, annotator, label)
            .map_err(|e| match e {
                // referential errors keep their own variant so callers can match on them
                Error::UnknownItem(_) => e,
                other => line_error(annotations_path, &rec, other),
            })?;
    }

    if let Some(path) = demographics_path {
        let mut r = tsv_reader(path)?;
        let cols = columns(&mut r, path, &["annotator_id", "trait", "value"])?;
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            builder.set_trait(
                field(&rec, cols[0], path)?,
                field(&rec, cols[1], path)?,
                field(&rec, cols[2], path)?,
            );
        }
    }

    Ok(builder.build())
}

/// Loads `items.tsv`, `annotations.tsv` and (if present) `demographics.tsv`.
pub fn load_corpus_dir(dir: &Path, scheme: LabelScheme) -> Result<Corpus> {
    let demo = dir.join("demographics.tsv");
    load_corpus(
        &dir.join("items.tsv"),
        &dir.join("annotations.tsv"),
        demo.exists().then_some(demo.as_path()),
        scheme,
    )
}

/// Integer label; accepts integral floats such as `-1.0`.
fn parse_label(raw: &str) -> Result<i32> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i32>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < i32::MAX as f64 => Ok(v as i32),
        _ => Err(Error::InvalidParameter(format!(
            "label `{raw}` is not an integer"
        ))),
    }
}

/// `"2232.0"` and `"2232"` name the same revision in the public release.
fn normalize_rev_id(raw: &str) -> String {
    let raw = raw.trim();
    match raw.strip_suffix(".0") {
        Some(stem) if !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) => {
            stem.to_string()
        }
        _ => raw.to_string(),
    }
}

/// File names of the public Wikipedia toxicity release.
pub const WP_COMMENTS: &str = "toxicity_annotated_comments.tsv";
pub const WP_ANNOTATIONS: &str = "toxicity_annotations.tsv";
pub const WP_DEMOGRAPHICS: &str = "toxicity_worker_demographics.tsv";
/// Demographic columns of the worker file.
pub const WP_TRAITS: [&str; 4] = ["gender", "english_first_language", "age_group", "education"];

/// Adapter for the public Wikipedia toxicity release.
///
/// Maps `rev_id, comment` onto items, `rev_id, worker_id, toxicity_score`
/// onto annotations, and the wide worker demographics table onto long-form
/// traits. Newline and tab sentinels stay in the text and are removed by the
/// tokenizer.
pub fn load_wp_toxicity(dir: &Path) -> Result<Corpus> {
    let mut builder = CorpusBuilder::new(LabelScheme::toxicity());

    let path = dir.join(WP_COMMENTS);
    let mut r = tsv_reader(&path)?;
    let cols = columns(&mut r, &path, &["rev_id", "comment"])?;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&path, e))?;
        let id = normalize_rev_id(field(&rec, cols[0], &path)?);
        builder
            .add_item(id, field(&rec, cols[1], &path)?)
            .map_err(|e| line_error(&path, &rec, e))?;
    }

    let path = dir.join(WP_ANNOTATIONS);
    let mut r = tsv_reader(&path)?;
    let cols = columns(&mut r, &path, &["rev_id", "worker_id", "toxicity_score"])?;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&path, e))?;
        let item = normalize_rev_id(field(&rec, cols[0], &path)?);
        let worker = field(&rec, cols[1], &path)?.trim().to_string();
        let label =
            parse_label(field(&rec, cols[2], &path)?).map_err(|e| line_error(&path, &rec, e))?;
        builder
            .add_annotation(&item, &worker, label)
            .map_err(|e| match e {
                Error::UnknownItem(_) => e,
                other => line_error(&path, &rec, other),
            })?;
    }

    let path = dir.join(WP_DEMOGRAPHICS);
    if path.exists() {
        let mut r = tsv_reader(&path)?;
        let id_col = columns(&mut r, &path, &["worker_id"])?[0];
        let headers = r.headers().map_err(|e| csv_error(&path, e))?.clone();
        let trait_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != id_col && !h.trim().is_empty())
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(&path, e))?;
            let worker = field(&rec, id_col, &path)?.trim().to_string();
            builder.annotator(&worker);
            for (col, name) in &trait_cols {
                let value = rec.get(*col).unwrap_or("").trim();
                if !value.is_empty() {
                    builder.set_trait(&worker, name, value);
                }
            }
        }
    }

    Ok(builder.build())
}

/// Dense term index with document frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps terms whose document frequency lies in
    /// `[min_df, max_df_ratio · N]`, ordered by descending frequency then
    /// lexicographically.
    pub fn build<D, T>(docs: &[D], min_df: usize, max_df_ratio: f64) -> Result<Self>
    where
        D: AsRef<[T]>,
        T: AsRef<str>,
    {
        if !(max_df_ratio > 0.0 && max_df_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "max_df_ratio must be in (0, 1], got {max_df_ratio}"
            )));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let distinct: BTreeSet<&str> = doc.as_ref().iter().map(|t| t.as_ref()).collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let ceiling = max_df_ratio * docs.len() as f64;
        let mut kept: Vec<(&str, usize)> = df
            .into_iter()
            .filter(|&(_, f)| f >= min_df && f as f64 <= ceiling)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let terms: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
        let doc_freq = kept.iter().map(|&(_, f)| f).collect();
        Ok(Self::from_parts(terms, doc_freq))
    }

    pub fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            doc_freq,
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Term ids of in-vocabulary tokens, in order.
    pub fn encode<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<u32> {
        tokens
            .iter()
            .filter_map(|t| self.get(t.as_ref()).map(|i| i as u32))
            .collect()
    }

    /// SHA-256 over the ordered term list.
    pub fn hash(&self) -> String {
        let joined = self.terms.join("\n");
        crate::util::sha256_hex(joined.as_bytes())
    }
}

/// Convenience wrapper over [`Vocabulary::build`] for a corpus.
pub fn build_vocabulary(corpus: &Corpus, min_df: usize, max_df_ratio: f64) -> Result<Vocabulary> {
    Vocabulary::build(&corpus.documents(), min_df, max_df_ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub annotators: usize,
    pub annotations: usize,
    /// Percentage of items with at least one annotation from the group.
    pub item_coverage_pct: f64,
    /// Mean over all items of the number of group members annotating it.
    pub mean_annotators_per_item: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub items: usize,
    pub annotators: usize,
    pub annotations: usize,
    pub annotators_with_annotations: usize,
    pub annotators_with_demographics: usize,
    /// annotation count → number of items with that count
    pub item_annotation_histogram: BTreeMap<usize, usize>,
    /// trait → value → stats
    pub traits: BTreeMap<String, BTreeMap<String, GroupStats>>,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let n_items = corpus.items.len();
    let mut histogram = BTreeMap::new();
    for item in 0..n_items {
        *histogram
            .entry(corpus.item_annotation_count(item))
            .or_insert(0) += 1;
    }

    let mut traits: BTreeMap<String, BTreeMap<String, GroupStats>> = BTreeMap::new();
    for name in corpus.traits() {
        let mut groups: BTreeMap<&str, (usize, usize, Vec<bool>)> = BTreeMap::new();
        for (ai, annotator) in corpus.annotators.iter().enumerate() {
            let Some(value) = annotator.demographics.get(&name) else {
                continue;
            };
            let entry = groups
                .entry(value.as_str())
                .or_insert_with(|| (0, 0, vec![false; n_items]));
            entry.0 += 1;
            for a in corpus.annotator_annotations(ai) {
                entry.1 += 1;
                entry.2[a.item] = true;
            }
        }
        let per_value = groups
            .into_iter()
            .map(|(value, (annotators, annotations, covered))| {
                let covered = covered.iter().filter(|&&c| c).count();
                let denom = n_items.max(1) as f64;
                (
                    value.to_string(),
                    GroupStats {
                        annotators,
                        annotations,
                        item_coverage_pct: 100.0 * covered as f64 / denom,
                        mean_annotators_per_item: annotations as f64 / denom,
                    },
                )
            })
            .collect();
        traits.insert(name, per_value);
    }

    StatsReport {
        schema_version: crate::SCHEMA_VERSION,
        items: n_items,
        annotators: corpus.annotators.len(),
        annotations: corpus.annotations.len(),
        annotators_with_annotations: corpus.by_annotator.iter().filter(|v| !v.is_empty()).count(),
        annotators_with_demographics: corpus
            .annotators
            .iter()
            .filter(|a| !a.demographics.is_empty())
            .count(),
        item_annotation_histogram: histogram,
        traits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn opts(min: usize) -> TokenizerOptions {
        TokenizerOptions {
            min_token_len: min,
            ..Default::default()
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("You ARE a racist", &opts(1)),
            vec!["you", "are", "a", "racist"]
        );
        assert_eq!(
            tokenize("hello NEWLINE_TOKEN world", &opts(1)),
            vec!["hello", "world"]
        );
        assert!(tokenize("", &opts(1)).is_empty());
        // default drops single-character tokens
        assert_eq!(
            tokenize("You ARE a racist", &TokenizerOptions::default()),
            vec!["you", "are", "racist"]
        );
    }

    #[test]
    fn tokenize_adjacent_sentinels_and_case() {
        let o = TokenizerOptions {
            lowercase: false,
            ..opts(1)
        };
        assert_eq!(
            tokenize("Hi.NEWLINE_TOKENNEWLINE_TOKENThere", &o),
            vec!["Hi", "There"]
        );
        let keep = TokenizerOptions {
            strip_sentinels: false,
            ..opts(1)
        };
        assert_eq!(
            tokenize("a NEWLINE_TOKEN", &keep),
            vec!["a", "newline", "token"]
        );
    }

    #[test]
    fn scheme_validation() {
        assert!(LabelScheme::from_labels(vec![1]).is_err());
        assert!(LabelScheme::from_labels(vec![1, 1]).is_err());
        assert!(LabelScheme::from_labels(vec![2, 1]).is_err());
        let s = LabelScheme::toxicity();
        assert_eq!(s.index_of(-2), Some(0));
        assert_eq!(s.index_of(2), Some(4));
        assert!(s.check(3).is_err());
        let json = serde_json::to_string(&s).unwrap();
        let back: LabelScheme = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<LabelScheme>(r#"{"labels":[1],"names":["a"]}"#).is_err());
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.tsv", "item_id\ttext\ni1\thello world\n");
        let ann = write(
            dir.path(),
            "annotations.tsv",
            "item_id\tannotator_id\tlabel\ni1\tw1\t-2\n",
        );
        let c = load_corpus(&items, &ann, None, LabelScheme::toxicity()).unwrap();
        assert_eq!(
            (c.items().len(), c.annotators().len(), c.annotations().len()),
            (1, 1, 1)
        );
        assert_eq!(c.items()[0].tokens, vec!["hello", "world"]);
    }

    #[test]
    fn load_reports_unknown_item() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.tsv", "item_id\ttext\ni1\thello\n");
        let ann = write(
            dir.path(),
            "annotations.tsv",
            "item_id\tannotator_id\tlabel\nzz9\tw1\t0\n",
        );
        match load_corpus(&items, &ann, None, LabelScheme::toxicity()) {
            Err(Error::UnknownItem(id)) => assert_eq!(id, "zz9"),
            other => panic!("expected UnknownItem, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(
            dir.path(),
            "items.tsv",
            "item_id\ttext\ni1\thello\ni2\tbye\n",
        );
        let ann = write(
            dir.path(),
            "annotations.tsv",
            "item_id\tannotator_id\tlabel\ni1\tw1\t0\ni2\tw1\t7\n",
        );
        match load_corpus(&items, &ann, None, LabelScheme::toxicity()) {
            Err(Error::MalformedRow { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("7"), "{message}");
            }
            other => panic!("expected MalformedRow, got {other:?}"),
        }
        let ann = write(
            dir.path(),
            "annotations.tsv",
            "item_id\tannotator_id\tlabel\ni1\tw1\t0\ni1\tw1\t1\n",
        );
        assert!(matches!(
            load_corpus(&items, &ann, None, LabelScheme::toxicity()),
            Err(Error::MalformedRow { line: 3, .. })
        ));
        let ann = write(dir.path(), "annotations.tsv", "item\tannotator_id\tlabel\n");
        assert!(matches!(
            load_corpus(&items, &ann, None, LabelScheme::toxicity()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
        assert!(matches!(
            load_corpus(
                &dir.path().join("nope.tsv"),
                &ann,
                None,
                LabelScheme::toxicity()
            ),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn wp_adapter_maps_columns() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            WP_COMMENTS,
            "rev_id\tcomment\tyear\tlogged_in\tns\tsample\tsplit\n\
             2232.0\tThis:NEWLINE_TOKENNEWLINE_TOKENOne can make\t2002\tTrue\tarticle\trandom\ttrain\n\
             4216.0\tYou are stupid\t2002\tTrue\tuser\trandom\ttrain\n",
        );
        write(
            dir.path(),
            WP_ANNOTATIONS,
            "rev_id\tworker_id\ttoxicity\ttoxicity_score\n\
             2232.0\t723\t0\t0.0\n2232.0\t4000\t0\t1.0\n4216.0\t723\t1\t-2.0\n",
        );
        write(
            dir.path(),
            WP_DEMOGRAPHICS,
            "worker_id\tgender\tenglish_first_language\tage_group\teducation\n\
             723\tfemale\t0\t18-30\tbachelors\n85\tmale\t1\t30-45\ths\n",
        );
        let c = load_wp_toxicity(dir.path()).unwrap();
        assert_eq!(c.items().len(), 2);
        assert_eq!(c.annotations().len(), 3);
        // 85 has demographics but no annotations
        assert_eq!(c.annotators().len(), 3);
        assert_eq!(c.items()[0].item_id, "2232");
        assert_eq!(c.items()[0].tokens, vec!["this", "one", "can", "make"]);
        let w = c.require_annotator("723").unwrap();
        assert_eq!(c.annotators()[w].demographics["gender"], "female");
        let stats = corpus_stats(&c);
        assert_eq!(stats.annotators_with_annotations, 2);
        assert_eq!(stats.annotators_with_demographics, 2);
        let female = &stats.traits["gender"]["female"];
        assert_eq!(female.item_coverage_pct, 100.0);
        assert_eq!(female.mean_annotators_per_item, 1.0);
    }

    #[test]
    fn stats_single_annotation() {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        b.add_item("i", "x").unwrap();
        b.set_trait("w", "gender", "female");
        b.add_annotation("i", "w", 0).unwrap();
        let stats = corpus_stats(&b.build());
        let g = &stats.traits["gender"]["female"];
        assert_eq!(g.item_coverage_pct, 100.0);
        assert_eq!(g.mean_annotators_per_item, 1.0);
        assert_eq!(stats.item_annotation_histogram[&1], 1);
    }

    #[test]
    fn vocabulary_filters_and_orders() {
        let docs = vec![
            vec!["the", "cat"],
            vec!["the", "dog"],
            vec!["the", "cat", "bird"],
        ];
        let v = Vocabulary::build(&docs, 1, 0.5).unwrap();
        assert!(v.get("the").is_none());
        assert_eq!(v.terms(), &["bird", "dog"]);

        let v = Vocabulary::build(&docs, 1, 1.0).unwrap();
        assert_eq!(v.terms(), &["the", "cat", "bird", "dog"]);
        assert_eq!(v.doc_freq(), &[3, 2, 1, 1]);
        assert_eq!(v.encode(&["cat", "zebra", "the"]), vec![1, 0]);

        assert!(matches!(
            Vocabulary::build(&docs, 5, 1.0),
            Err(Error::EmptyVocabulary)
        ));
        assert!(Vocabulary::build(&docs, 1, 0.0).is_err());
    }

    #[test]
    fn vocabulary_serde_reindex() {
        let docs = vec![vec!["a", "b"]];
        let v = Vocabulary::build(&docs, 1, 1.0).unwrap();
        let mut back: Vocabulary =
            serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        back.reindex();
        assert_eq!(back.get("b"), v.get("b"));
        assert_eq!(back.hash(), v.hash());
    }
}
