//! Pipeline stages over a workspace directory.
//!
//! A stage reads its inputs from one workspace and writes its artifacts into
//! another (usually the same one). Every file read or written is hashed into
//! the stage's [`RunManifest`], which is enough to re-run the stage and check
//! that the artifacts come out byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agreement::{agreement_report, AlphaMetric};
use crate::corpus::{
    build_vocabulary, corpus_stats, load_corpus_dir, load_wp_toxicity, Corpus, LabelScheme,
    WP_ANNOTATIONS, WP_COMMENTS, WP_DEMOGRAPHICS,
};
use crate::divergence::{divergence_report, load_lexicon, DivergenceConfig, DivergenceReport};
use crate::error::{Error, Result};
use crate::fingerprint::{batch_fingerprints, Fingerprint, FingerprintSet};
use crate::manifest::RunManifest;
use crate::map::{build_map, to_svg, MapExport};
use crate::models::{sweep, LabelSource, SweepConfig};
use crate::positions::{mine_positions, sample_divisive, MineConfig, PositionReport};
use crate::session::{EventLog, PlacementContext, PlacementMode, Session};
use crate::topics::{fit_lda, select_k, LdaParams, SelectKConfig, TopicModel};
use crate::util::{read_json, sha256_file, sha256_hex, to_json_bytes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    /// `items.tsv`, `annotations.tsv` and optional `demographics.tsv`.
    #[default]
    Canonical,
    /// The public Wikipedia toxicity release.
    Wp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestParams {
    pub format: SourceFormat,
    pub source: PathBuf,
    /// Label scheme JSON; the toxicity scale when absent.
    pub scheme: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsParams {
    /// Fixed K; `None` selects K by held-out perplexity over `k_min..=k_max`.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub holdout_ratio: f64,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub fold_in_iterations: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
    pub seed: u64,
}

impl Default for TopicsParams {
    fn default() -> Self {
        let s = SelectKConfig::default();
        Self {
            k: None,
            k_min: s.k_min,
            k_max: s.k_max,
            holdout_ratio: s.holdout_ratio,
            alpha: s.alpha,
            beta: s.beta,
            iterations: s.iterations,
            fold_in_iterations: s.fold_in_iterations,
            min_df: 5,
            max_df_ratio: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFormat {
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub formats: Vec<MapFormat>,
    pub include_models: bool,
    /// Exported sessions whose fingerprints are added to the map.
    pub data_scientists: Vec<String>,
    pub placement: PlacementMode,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            formats: vec![MapFormat::Json, MapFormat::Svg],
            include_models: true,
            data_scientists: Vec::new(),
            placement: PlacementMode::Projection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "params", rename_all = "kebab-case")]
pub enum Stage {
    Ingest(IngestParams),
    Agreement {
        metric: AlphaMetric,
    },
    Topics(TopicsParams),
    Fingerprints {
        min_annotations: usize,
    },
    Mine(MineConfig),
    Diverge {
        lexicon: PathBuf,
        cluster_a: usize,
        cluster_b: usize,
        config: DivergenceConfig,
    },
    SampleDivisive {
        per_stratum: usize,
        seed: u64,
    },
    Models(SweepConfig),
    Map(MapParams),
    /// Freezes a session's fingerprint as a data-scientist artifact.
    Annotate {
        session_id: String,
    },
}

impl Stage {
    /// Manifest file stem; unique per distinct output set.
    pub fn name(&self) -> String {
        match self {
            Stage::Ingest(_) => "ingest".into(),
            Stage::Agreement { .. } => "agreement".into(),
            Stage::Topics(_) => "topics".into(),
            Stage::Fingerprints { .. } => "fingerprints".into(),
            Stage::Mine(_) => "mine".into(),
            Stage::Diverge {
                cluster_a,
                cluster_b,
                ..
            } => format!("diverge-{cluster_a}-{cluster_b}"),
            Stage::SampleDivisive { .. } => "sample-divisive".into(),
            Stage::Models(_) => "models".into(),
            Stage::Map(_) => "map".into(),
            Stage::Annotate { session_id } => format!("annotate-{session_id}"),
        }
    }
}

/// Ids that end up in file names.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "`{id}` is not a valid id (letters, digits, `-`, `_`, `.`)"
        )))
    }
}

/// Directory layout of pipeline artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub const ITEMS: &'static str = "corpus/items.tsv";
    pub const ANNOTATIONS: &'static str = "corpus/annotations.tsv";
    pub const DEMOGRAPHICS: &'static str = "corpus/demographics.tsv";
    pub const SCHEME: &'static str = "corpus/scheme.json";
    pub const STATS: &'static str = "stats.json";
    pub const AGREEMENT: &'static str = "agreement.json";
    pub const TOPIC_MODEL: &'static str = "topics/model.json";
    pub const K_SELECTION: &'static str = "topics/k_selection.json";
    pub const FINGERPRINTS: &'static str = "fingerprints.json";
    pub const POSITIONS: &'static str = "positions.json";
    pub const DIVISIVE_SAMPLE: &'static str = "divisive_sample.json";
    pub const SWEEP: &'static str = "models/sweep.json";
    pub const MODEL_FINGERPRINTS: &'static str = "models/fingerprints.json";
    pub const MAP_JSON: &'static str = "map.json";
    pub const MAP_SVG: &'static str = "map.svg";
    pub const ARTIFACTS: &'static str = "artifacts.json";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    pub fn divergence_rel(a: usize, b: usize, ext: &str) -> String {
        format!("divergence/{a}-{b}.{ext}")
    }

    pub fn model_rel(source: &LabelSource, c: f64) -> String {
        format!("models/{}_C{c}.json", source.to_string().replace(':', "-"))
    }

    pub fn session_rel(session_id: &str) -> String {
        format!("sessions/{session_id}.jsonl")
    }

    pub fn data_scientist_rel(session_id: &str) -> String {
        format!("data_scientists/{session_id}.json")
    }

    pub fn manifest_rel(&self, stage: &Stage) -> String {
        format!("manifests/{}.json", stage.name())
    }

    pub fn load<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        read_json(&self.path(rel))
    }

    pub fn load_scheme(&self) -> Result<LabelScheme> {
        self.load(Self::SCHEME)
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        load_corpus_dir(&self.path("corpus"), self.load_scheme()?)
    }

    pub fn load_topic_model(&self) -> Result<TopicModel> {
        self.load(Self::TOPIC_MODEL)
    }

    pub fn load_fingerprints(&self) -> Result<FingerprintSet> {
        self.load(Self::FINGERPRINTS)
    }

    pub fn load_positions(&self) -> Result<PositionReport> {
        self.load(Self::POSITIONS)
    }

    pub fn load_map(&self) -> Result<MapExport> {
        self.load(Self::MAP_JSON)
    }
}

/// Reads and writes for one stage run, hashing everything into a manifest.
struct StageIo<'a> {
    input: &'a Workspace,
    output: &'a Workspace,
    manifest: RunManifest,
}

impl<'a> StageIo<'a> {
    fn note_input(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.input.path(rel);
        let hash = sha256_file(&path)?;
        self.manifest.inputs.insert(rel.to_string(), hash);
        Ok(path)
    }

    fn note_external(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest
            .external_inputs
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    fn read<T: DeserializeOwned>(&mut self, rel: &str) -> Result<T> {
        let path = self.note_input(rel)?;
        read_json(&path)
    }

    fn corpus(&mut self) -> Result<Corpus> {
        let scheme: LabelScheme = self.read(Workspace::SCHEME)?;
        self.note_input(Workspace::ITEMS)?;
        self.note_input(Workspace::ANNOTATIONS)?;
        if self.input.exists(Workspace::DEMOGRAPHICS) {
            self.note_input(Workspace::DEMOGRAPHICS)?;
        }
        load_corpus_dir(&self.input.path("corpus"), scheme)
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.output.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest
            .outputs
            .insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write_bytes(rel, &to_json_bytes(value))
    }

    /// Records a file some other writer already produced.
    fn note_output(&mut self, rel: &str) -> Result<()> {
        let hash = sha256_file(&self.output.path(rel))?;
        self.manifest.outputs.insert(rel.to_string(), hash);
        Ok(())
    }
}

/// Runs one stage, returning its manifest. Nothing is written to
/// `output/manifests`; see [`crate::manifest::commit`].
pub fn run_stage(stage: &Stage, input: &Workspace, output: &Workspace) -> Result<RunManifest> {
    let mut io = StageIo {
        input,
        output,
        manifest: RunManifest::new(stage.clone()),
    };
    match stage {
        Stage::Ingest(p) => ingest(&mut io, p)?,
        Stage::Agreement { metric } => {
            let corpus = io.corpus()?;
            io.write(Workspace::AGREEMENT, &agreement_report(&corpus, *metric)?)?;
        }
        Stage::Topics(p) => topics(&mut io, p)?,
        Stage::Fingerprints { min_annotations } => {
            let corpus = io.corpus()?;
            let model: TopicModel = io.read(Workspace::TOPIC_MODEL)?;
            let set =
                batch_fingerprints(&corpus, &model.doc_topic, &model.hash(), *min_annotations)?;
            io.write(Workspace::FINGERPRINTS, &set)?;
        }
        Stage::Mine(config) => {
            let corpus = io.corpus()?;
            let set: FingerprintSet = io.read(Workspace::FINGERPRINTS)?;
            io.write(
                Workspace::POSITIONS,
                &mine_positions(&set, Some(&corpus), config)?,
            )?;
        }
        Stage::Diverge {
            lexicon,
            cluster_a,
            cluster_b,
            config,
        } => {
            let corpus = io.corpus()?;
            let positions: PositionReport = io.read(Workspace::POSITIONS)?;
            io.note_external(lexicon)?;
            let lex = load_lexicon(lexicon)?;
            let report: DivergenceReport = divergence_report(
                &corpus,
                &lex,
                &positions.embedding.agent_ids,
                &positions.assignment,
                *cluster_a,
                *cluster_b,
                config,
            )?;
            io.write(
                &Workspace::divergence_rel(*cluster_a, *cluster_b, "json"),
                &report,
            )?;
            io.write_bytes(
                &Workspace::divergence_rel(*cluster_a, *cluster_b, "tsv"),
                report.to_tsv().as_bytes(),
            )?;
        }
        Stage::SampleDivisive { per_stratum, seed } => {
            let positions: PositionReport = io.read(Workspace::POSITIONS)?;
            let sample = sample_divisive(&positions.divisiveness, *per_stratum, *seed)?;
            io.write(Workspace::DIVISIVE_SAMPLE, &sample)?;
        }
        Stage::Models(config) => {
            let corpus = io.corpus()?;
            let model: TopicModel = io.read(Workspace::TOPIC_MODEL)?;
            let set: FingerprintSet = io.read(Workspace::FINGERPRINTS)?;
            let positions: PositionReport = io.read(Workspace::POSITIONS)?;
            let outcome = sweep(
                &corpus,
                &model.vocabulary(),
                &model.doc_topic,
                &set,
                &positions,
                config,
            )?;
            io.write(Workspace::SWEEP, &outcome.report)?;
            for m in &outcome.models {
                io.write(&Workspace::model_rel(&m.label_source, m.c), m)?;
            }
            let mut fps = FingerprintSet::new(&model.hash(), set.topics, set.labels.clone(), 0);
            for fp in outcome.fingerprints {
                fps.insert(fp)?;
            }
            io.write(Workspace::MODEL_FINGERPRINTS, &fps)?;
        }
        Stage::Map(p) => map(&mut io, p)?,
        Stage::Annotate { session_id } => {
            check_id(session_id)?;
            let corpus = io.corpus()?;
            let model: TopicModel = io.read(Workspace::TOPIC_MODEL)?;
            let set: FingerprintSet = io.read(Workspace::FINGERPRINTS)?;
            let positions: PositionReport = io.read(Workspace::POSITIONS)?;
            let log = io.note_input(&Workspace::session_rel(session_id))?;
            let ctx = PlacementContext {
                corpus: &corpus,
                doc_topics: &model.doc_topic,
                fingerprints: &set,
                positions: &positions,
            };
            let session = Session::replay(&ctx, &EventLog::read(&log)?)?;
            io.write(
                &Workspace::data_scientist_rel(session_id),
                &session.fingerprint,
            )?;
        }
    }
    Ok(io.manifest)
}

fn ingest(io: &mut StageIo<'_>, p: &IngestParams) -> Result<()> {
    let corpus = match p.format {
        SourceFormat::Canonical => {
            let scheme = match &p.scheme {
                Some(path) => {
                    io.note_external(path)?;
                    read_json(path)?
                }
                None => LabelScheme::toxicity(),
            };
            for name in ["items.tsv", "annotations.tsv", "demographics.tsv"] {
                let path = p.source.join(name);
                if name != "demographics.tsv" || path.exists() {
                    io.note_external(&path)?;
                }
            }
            load_corpus_dir(&p.source, scheme)?
        }
        SourceFormat::Wp => {
            if p.scheme.is_some() {
                return Err(Error::InvalidParameter(
                    "the wp format has a fixed label scheme".into(),
                ));
            }
            for name in [WP_COMMENTS, WP_ANNOTATIONS, WP_DEMOGRAPHICS] {
                let path = p.source.join(name);
                if name != WP_DEMOGRAPHICS || path.exists() {
                    io.note_external(&path)?;
                }
            }
            load_wp_toxicity(&p.source)?
        }
    };
    corpus.write_tsv(&io.output.path("corpus"))?;
    for rel in [
        Workspace::ITEMS,
        Workspace::ANNOTATIONS,
        Workspace::DEMOGRAPHICS,
    ] {
        io.note_output(rel)?;
    }
    io.write(Workspace::SCHEME, corpus.scheme())?;
    io.write(Workspace::STATS, &corpus_stats(&corpus))?;
    Ok(())
}

fn topics(io: &mut StageIo<'_>, p: &TopicsParams) -> Result<()> {
    let corpus = io.corpus()?;
    let vocabulary = build_vocabulary(&corpus, p.min_df, p.max_df_ratio)?;
    let docs: Vec<Vec<u32>> = corpus
        .documents()
        .iter()
        .map(|d| vocabulary.encode(d))
        .collect();
    let k = match p.k {
        Some(k) => k,
        None => {
            let report = select_k(
                &docs,
                &vocabulary,
                &SelectKConfig {
                    k_min: p.k_min,
                    k_max: p.k_max,
                    holdout_ratio: p.holdout_ratio,
                    alpha: p.alpha,
                    beta: p.beta,
                    iterations: p.iterations,
                    fold_in_iterations: p.fold_in_iterations,
                    seed: p.seed,
                },
            )?;
            io.write(Workspace::K_SELECTION, &report)?;
            report.chosen_k
        }
    };
    let params = LdaParams {
        k,
        alpha: p.alpha,
        beta: p.beta,
        iterations: p.iterations,
        seed: p.seed,
    };
    io.write(
        Workspace::TOPIC_MODEL,
        &fit_lda(&docs, &vocabulary, &params)?,
    )
}

fn map(io: &mut StageIo<'_>, p: &MapParams) -> Result<()> {
    let set: FingerprintSet = io.read(Workspace::FINGERPRINTS)?;
    let positions: PositionReport = io.read(Workspace::POSITIONS)?;
    let mut extra: Vec<Fingerprint> = Vec::new();
    if p.include_models {
        if io.input.exists(Workspace::MODEL_FINGERPRINTS) {
            let models: FingerprintSet = io.read(Workspace::MODEL_FINGERPRINTS)?;
            extra.extend(models.agents);
        } else {
            log::warn!("no model fingerprints found; run `models` first to include them");
        }
    }
    for id in &p.data_scientists {
        check_id(id)?;
        extra.push(io.read(&Workspace::data_scientist_rel(id))?);
    }
    let export = build_map(&set, &positions, &extra, p.placement)?;
    if p.formats.contains(&MapFormat::Json) {
        io.write_bytes(Workspace::MAP_JSON, &export.to_json_bytes())?;
    }
    if p.formats.contains(&MapFormat::Svg) {
        io.write_bytes(Workspace::MAP_SVG, to_svg(&export).as_bytes())?;
    }
    Ok(())
}
