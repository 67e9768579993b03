//! Self-annotation sessions.
//!
//! An analyst labels a divisiveness-stratified sample of items; after every
//! label their fingerprint is rebuilt and placed among the mined positions.
//! Sessions persist as append-only JSON-lines event logs.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fingerprint::{
    build_fingerprint, centroid, flat_similarity, flatten, AgentKind, Fingerprint, FingerprintSet,
};
use crate::positions::{project, reduce, sample_divisive, Neighbor, PositionReport};

/// Everything placement needs, borrowed from the mined artifacts.
#[derive(Clone, Copy)]
pub struct PlacementContext<'a> {
    pub corpus: &'a Corpus,
    /// Topic distribution per corpus item.
    pub doc_topics: &'a [Vec<f64>],
    pub fingerprints: &'a FingerprintSet,
    pub positions: &'a PositionReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    /// Weighted average of the nearest embedded neighbors.
    #[default]
    Projection,
    /// Re-run the reducer with the new fingerprint included.
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub schema_version: u32,
    pub labeled: usize,
    /// Cluster whose centroid fingerprint is most similar.
    pub nearest_cluster: Option<usize>,
    pub cluster_similarity: Vec<Option<f64>>,
    pub neighbors: Vec<Neighbor>,
    pub coordinate: Option<Vec<f64>>,
}

/// Centroid fingerprint of each cluster, flattened.
pub fn cluster_centroids(
    fpset: &FingerprintSet,
    positions: &PositionReport,
) -> Vec<Option<Vec<f64>>> {
    (0..positions.n_clusters())
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
        .collect()
}

/// Places a fingerprint among the mined positions.
pub fn place(
    ctx: &PlacementContext<'_>,
    fp: &Fingerprint,
    k: usize,
    mode: PlacementMode,
) -> Result<Placement> {
    let flat = flatten(fp);
    let sims: Vec<Option<f64>> = cluster_centroids(ctx.fingerprints, ctx.positions)
        .iter()
        .map(|c| c.as_ref().and_then(|c| flat_similarity(&flat, c)))
        .collect();
    let nearest_cluster = sims
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i);

    let mut neighbors: Vec<Neighbor> = ctx
        .fingerprints
        .agents
        .iter()
        .filter(|f| f.agent_id != fp.agent_id)
        .filter_map(|f| {
            flat_similarity(&flat, &flatten(f)).map(|s| Neighbor {
                agent_id: f.agent_id.clone(),
                score: s,
            })
        })
        .collect();
    neighbors.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.agent_id.cmp(&b.agent_id))
    });
    neighbors.truncate(k);

    let coordinate = if flat.iter().all(|&x| x == 0.0) {
        None
    } else {
        Some(coordinate_for(ctx, &flat, &fp.agent_id, mode)?)
    };
    Ok(Placement {
        schema_version: crate::SCHEMA_VERSION,
        labeled: fp.total_support(),
        nearest_cluster,
        cluster_similarity: sims,
        neighbors,
        coordinate,
    })
}

fn coordinate_for(
    ctx: &PlacementContext<'_>,
    flat: &[f64],
    agent_id: &str,
    mode: PlacementMode,
) -> Result<Vec<f64>> {
    let emb = &ctx.positions.embedding;
    let params = &ctx.positions.config.reduce;
    let reference: Vec<Vec<f64>> = emb
        .agent_ids
        .iter()
        .map(|id| {
            ctx.fingerprints
                .get(id)
                .map(flatten)
                .ok_or_else(|| Error::UnknownAgent(id.clone()))
        })
        .collect::<Result<_>>()?;
    match mode {
        PlacementMode::Projection => project(
            &reference,
            &emb.coords,
            flat,
            params.n_neighbors,
            params.metric,
        ),
        PlacementMode::Refit => {
            let mut points = reference;
            points.push(flat.to_vec());
            let mut ids = emb.agent_ids.clone();
            ids.push(agent_id.to_string());
            let refit = reduce(&points, &ids, params)?;
            Ok(refit.coords.last().cloned().expect("new point embedded"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Started {
        session_id: String,
        agent_id: String,
        per_stratum: usize,
        seed: u64,
        queue: Vec<String>,
        at: u64,
    },
    Labeled {
        item_id: String,
        label: i32,
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub schema_version: u32,
    pub item_id: String,
    pub text: String,
    pub position: usize,
    pub remaining: usize,
    /// Label values and their names.
    pub scale: Vec<(i32, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub agent_id: String,
    pub per_stratum: usize,
    pub seed: u64,
    pub queue: Vec<String>,
    /// Labels in submission order.
    pub labels: Vec<(String, i32)>,
    pub fingerprint: Fingerprint,
    pub created_at: u64,
    pub updated_at: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn topics_of(ctx: &PlacementContext<'_>) -> usize {
    ctx.doc_topics.first().map_or(0, |d| d.len())
}

/// Starts a session whose queue samples up to `per_stratum` items from each
/// divisiveness value between clusters 0 and 1.
pub fn start_session(
    ctx: &PlacementContext<'_>,
    session_id: &str,
    agent_id: &str,
    per_stratum: usize,
    seed: u64,
) -> Result<Session> {
    if ctx.positions.n_clusters() < 2 {
        return Err(Error::Session(
            "sessions need a position report with at least two clusters".into(),
        ));
    }
    if ctx.positions.divisiveness.is_empty() {
        return Err(Error::Session("no divisive strata to sample from".into()));
    }
    let sample = sample_divisive(&ctx.positions.divisiveness, per_stratum, seed)?;
    let at = now();
    let fingerprint = build_fingerprint(
        agent_id,
        AgentKind::DataScientist,
        &[],
        ctx.corpus.scheme(),
        topics_of(ctx),
    )?;
    Ok(Session {
        session_id: session_id.to_string(),
        agent_id: agent_id.to_string(),
        per_stratum,
        seed,
        queue: sample.items,
        labels: Vec::new(),
        fingerprint,
        created_at: at,
        updated_at: at,
    })
}

impl Session {
    pub fn is_labeled(&self, item_id: &str) -> bool {
        self.labels.iter().any(|(i, _)| i == item_id)
    }

    /// First queued item not yet labeled.
    pub fn next_item(&self) -> Option<(usize, &str)> {
        self.queue
            .iter()
            .enumerate()
            .find(|(_, id)| !self.is_labeled(id))
            .map(|(i, id)| (i, id.as_str()))
    }

    pub fn next_view(&self, corpus: &Corpus) -> Result<Option<QueueItem>> {
        let Some((position, id)) = self.next_item() else {
            return Ok(None);
        };
        let idx = corpus.require_item(id)?;
        let scheme = corpus.scheme();
        Ok(Some(QueueItem {
            schema_version: crate::SCHEMA_VERSION,
            item_id: id.to_string(),
            text: corpus.items()[idx].text.clone(),
            position,
            remaining: self.queue.len() - self.labels.len(),
            scale: scheme
                .labels()
                .iter()
                .copied()
                .zip(scheme.names().iter().cloned())
                .collect(),
        }))
    }

    pub fn is_complete(&self) -> bool {
        self.labels.len() == self.queue.len()
    }

    /// Records a label and rebuilds the fingerprint.
    pub fn submit(&mut self, ctx: &PlacementContext<'_>, item_id: &str, label: i32) -> Result<()> {
        if !self.queue.iter().any(|q| q == item_id) {
            return Err(Error::UnknownItem(item_id.to_string()));
        }
        if self.is_labeled(item_id) {
            return Err(Error::DuplicateAnnotation {
                annotator: self.agent_id.clone(),
                item: item_id.to_string(),
            });
        }
        ctx.corpus.scheme().check(label)?;
        ctx.corpus.require_item(item_id)?;
        self.labels.push((item_id.to_string(), label));
        self.fingerprint = self.rebuild(ctx)?;
        self.updated_at = now();
        Ok(())
    }

    /// Fingerprint over the collected labels via the batch builder.
    pub fn rebuild(&self, ctx: &PlacementContext<'_>) -> Result<Fingerprint> {
        let pairs: Vec<(&[f64], i32)> = self
            .labels
            .iter()
            .map(|(id, l)| {
                ctx.corpus
                    .require_item(id)
                    .map(|i| (ctx.doc_topics[i].as_slice(), *l))
            })
            .collect::<Result<_>>()?;
        build_fingerprint(
            &self.agent_id,
            AgentKind::DataScientist,
            &pairs,
            ctx.corpus.scheme(),
            topics_of(ctx),
        )
    }

    pub fn labels_map(&self) -> BTreeMap<String, i32> {
        self.labels.iter().cloned().collect()
    }

    pub fn started_event(&self) -> SessionEvent {
        SessionEvent::Started {
            session_id: self.session_id.clone(),
            agent_id: self.agent_id.clone(),
            per_stratum: self.per_stratum,
            seed: self.seed,
            queue: self.queue.clone(),
            at: self.created_at,
        }
    }

    /// Rebuilds a session from its event log.
    pub fn replay(ctx: &PlacementContext<'_>, events: &[SessionEvent]) -> Result<Session> {
        let Some(SessionEvent::Started {
            session_id,
            agent_id,
            per_stratum,
            seed,
            queue,
            at,
        }) = events.first()
        else {
            return Err(Error::Session(
                "event log does not start with a start event".into(),
            ));
        };
        let mut s = Session {
            session_id: session_id.clone(),
            agent_id: agent_id.clone(),
            per_stratum: *per_stratum,
            seed: *seed,
            queue: queue.clone(),
            labels: Vec::new(),
            fingerprint: build_fingerprint(
                agent_id,
                AgentKind::DataScientist,
                &[],
                ctx.corpus.scheme(),
                topics_of(ctx),
            )?,
            created_at: *at,
            updated_at: *at,
        };
        for e in &events[1..] {
            match e {
                SessionEvent::Labeled { item_id, label, at } => {
                    s.submit(ctx, item_id, *label)?;
                    s.updated_at = *at;
                }
                SessionEvent::Started { .. } => {
                    return Err(Error::Session("event log has a second start event".into()));
                }
            }
        }
        Ok(s)
    }
}

/// Append-only JSON-lines event log.
pub struct EventLog {
    path: std::path::PathBuf,
}

impl EventLog {
    /// Creates a new log; fails if it already exists.
    pub fn create(path: &Path, first: &SessionEvent) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(
            f,
            "{}",
            serde_json::to_string(first).expect("events serialize")
        )
        .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn open(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
        }
    }

    pub fn append(&self, event: &SessionEvent) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(
            f,
            "{}",
            serde_json::to_string(event).expect("events serialize")
        )
        .map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    pub fn read(path: &Path) -> Result<Vec<SessionEvent>> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                line: (n + 1) as u64,
                message: e.to_string(),
            })?;
            out.push(e);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusBuilder, LabelScheme};
    use crate::positions::{ClusterAssignment, Embedding, MineConfig, ReduceMethod};

    struct World {
        corpus: Corpus,
        topics: Vec<Vec<f64>>,
        fpset: FingerprintSet,
        positions: PositionReport,
    }

    fn world() -> World {
        let mut b = CorpusBuilder::new(LabelScheme::toxicity());
        for i in 0..4 {
            b.add_item(format!("i{i}"), format!("text {i}")).unwrap();
        }
        for i in 0..4 {
            b.add_annotation(&format!("i{i}"), "a", -2).unwrap();
            b.add_annotation(&format!("i{i}"), "b", if i < 2 { 0 } else { 1 })
                .unwrap();
        }
        let corpus = b.build();
        let topics = vec![
            vec![1.0, 0.0],
            vec![0.8, 0.2],
            vec![0.2, 0.8],
            vec![0.0, 1.0],
        ];
        let fpset = crate::fingerprint::batch_fingerprints(&corpus, &topics, "h", 1).unwrap();
        let mut modal = BTreeMap::new();
        let mut div = BTreeMap::new();
        for i in 0..4 {
            let b_label = if i < 2 { 0 } else { 1 };
            modal.insert(format!("i{i}"), vec![Some(-2), Some(b_label)]);
            div.insert(format!("i{i}"), -2 - b_label);
        }
        let positions = PositionReport {
            schema_version: 1,
            fingerprint_set_hash: fpset.hash(),
            config: MineConfig::default(),
            eps: 1.0,
            embedding: Embedding {
                method: ReduceMethod::Pca,
                dims: 2,
                seed: 0,
                agent_ids: vec!["a".into(), "b".into()],
                coords: vec![vec![0.0, 0.0], vec![10.0, 0.0]],
            },
            assignment: ClusterAssignment {
                labels: vec![Some(0), Some(1)],
                eps: 1.0,
                min_samples: 1,
            },
            cluster_sizes: vec![1, 1],
            noise: 0,
            silhouette: None,
            demographic_silhouettes: BTreeMap::new(),
            raw_baseline: None,
            modal_labels: modal,
            divisiveness: div,
        };
        World {
            corpus,
            topics,
            fpset,
            positions,
        }
    }

    #[test]
    fn session_flow_and_log_replay() {
        let w = world();
        let ctx = PlacementContext {
            corpus: &w.corpus,
            doc_topics: &w.topics,
            fingerprints: &w.fpset,
            positions: &w.positions,
        };
        let mut s = start_session(&ctx, "s1", "me", 1, 7).unwrap();
        assert_eq!(s.queue.len(), 2);
        assert_eq!(
            start_session(&ctx, "s2", "me", 1, 7).unwrap().queue,
            s.queue
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.jsonl");
        let log = EventLog::create(&path, &s.started_event()).unwrap();
        assert!(EventLog::create(&path, &s.started_event()).is_err());

        let first = s.next_view(&w.corpus).unwrap().unwrap();
        assert_eq!(first.scale.len(), 5);
        let id = first.item_id.clone();
        let label = if id == "i0" || id == "i1" { 0 } else { 1 };
        s.submit(&ctx, &id, label).unwrap();
        log.append(&SessionEvent::Labeled {
            item_id: id.clone(),
            label,
            at: 0,
        })
        .unwrap();
        let nonzero = (0..5)
            .filter(|&j| s.fingerprint.column(j).iter().any(|&x| x > 0.0))
            .count();
        assert_eq!(nonzero, 1);
        assert!(matches!(
            s.submit(&ctx, &id, 0),
            Err(Error::DuplicateAnnotation { .. })
        ));
        assert!(s.submit(&ctx, "i9", 0).is_err());

        let p = place(&ctx, &s.fingerprint, 1, PlacementMode::Projection).unwrap();
        assert_eq!(p.neighbors[0].agent_id, "b");
        assert_eq!(p.nearest_cluster, Some(1));
        assert!(p.coordinate.is_some());

        let events = EventLog::read(&path).unwrap();
        let replayed = Session::replay(&ctx, &events).unwrap();
        assert_eq!(replayed.fingerprint, s.fingerprint);
        assert_eq!(replayed.labels, s.labels);
    }

    #[test]
    fn needs_two_clusters() {
        let mut w = world();
        w.positions.cluster_sizes = vec![2];
        w.positions.assignment.labels = vec![Some(0), Some(0)];
        let ctx = PlacementContext {
            corpus: &w.corpus,
            doc_topics: &w.topics,
            fingerprints: &w.fpset,
            positions: &w.positions,
        };
        assert!(matches!(
            start_session(&ctx, "s", "me", 1, 0),
            Err(Error::Session(_))
        ));
    }
}
