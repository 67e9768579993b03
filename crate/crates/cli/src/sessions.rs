//! Loaded pipeline artifacts and the session operations shared by the
//! interactive CLI and the HTTP API. Every label is appended to the
//! session's event log before it counts, so a crashed process resumes
//! exactly where it stopped.

use std::path::PathBuf;

use positionlab::corpus::Corpus;
use positionlab::fingerprint::FingerprintSet;
use positionlab::pipeline::{check_id, Workspace};
use positionlab::positions::PositionReport;
use positionlab::session::{start_session, EventLog, PlacementContext, Session, SessionEvent};
use positionlab::topics::TopicModel;
use positionlab::{Error, Result};

/// Artifacts a session needs, in pipeline order.
pub const REQUIRED: [&str; 6] = [
    Workspace::SCHEME,
    Workspace::ITEMS,
    Workspace::ANNOTATIONS,
    Workspace::TOPIC_MODEL,
    Workspace::FINGERPRINTS,
    Workspace::POSITIONS,
];

pub fn missing(ws: &Workspace) -> Vec<&'static str> {
    REQUIRED.into_iter().filter(|rel| !ws.exists(rel)).collect()
}

pub struct Artifacts {
    pub ws: Workspace,
    pub corpus: Corpus,
    pub model: TopicModel,
    pub fingerprints: FingerprintSet,
    pub positions: PositionReport,
}

impl Artifacts {
    pub fn load(ws: &Workspace) -> Result<Self> {
        Ok(Self {
            ws: ws.clone(),
            corpus: ws.load_corpus()?,
            model: ws.load_topic_model()?,
            fingerprints: ws.load_fingerprints()?,
            positions: ws.load_positions()?,
        })
    }

    pub fn ctx(&self) -> PlacementContext<'_> {
        PlacementContext {
            corpus: &self.corpus,
            doc_topics: &self.model.doc_topic,
            fingerprints: &self.fingerprints,
            positions: &self.positions,
        }
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.ws.path(&Workspace::session_rel(session_id))
    }

    pub fn session_exists(&self, session_id: &str) -> bool {
        check_id(session_id).is_ok() && self.log_path(session_id).exists()
    }

    /// Starts a new session and writes its log. Fails if the id is taken.
    pub fn create(
        &self,
        session_id: &str,
        agent_id: &str,
        per_stratum: usize,
        seed: u64,
    ) -> Result<Session> {
        check_id(session_id)?;
        if per_stratum == 0 {
            return Err(Error::InvalidParameter(
                "per_stratum must be at least 1".into(),
            ));
        }
        if self.session_exists(session_id) {
            return Err(Error::DuplicateId(session_id.to_string()));
        }
        let session = start_session(&self.ctx(), session_id, agent_id, per_stratum, seed)?;
        EventLog::create(&self.log_path(session_id), &session.started_event())?;
        Ok(session)
    }

    /// Replays an existing session from its log.
    pub fn open(&self, session_id: &str) -> Result<Session> {
        check_id(session_id)?;
        let path = self.log_path(session_id);
        if !path.exists() {
            return Err(Error::Session(format!("no session `{session_id}`")));
        }
        Session::replay(&self.ctx(), &EventLog::read(&path)?)
    }

    /// Validates a label on a copy, logs it, then applies it. A rejected
    /// label leaves both the session and the log untouched.
    pub fn submit(&self, session: &mut Session, item_id: &str, label: i32) -> Result<()> {
        let mut next = session.clone();
        next.submit(&self.ctx(), item_id, label)?;
        EventLog::open(&self.log_path(&session.session_id)).append(&SessionEvent::Labeled {
            item_id: item_id.to_string(),
            label,
            at: next.updated_at,
        })?;
        *session = next;
        Ok(())
    }
}

/// Agent id used when a session does not name one.
pub fn default_agent_id(session_id: &str) -> String {
    format!("data_scientist/{session_id}")
}
