//! Run manifests: every parameter, seed and hash a stage used or produced.
//!
//! Each stage writes `manifests/<name>.json`. The workspace-level
//! `artifacts.json` maps every artifact to the manifest that produced it, so
//! any artifact can be traced back and regenerated.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{run_stage, Stage, Workspace};
use crate::util::{read_json, sha256_file, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    #[serde(flatten)]
    pub stage: Stage,
    /// Workspace-relative path → SHA-256 of files read from the workspace.
    pub inputs: BTreeMap<String, String>,
    /// Files read from outside the workspace, keyed by the path as given.
    pub external_inputs: BTreeMap<String, String>,
    /// Workspace-relative path → SHA-256 of every file written.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(stage: Stage) -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage,
            inputs: BTreeMap::new(),
            external_inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    /// Workspace-relative path of the producing manifest.
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub schema_version: u32,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Default for ArtifactIndex {
    fn default() -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            artifacts: BTreeMap::new(),
        }
    }
}

impl ArtifactIndex {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            read_json(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn record(&mut self, manifest_path: &str, manifest: &RunManifest) {
        for (artifact, sha256) in &manifest.outputs {
            self.artifacts.insert(
                artifact.clone(),
                ArtifactEntry {
                    sha256: sha256.clone(),
                    manifest: manifest_path.to_string(),
                },
            );
        }
    }
}

/// Writes the manifest into the workspace and indexes its outputs.
///
/// `extra` is an additional location (the `--manifest-out` flag).
pub fn commit(ws: &Workspace, manifest: &RunManifest, extra: Option<&Path>) -> Result<()> {
    let rel = ws.manifest_rel(&manifest.stage);
    manifest.save(&ws.root.join(&rel))?;
    if let Some(p) = extra {
        manifest.save(p)?;
    }
    let index_path = ws.root.join(Workspace::ARTIFACTS);
    let mut index = ArtifactIndex::load_or_default(&index_path)?;
    index.record(&rel, manifest);
    write_json(&index_path, &index)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub artifact: String,
    pub expected: String,
    pub actual: Option<String>,
}

impl ReplayCheck {
    pub fn matches(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

/// Re-runs a manifest's stage against `input` and writes into `scratch`,
/// then compares every recorded output hash.
///
/// Fails up front if any recorded input no longer matches its hash, since
/// the comparison would be meaningless.
pub fn replay(
    manifest: &RunManifest,
    input: &Workspace,
    scratch: &Workspace,
) -> Result<Vec<ReplayCheck>> {
    for (rel, expected) in &manifest.inputs {
        let actual = sha256_file(&input.root.join(rel))?;
        if &actual != expected {
            return Err(Error::Reproducibility(format!(
                "input {rel} changed since the run"
            )));
        }
    }
    for (path, expected) in &manifest.external_inputs {
        let actual = sha256_file(Path::new(path))?;
        if &actual != expected {
            return Err(Error::Reproducibility(format!(
                "input {path} changed since the run"
            )));
        }
    }
    let rerun = run_stage(&manifest.stage, input, scratch)?;
    Ok(manifest
        .outputs
        .iter()
        .map(|(artifact, expected)| ReplayCheck {
            artifact: artifact.clone(),
            expected: expected.clone(),
            actual: rerun.outputs.get(artifact).cloned(),
        })
        .collect())
}
