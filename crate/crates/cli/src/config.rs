//! TOML run configuration. Every section is optional; command-line flags
//! override whatever the file sets.

use std::path::{Path, PathBuf};

use positionlab::agreement::AlphaMetric;
use positionlab::divergence::{DivergenceConfig, Normalization};
use positionlab::models::SweepConfig;
use positionlab::pipeline::{MapParams, SourceFormat, TopicsParams};
use positionlab::positions::MineConfig;
use positionlab::session::PlacementMode;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Applied to every seeded stage unless `--seed` is given.
    pub seed: Option<u64>,
    pub ingest: IngestSection,
    pub agreement: AgreementSection,
    pub topics: TopicsParams,
    pub fingerprints: FingerprintsSection,
    pub mine: MineConfig,
    pub diverge: DivergeSection,
    pub sample_divisive: SampleSection,
    pub models: SweepConfig,
    pub map: MapParams,
    pub annotate: AnnotateSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub source: Option<PathBuf>,
    pub format: SourceFormat,
    pub scheme: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementSection {
    pub metric: AlphaMetric,
}

impl Default for AgreementSection {
    fn default() -> Self {
        Self {
            metric: AlphaMetric::Interval,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintsSection {
    pub min_annotations: usize,
}

impl Default for FingerprintsSection {
    fn default() -> Self {
        Self {
            min_annotations: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergeSection {
    pub lexicon: Option<PathBuf>,
    pub clusters: (usize, usize),
    pub toxic_threshold: i32,
    pub alpha: f64,
    pub top_n: usize,
    pub normalize: Normalization,
}

impl Default for DivergeSection {
    fn default() -> Self {
        let d = DivergenceConfig::default();
        Self {
            lexicon: None,
            clusters: (0, 1),
            toxic_threshold: d.toxic_threshold,
            alpha: d.alpha,
            top_n: d.top_n,
            normalize: d.normalize,
        }
    }
}

impl DivergeSection {
    pub fn config(&self) -> DivergenceConfig {
        DivergenceConfig {
            toxic_threshold: self.toxic_threshold,
            alpha: self.alpha,
            top_n: self.top_n,
            normalize: self.normalize,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub per_stratum: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { per_stratum: 13 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub per_stratum: usize,
    /// Nearest annotators reported with each placement.
    pub neighbors: usize,
    pub placement: PlacementMode,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        Self {
            per_stratum: 13,
            neighbors: 10,
            placement: PlacementMode::Projection,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    pub studio: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            studio: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let c: PipelineConfig = toml::from_str(
            r#"
            seed = 9
            [topics]
            k = 13
            [mine]
            min_samples = 5
            [mine.reduce]
            epochs = 50
            [diverge]
            clusters = [1, 0]
            normalize = "per-doc"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.topics.k, Some(13));
        assert_eq!(c.topics.min_df, 5);
        assert_eq!(c.mine.min_samples, 5);
        assert_eq!(c.mine.reduce.epochs, 50);
        assert_eq!(c.mine.reduce.n_neighbors, 15);
        assert_eq!(c.diverge.clusters, (1, 0));
        assert_eq!(c.diverge.config().alpha, 0.05);
        assert_eq!(c.diverge.normalize, Normalization::PerDoc);
        assert_eq!(c.sample_divisive.per_stratum, 13);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[topics]\nkk = 3\n").is_err());
    }
}
