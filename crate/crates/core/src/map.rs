//! Exportable map of embedded fingerprints.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{flatten, AgentKind, Fingerprint, FingerprintSet};
use crate::positions::{project, reduce, PositionReport, ReduceParams};
use crate::session::PlacementMode;
use crate::util::{sha256_hex, to_json_bytes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    #[serde(rename = "id")]
    pub agent_id: String,
    pub kind: AgentKind,
    pub x: f64,
    pub y: f64,
    /// Mined cluster for crowd annotators; `None` for noise and non-crowd
    /// agents.
    pub cluster: Option<usize>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapExport {
    pub schema_version: u32,
    pub position_report_hash: String,
    pub placement: PlacementMode,
    pub clusters: Vec<ClusterSummary>,
    pub noise: usize,
    pub points: Vec<MapPoint>,
    /// Reducer parameters the coordinates came from.
    pub params: ReduceParams,
    pub seed: u64,
}

impl MapExport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        to_json_bytes(self)
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.to_json_bytes())
    }

    pub fn count(&self, kind: AgentKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }
}

/// Crowd points from the position report plus `extra` agents (models, data
/// scientists) placed by projection or by refitting the reducer.
pub fn build_map(
    fpset: &FingerprintSet,
    positions: &PositionReport,
    extra: &[Fingerprint],
    placement: PlacementMode,
) -> Result<MapExport> {
    let emb = &positions.embedding;
    if emb.dims != 2 {
        return Err(Error::InvalidParameter(format!(
            "maps need a 2-D embedding, got {} dimensions",
            emb.dims
        )));
    }
    let reference: Vec<Vec<f64>> = emb
        .agent_ids
        .iter()
        .map(|id| {
            fpset
                .get(id)
                .map(flatten)
                .ok_or_else(|| Error::UnknownAgent(id.clone()))
        })
        .collect::<Result<_>>()?;
    for fp in extra {
        if fp.topics() != fpset.topics || fp.labels() != fpset.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: fpset.topics * fpset.labels.len(),
                actual: fp.topics() * fp.labels(),
            });
        }
    }

    let params = &positions.config.reduce;
    let (crowd_coords, extra_coords): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match placement {
        PlacementMode::Projection => {
            let coords = extra
                .iter()
                .map(|fp| {
                    project(
                        &reference,
                        &emb.coords,
                        &flatten(fp),
                        params.n_neighbors,
                        params.metric,
                    )
                })
                .collect::<Result<_>>()?;
            (emb.coords.clone(), coords)
        }
        PlacementMode::Refit => {
            let mut points = reference.clone();
            let mut ids = emb.agent_ids.clone();
            for fp in extra {
                points.push(flatten(fp));
                ids.push(fp.agent_id.clone());
            }
            let refit = reduce(&points, &ids, params)?;
            let mut coords = refit.coords;
            let tail = coords.split_off(reference.len());
            (coords, tail)
        }
    };

    let mut points = Vec::with_capacity(crowd_coords.len() + extra.len());
    for (i, id) in emb.agent_ids.iter().enumerate() {
        let fp = fpset.get(id).expect("checked above");
        points.push(MapPoint {
            agent_id: id.clone(),
            kind: fp.agent_kind,
            x: crowd_coords[i][0],
            y: crowd_coords[i][1],
            cluster: positions.assignment.labels[i],
            support: fp.total_support(),
        });
    }
    for (fp, c) in extra.iter().zip(extra_coords) {
        points.push(MapPoint {
            agent_id: fp.agent_id.clone(),
            kind: fp.agent_kind,
            x: c[0],
            y: c[1],
            cluster: None,
            support: fp.total_support(),
        });
    }
    Ok(MapExport {
        schema_version: crate::SCHEMA_VERSION,
        position_report_hash: positions.hash(),
        placement,
        clusters: positions
            .cluster_sizes
            .iter()
            .enumerate()
            .map(|(id, &size)| ClusterSummary { id, size })
            .collect(),
        noise: positions.noise,
        points,
        params: params.clone(),
        seed: params.seed,
    })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG scatter plot with one mark per point: circles for crowd annotators
/// colored by cluster (grey for noise), squares for models, diamonds for
/// data scientists.
pub fn to_svg(map: &MapExport) -> String {
    const SIZE: f64 = 800.0;
    const PAD: f64 = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &map.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let sx = |x: f64| PAD + (x - x0) / span * (SIZE - 2.0 * PAD);
    let sy = |y: f64| SIZE - PAD - (y - y0) / span * (SIZE - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="100%" height="100%" fill="#ffffff"/>"##
    );
    for p in &map.points {
        let (x, y) = (sx(p.x), sy(p.y));
        let id = escape(&p.agent_id);
        match p.kind {
            AgentKind::Crowd => {
                let (fill, class) = match p.cluster {
                    Some(c) => (PALETTE[c % PALETTE.len()], format!("cluster-{c}")),
                    None => ("#b0b0b0", "noise".to_string()),
                };
                let _ = writeln!(
                    out,
                    r#"<circle class="point crowd {class}" data-id="{id}" cx="{x:.2}" cy="{y:.2}" r="3" fill="{fill}" fill-opacity="0.7"/>"#
                );
            }
            AgentKind::Model => {
                let _ = writeln!(
                    out,
                    r##"<rect class="point model" data-id="{id}" x="{:.2}" y="{:.2}" width="9" height="9" fill="#000000" stroke="#ffffff"/>"##,
                    x - 4.5,
                    y - 4.5
                );
            }
            AgentKind::DataScientist => {
                let _ = writeln!(
                    out,
                    r##"<polygon class="point data_scientist" data-id="{id}" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="#ffd700" stroke="#000000"/>"##,
                    x,
                    y - 8.0,
                    x + 8.0,
                    y,
                    x,
                    y + 8.0,
                    x - 8.0,
                    y
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> MapExport {
        MapExport {
            schema_version: 1,
            position_report_hash: "h".into(),
            placement: PlacementMode::Projection,
            clusters: vec![ClusterSummary { id: 0, size: 1 }],
            noise: 1,
            points: vec![
                MapPoint {
                    agent_id: "a<1>".into(),
                    kind: AgentKind::Crowd,
                    x: 0.0,
                    y: 0.0,
                    cluster: Some(0),
                    support: 3,
                },
                MapPoint {
                    agent_id: "b".into(),
                    kind: AgentKind::Crowd,
                    x: 1.0,
                    y: 1.0,
                    cluster: None,
                    support: 3,
                },
                MapPoint {
                    agent_id: "m".into(),
                    kind: AgentKind::Model,
                    x: 0.5,
                    y: 0.2,
                    cluster: None,
                    support: 9,
                },
                MapPoint {
                    agent_id: "me".into(),
                    kind: AgentKind::DataScientist,
                    x: 0.1,
                    y: 0.9,
                    cluster: None,
                    support: 2,
                },
            ],
            params: ReduceParams::default(),
            seed: 0,
        }
    }

    #[test]
    fn svg_has_one_mark_per_point() {
        let svg = to_svg(&map());
        assert_eq!(svg.matches("class=\"point ").count(), 4);
        assert!(svg.contains("cluster-0"));
        assert!(svg.contains("noise"));
        assert!(svg.contains("a&lt;1&gt;"));
        assert!(svg.contains("<rect class=\"point model\""));
        assert!(svg.contains("<polygon class=\"point data_scientist\""));
    }

    #[test]
    fn json_round_trip() {
        let m = map();
        let back: MapExport = serde_json::from_slice(&m.to_json_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.count(AgentKind::Crowd), 2);
    }
}
