//! Brute-force oracles and a small end-to-end workspace shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use positionlab::agreement::AlphaMetric;
use positionlab::divergence::{DivergenceConfig, Normalization};
use positionlab::manifest::{commit, RunManifest};
use positionlab::models::SweepConfig;
use positionlab::pipeline::{
    run_stage, IngestParams, MapParams, SourceFormat, Stage, TopicsParams, Workspace,
};
use positionlab::positions::MineConfig;
use positionlab::session::{start_session, EventLog, PlacementContext, SessionEvent};
use positionlab::synthetic::{
    policy_label, topic_word, two_policy_population, TwoPolicyConfig, TwoPolicyPopulation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// Silhouette straight from the definition, noise excluded.
pub fn silhouette_oracle(points: &[Vec<f64>], labels: &[Option<usize>]) -> Option<f64> {
    let clusters: std::collections::BTreeSet<usize> = labels.iter().flatten().copied().collect();
    if clusters.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..points.len() {
        let Some(ci) = labels[i] else { continue };
        count += 1;
        let mut mean_to = BTreeMap::new();
        for &c in &clusters {
            let others: Vec<usize> = (0..points.len())
                .filter(|&j| j != i && labels[j] == Some(c))
                .collect();
            if !others.is_empty() {
                let d: f64 = others.iter().map(|&j| euclid(&points[i], &points[j])).sum();
                mean_to.insert(c, d / others.len() as f64);
            }
        }
        let Some(&a) = mean_to.get(&ci) else {
            continue; // singleton scores 0
        };
        let b = mean_to
            .iter()
            .filter(|(c, _)| **c != ci)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Some(total / count as f64)
}

/// DBSCAN via an explicit reachability closure over core points.
pub fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| i == j || euclid(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_samples)
        .collect();
    // reach[i][j]: core i and core j are density-connected
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && near(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    // each component named by its smallest member
    let rep: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| (0..n).find(|&j| reach[i][j]).unwrap()))
        .collect();
    let mut reps: Vec<usize> = rep.iter().flatten().copied().collect();
    reps.sort_unstable();
    reps.dedup();
    let core_count = |r: usize| rep.iter().filter(|x| **x == Some(r)).count();
    reps.sort_by_key(|&r| (std::cmp::Reverse(core_count(r)), r));
    let provisional: BTreeMap<usize, usize> =
        reps.iter().enumerate().map(|(p, &r)| (r, p)).collect();

    let labels: Vec<Option<usize>> = (0..n)
        .map(|i| match rep[i] {
            Some(r) => Some(provisional[&r]),
            None => (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| provisional[&rep[j].unwrap()])
                .min(),
        })
        .collect();
    let size = |p: usize| labels.iter().filter(|l| **l == Some(p)).count();
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by_key(|&p| (std::cmp::Reverse(size(p)), p));
    let mut final_id = vec![0; reps.len()];
    for (rank, p) in order.into_iter().enumerate() {
        final_id[p] = rank;
    }
    labels.into_iter().map(|l| l.map(|p| final_id[p])).collect()
}

pub fn cosine_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        None
    } else {
        Some(ab / (aa.sqrt() * bb.sqrt()))
    }
}

/// Largest ECDF gap, evaluated at every observed value.
pub fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut d: f64 = 0.0;
    for &x in a.iter().chain(b) {
        let fa = a.iter().filter(|&&v| v <= x).count() as f64 / a.len() as f64;
        let fb = b.iter().filter(|&&v| v <= x).count() as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Holm adjusted p-values plus the classic step-down rejection set.
pub fn holm_oracle(p: &[f64], alpha: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    for k in 0..m {
        let mut best: f64 = 0.0;
        for j in 0..=k {
            best = best.max(((m - j) as f64 * p[order[j]]).min(1.0));
        }
        adjusted[order[k]] = best;
    }
    let mut reject = vec![false; m];
    for k in 0..m {
        if p[order[k]] > alpha / (m - k) as f64 {
            break;
        }
        reject[order[k]] = true;
    }
    (adjusted, reject)
}

/// Random points in a few loose blobs so DBSCAN has something to find.
pub fn random_blobs(r: &mut ChaCha8Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..r.random_range(1..=4))
        .map(|_| (0..dims).map(|_| r.random_range(-5.0..5.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c = &centers[r.random_range(0..centers.len())];
            c.iter().map(|x| x + r.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

pub struct Fixture {
    pub dir: TempDir,
    pub ws: Workspace,
    pub manifests: Vec<RunManifest>,
    pub population: TwoPolicyPopulation,
}

pub const SESSION_ID: &str = "me";

fn run(ws: &Workspace, stage: Stage) -> RunManifest {
    let m = run_stage(&stage, ws, ws).unwrap_or_else(|e| panic!("{}: {e}", stage.name()));
    commit(ws, &m, None).unwrap();
    m
}

pub fn small_population(seed: u64) -> TwoPolicyPopulation {
    two_policy_population(&TwoPolicyConfig {
        annotators: 120,
        docs: 600,
        annotations_per_annotator: 40,
        seed,
        ..Default::default()
    })
}

/// Every stage run once on a small planted population, including a
/// completed self-annotation session.
pub fn pipeline_fixture(seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let population = small_population(seed);
    let source = dir.path().join("source");
    population.corpus.write_tsv(&source).unwrap();

    let lexicon: BTreeMap<String, Vec<String>> = (0..3)
        .map(|t| {
            (
                format!("topic{t}"),
                (0..10).map(|i| topic_word(t, i)).collect(),
            )
        })
        .collect();
    let lexicon_path = dir.path().join("lexicon.json");
    std::fs::write(&lexicon_path, serde_json::to_vec(&lexicon).unwrap()).unwrap();

    let ws = Workspace::new(dir.path().join("ws"));
    let mut manifests = vec![
        run(
            &ws,
            Stage::Ingest(IngestParams {
                format: SourceFormat::Canonical,
                source: source.clone(),
                scheme: None,
            }),
        ),
        run(
            &ws,
            Stage::Agreement {
                metric: AlphaMetric::Interval,
            },
        ),
        run(
            &ws,
            Stage::Topics(TopicsParams {
                k: Some(3),
                iterations: 150,
                min_df: 2,
                seed,
                ..Default::default()
            }),
        ),
        run(
            &ws,
            Stage::Fingerprints {
                min_annotations: 10,
            },
        ),
    ];
    let mut mine = MineConfig::default();
    mine.reduce.seed = seed;
    manifests.push(run(&ws, Stage::Mine(mine)));
    manifests.push(run(
        &ws,
        Stage::Diverge {
            lexicon: lexicon_path,
            cluster_a: 0,
            cluster_b: 1,
            config: DivergenceConfig {
                normalize: Normalization::None,
                ..Default::default()
            },
        },
    ));
    manifests.push(run(
        &ws,
        Stage::SampleDivisive {
            per_stratum: 5,
            seed,
        },
    ));
    manifests.push(run(
        &ws,
        Stage::Models(SweepConfig {
            grid: vec![0.1, 1.0],
            max_epochs: 300,
            seed,
            ..Default::default()
        }),
    ));

    write_session(&ws, &population, seed);
    manifests.push(run(
        &ws,
        Stage::Annotate {
            session_id: SESSION_ID.into(),
        },
    ));
    manifests.push(run(
        &ws,
        Stage::Map(MapParams {
            data_scientists: vec![SESSION_ID.into()],
            ..Default::default()
        }),
    ));
    Fixture {
        dir,
        ws,
        manifests,
        population,
    }
}

/// Labels every queued item with policy 0's rule and logs it.
fn write_session(ws: &Workspace, population: &TwoPolicyPopulation, seed: u64) {
    let corpus = ws.load_corpus().unwrap();
    let model = ws.load_topic_model().unwrap();
    let set = ws.load_fingerprints().unwrap();
    let positions = ws.load_positions().unwrap();
    let ctx = PlacementContext {
        corpus: &corpus,
        doc_topics: &model.doc_topic,
        fingerprints: &set,
        positions: &positions,
    };
    let mut s = start_session(&ctx, SESSION_ID, "data_scientist/me", 4, seed).unwrap();
    let log = EventLog::create(
        &ws.path(&Workspace::session_rel(SESSION_ID)),
        &s.started_event(),
    )
    .unwrap();
    for item in s.queue.clone() {
        let idx = corpus.item_index(&item).unwrap();
        let label = policy_label(0, population.dominant[idx], 3);
        s.submit(&ctx, &item, label).unwrap();
        log.append(&SessionEvent::Labeled {
            item_id: item,
            label,
            at: 0,
        })
        .unwrap();
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Each `check_*` runs `n` random instances of at most 50 elements against
/// the oracle above and reports the first mismatch.
pub fn check_silhouette(n: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..n {
        let size = r.random_range(2..=50);
        let dims = r.random_range(1..=4);
        let points = random_blobs(&mut r, size, dims);
        let k = r.random_range(1..=4);
        let labels: Vec<Option<usize>> = (0..size)
            .map(|_| (r.random::<f64>() > 0.15).then(|| r.random_range(0..k)))
            .collect();
        let got = positionlab::positions::silhouette(&points, &labels);
        let want = silhouette_oracle(&points, &labels);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) if (g - w).abs() <= 1e-12 => {}
            _ => return Err(format!("silhouette case {case}: {got:?} vs {want:?}")),
        }
    }
    Ok(())
}

pub fn check_dbscan(n: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..n {
        let size = r.random_range(1..=50);
        let dims = r.random_range(1..=3);
        let points = random_blobs(&mut r, size, dims);
        let eps = r.random_range(0.2..2.5);
        let min_samples = r.random_range(1..=6);
        let got = positionlab::positions::dbscan(&points, eps, min_samples)
            .map_err(|e| e.to_string())?
            .labels;
        let want = dbscan_oracle(&points, eps, min_samples);
        if got != want {
            return Err(format!("dbscan case {case}: {got:?} vs {want:?}"));
        }
    }
    Ok(())
}

pub fn check_cosine(n: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..n {
        let len = r.random_range(1..=50);
        let mut a: Vec<f64> = (0..len).map(|_| r.random::<f64>()).collect();
        let b: Vec<f64> = (0..len)
            .map(|_| {
                if r.random::<f64>() < 0.3 {
                    0.0
                } else {
                    r.random::<f64>()
                }
            })
            .collect();
        if case % 10 == 0 {
            a.iter_mut().for_each(|x| *x = 0.0);
        }
        let got = positionlab::fingerprint::flat_similarity(&a, &b);
        let want = cosine_oracle(&a, &b);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) if (g - w).abs() <= 1e-12 => {}
            _ => return Err(format!("cosine case {case}: {got:?} vs {want:?}")),
        }
    }
    Ok(())
}

pub fn check_ks(n: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..n {
        let na = r.random_range(1..=50);
        let nb = r.random_range(1..=50);
        // small integer range so ties are common
        let range = r.random_range(2..20);
        let a: Vec<f64> = (0..na).map(|_| r.random_range(0..range) as f64).collect();
        let b: Vec<f64> = (0..nb)
            .map(|_| r.random_range(0..range) as f64 + 0.5 * (case % 2) as f64)
            .collect();
        let got = positionlab::divergence::ks_statistic(&a, &b);
        let want = ks_oracle(&a, &b);
        if (got - want).abs() > 1e-12 {
            return Err(format!("ks case {case}: {got} vs {want}"));
        }
    }
    Ok(())
}

pub fn check_holm(n: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..n {
        let m = r.random_range(1..=50);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if r.random::<f64>() < 0.2 {
                    (r.random_range(0..5) as f64) / 100.0
                } else {
                    r.random::<f64>().powi(3)
                }
            })
            .collect();
        let alpha = 0.05;
        let got = positionlab::divergence::holm_bonferroni(&p, alpha).map_err(|e| e.to_string())?;
        let (adjusted, reject) = holm_oracle(&p, alpha);
        for i in 0..m {
            if (got.adjusted[i] - adjusted[i]).abs() > 1e-12 || got.reject[i] != reject[i] {
                return Err(format!(
                    "holm case {case} index {i}: ({}, {}) vs ({}, {})",
                    got.adjusted[i], got.reject[i], adjusted[i], reject[i]
                ));
            }
        }
    }
    Ok(())
}
