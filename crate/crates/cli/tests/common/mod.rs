//! A workspace built end to end through the `positionlab` binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use positionlab::synthetic::{
    policy_label, topic_word, two_policy_population, TwoPolicyConfig, TwoPolicyPopulation,
};

pub const SEED: u64 = 5;

pub struct Fixture {
    pub root: PathBuf,
    pub ws: PathBuf,
    pub population: TwoPolicyPopulation,
    /// `item_id<TAB>label` for every item under policy 0.
    pub labels: PathBuf,
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_positionlab"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn cli(ws: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--workdir")
        .arg(ws)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(ws: &Path, args: &[&str]) -> String {
    let out = cli(ws, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Fresh scratch directory under cargo's per-target temp dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn population() -> TwoPolicyPopulation {
    two_policy_population(&TwoPolicyConfig {
        annotators: 120,
        docs: 600,
        annotations_per_annotator: 40,
        seed: SEED,
        ..Default::default()
    })
}

/// Runs every stage except annotate through the CLI, once per test binary.
pub fn fixture(name: &str) -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| build(name))
}

fn build(name: &str) -> Fixture {
    let root = scratch(name);
    let population = population();
    let source = root.join("source");
    population.corpus.write_tsv(&source).unwrap();

    let lexicon: BTreeMap<String, Vec<String>> = (0..3)
        .map(|t| {
            (
                format!("topic{t}"),
                (0..10).map(|i| topic_word(t, i)).collect(),
            )
        })
        .collect();
    let lexicon_path = root.join("lexicon.json");
    std::fs::write(&lexicon_path, serde_json::to_vec(&lexicon).unwrap()).unwrap();

    let mut labels = String::new();
    for (i, item) in population.corpus.items().iter().enumerate() {
        labels.push_str(&format!(
            "{}\t{}\n",
            item.item_id,
            policy_label(0, population.dominant[i], 3)
        ));
    }
    let labels_path = root.join("labels.tsv");
    std::fs::write(&labels_path, labels).unwrap();

    // topic settings come from the config file, everything else from flags
    let ws = root.join("ws");
    std::fs::create_dir_all(&ws).unwrap();
    std::fs::write(
        ws.join("positionlab.toml"),
        "[topics]\nk = 3\niterations = 150\nmin_df = 2\n\n[annotate]\nper_stratum = 4\n",
    )
    .unwrap();
    let seed = SEED.to_string();
    let src = source.to_str().unwrap();
    let lex = lexicon_path.to_str().unwrap();
    for args in [
        vec!["ingest", "--source", src],
        vec!["agreement"],
        vec!["--seed", &seed, "topics", "fit"],
        vec!["fingerprints", "--min-annotations", "10"],
        vec!["--seed", &seed, "mine"],
        vec![
            "diverge",
            "--lexicon",
            lex,
            "--clusters",
            "0,1",
            "--normalize",
            "none",
        ],
        vec!["--seed", &seed, "sample-divisive", "--per-stratum", "5"],
        vec![
            "--seed",
            &seed,
            "models",
            "sweep",
            "--grid",
            "0.1,1",
            "--max-epochs",
            "300",
        ],
        vec!["map"],
    ] {
        ok(&ws, &args);
    }
    Fixture {
        root,
        ws,
        population,
        labels: labels_path,
    }
}
