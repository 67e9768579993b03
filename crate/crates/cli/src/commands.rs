//! Argument definitions and command dispatch.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use positionlab::agreement::AlphaMetric;
use positionlab::divergence::Normalization;
use positionlab::manifest::{commit, replay, RunManifest};
use positionlab::models::ModelSweepReport;
use positionlab::pipeline::{run_stage, IngestParams, MapFormat, SourceFormat, Stage, Workspace};
use positionlab::positions::{
    nearest_neighbors, ClusterSpace, Metric, NeighborSpace, ReduceMethod,
};
use positionlab::session::{place, PlacementMode};
use positionlab::topics::{top_words, KSelectionReport};
use serde::de::DeserializeOwned;

use crate::config::PipelineConfig;
use crate::server::{self, AppState, ServerConfig};
use crate::sessions::{default_agent_id, Artifacts};
use crate::Failure;

/// Config file picked up from the working directory when `--config` is
/// not given.
pub const DEFAULT_CONFIG: &str = "positionlab.toml";

#[derive(Debug, Parser)]
#[command(
    name = "positionlab",
    version,
    about = "Perspective mining over annotated corpora"
)]
pub struct Cli {
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Seed for every seeded stage; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config; defaults to `positionlab.toml` in the workspace if present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra copy of the run manifest.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest_out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unrecognized value `{s}`"))
}

fn cluster_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or("expected two cluster ids as `A,B`")?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a corpus into the workspace.
    Ingest {
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, value_parser = serde_enum::<SourceFormat>)]
        format: Option<SourceFormat>,
        /// Label scheme JSON; the toxicity scale by default.
        #[arg(long)]
        scheme: Option<PathBuf>,
    },
    /// Krippendorff's alpha over the ingested corpus.
    Agreement {
        #[arg(long, value_parser = serde_enum::<AlphaMetric>)]
        metric: Option<AlphaMetric>,
    },
    /// Fit, select or inspect the topic model.
    Topics {
        #[command(subcommand)]
        action: TopicsAction,
    },
    /// Per-annotator topic-label fingerprints.
    Fingerprints {
        #[arg(long)]
        min_annotations: Option<usize>,
    },
    /// Reduce and cluster fingerprints into positions.
    Mine(MineArgs),
    /// Nearest annotators to an agent.
    Neighbors {
        agent: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_parser = serde_enum::<NeighborSpace>, default_value = "fingerprint")]
        space: NeighborSpace,
    },
    /// Lexical divergence between two clusters.
    Diverge {
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_parser = cluster_pair, value_name = "A,B")]
        clusters: Option<(usize, usize)>,
        #[arg(long, value_parser = serde_enum::<Normalization>)]
        normalize: Option<Normalization>,
        #[arg(long, allow_hyphen_values = true)]
        toxic_threshold: Option<i32>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Stratified sample of items by divisiveness.
    SampleDivisive {
        #[arg(long)]
        per_stratum: Option<usize>,
    },
    /// Label a divisive sample and place yourself on the map.
    Annotate(AnnotateArgs),
    /// Train classifiers and fingerprint them.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
    /// Export the position map.
    Map {
        #[arg(long, value_parser = serde_enum::<MapFormat>, value_delimiter = ',')]
        format: Vec<MapFormat>,
        #[arg(long)]
        no_models: bool,
        /// Exported session to include; all exported sessions by default.
        #[arg(long = "data-scientist", value_name = "SESSION")]
        data_scientists: Vec<String>,
        /// Re-run the reducer with the extra agents instead of projecting them.
        #[arg(long)]
        refit: bool,
    },
    /// Re-run a manifest in a scratch directory and compare output hashes.
    Replay { manifest: PathBuf },
    /// Serve the HTTP API (and optionally the studio).
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        studio: Option<PathBuf>,
        #[arg(long)]
        refit: bool,
    },
}

#[derive(Debug, Args)]
pub struct TopicOpts {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    max_df_ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum TopicsAction {
    /// Fit LDA with a fixed K.
    Fit {
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        opts: TopicOpts,
    },
    /// Choose K by held-out perplexity, then fit.
    Select {
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        holdout: Option<f64>,
        #[command(flatten)]
        opts: TopicOpts,
    },
    /// Print the top words of each topic.
    Show {
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long, value_parser = serde_enum::<ReduceMethod>)]
    method: Option<ReduceMethod>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    n_neighbors: Option<usize>,
    #[arg(long)]
    min_dist: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = serde_enum::<Metric>)]
    metric: Option<Metric>,
    /// Fixed DBSCAN radius; chosen by the k-distance elbow otherwise.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
    #[arg(long)]
    elbow_k: Option<usize>,
    #[arg(long, value_parser = serde_enum::<ClusterSpace>)]
    space: Option<ClusterSpace>,
    #[arg(long)]
    no_raw_baseline: bool,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Session id; an existing session is resumed.
    #[arg(long)]
    session: String,
    #[arg(long)]
    agent_id: Option<String>,
    #[arg(long)]
    per_stratum: Option<usize>,
    /// `item_id<TAB>label` lines answering the queue instead of stdin.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    refit: bool,
    #[arg(long)]
    neighbors: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ModelsAction {
    /// Sweep regularization strengths over every label source.
    Sweep {
        /// Comma-separated inverse regularization strengths.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
}

struct Ctx {
    ws: Workspace,
    cfg: PipelineConfig,
    seed: u64,
    manifest_out: Option<PathBuf>,
}

impl Ctx {
    fn execute(&self, stage: Stage) -> Result<RunManifest, Failure> {
        log::info!("running {}", stage.name());
        let m = run_stage(&stage, &self.ws, &self.ws)?;
        commit(&self.ws, &m, self.manifest_out.as_deref())?;
        for rel in m.outputs.keys() {
            eprintln!("wrote {}", self.ws.path(rel).display());
        }
        Ok(m)
    }

    fn read_to_string(&self, rel: &str) -> Result<String, Failure> {
        let path = self.ws.path(rel);
        std::fs::read_to_string(&path)
            .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let ws = Workspace::new(&cli.workdir);
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let p = cli.workdir.join(DEFAULT_CONFIG);
            if p.exists() {
                PipelineConfig::load(&p)?
            } else {
                PipelineConfig::default()
            }
        }
    };
    let seed = cli.seed.or(cfg.seed);
    if let Some(s) = seed {
        cfg.topics.seed = s;
        cfg.mine.reduce.seed = s;
        cfg.models.seed = s;
    }
    let ctx = Ctx {
        ws,
        cfg,
        seed: seed.unwrap_or(0),
        manifest_out: cli.manifest_out,
    };
    match cli.command {
        Command::Ingest {
            source,
            format,
            scheme,
        } => {
            let mut sec = ctx.cfg.ingest.clone();
            if source.is_some() {
                sec.source = source;
            }
            set(&mut sec.format, format);
            if scheme.is_some() {
                sec.scheme = scheme;
            }
            let source = sec.source.ok_or_else(|| {
                Failure::usage("ingest needs --source (or ingest.source in the config)")
            })?;
            ctx.execute(Stage::Ingest(IngestParams {
                format: sec.format,
                source,
                scheme: sec.scheme,
            }))?;
            println!("{}", ctx.read_to_string(Workspace::STATS)?.trim_end());
        }
        Command::Agreement { metric } => {
            let mut m = ctx.cfg.agreement.metric;
            set(&mut m, metric);
            ctx.execute(Stage::Agreement { metric: m })?;
            println!("{}", ctx.read_to_string(Workspace::AGREEMENT)?.trim_end());
        }
        Command::Topics { action } => topics(&ctx, action)?,
        Command::Fingerprints { min_annotations } => {
            let mut min = ctx.cfg.fingerprints.min_annotations;
            set(&mut min, min_annotations);
            ctx.execute(Stage::Fingerprints {
                min_annotations: min,
            })?;
            let set = ctx.ws.load_fingerprints()?;
            println!(
                "{} fingerprints ({} annotators below {min} annotations excluded)",
                set.len(),
                set.excluded.len()
            );
        }
        Command::Mine(a) => mine(&ctx, a)?,
        Command::Neighbors { agent, k, space } => {
            let set = ctx.ws.load_fingerprints()?;
            let embedding = if ctx.ws.exists(Workspace::POSITIONS) {
                Some(ctx.ws.load_positions()?.embedding)
            } else {
                None
            };
            let out = nearest_neighbors(&set, embedding.as_ref(), &agent, k, space)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&out).expect("neighbors serialize")
            );
        }
        Command::Diverge {
            lexicon,
            clusters,
            normalize,
            toxic_threshold,
            alpha,
            top_n,
        } => {
            let mut sec = ctx.cfg.diverge.clone();
            if lexicon.is_some() {
                sec.lexicon = lexicon;
            }
            set(&mut sec.clusters, clusters);
            set(&mut sec.normalize, normalize);
            set(&mut sec.toxic_threshold, toxic_threshold);
            set(&mut sec.alpha, alpha);
            set(&mut sec.top_n, top_n);
            let lexicon = sec.lexicon.clone().ok_or_else(|| {
                Failure::usage("diverge needs --lexicon (or diverge.lexicon in the config)")
            })?;
            let (a, b) = sec.clusters;
            ctx.execute(Stage::Diverge {
                lexicon,
                cluster_a: a,
                cluster_b: b,
                config: sec.config(),
            })?;
            print!(
                "{}",
                ctx.read_to_string(&Workspace::divergence_rel(a, b, "tsv"))?
            );
        }
        Command::SampleDivisive { per_stratum } => {
            let mut per = ctx.cfg.sample_divisive.per_stratum;
            set(&mut per, per_stratum);
            ctx.execute(Stage::SampleDivisive {
                per_stratum: per,
                seed: ctx.seed,
            })?;
            println!(
                "{}",
                ctx.read_to_string(Workspace::DIVISIVE_SAMPLE)?.trim_end()
            );
        }
        Command::Annotate(a) => annotate(&ctx, a)?,
        Command::Models {
            action:
                ModelsAction::Sweep {
                    grid,
                    holdout,
                    max_epochs,
                },
        } => {
            let mut c = ctx.cfg.models.clone();
            if !grid.is_empty() {
                c.grid = grid;
            }
            set(&mut c.holdout_ratio, holdout);
            set(&mut c.max_epochs, max_epochs);
            ctx.execute(Stage::Models(c))?;
            let report: ModelSweepReport = ctx.ws.load(Workspace::SWEEP)?;
            println!("source\tC\trmse\tclosest_cluster\tdensity_percentile\tconverged");
            for e in &report.entries {
                println!(
                    "{}\t{}\t{:.4}\t{}\t{:.3}\t{}",
                    e.label_source,
                    e.c,
                    e.rmse,
                    e.closest_cluster.map_or("-".into(), |c| c.to_string()),
                    e.density_percentile,
                    e.converged
                );
            }
        }
        Command::Map {
            format,
            no_models,
            data_scientists,
            refit,
        } => {
            let mut p = ctx.cfg.map.clone();
            if !format.is_empty() {
                p.formats = format;
            }
            if no_models {
                p.include_models = false;
            }
            if !data_scientists.is_empty() {
                p.data_scientists = data_scientists;
            } else if p.data_scientists.is_empty() {
                p.data_scientists = exported_sessions(&ctx.ws)?;
            }
            if refit {
                p.placement = PlacementMode::Refit;
            }
            ctx.execute(Stage::Map(p))?;
        }
        Command::Replay { manifest } => replay_manifest(&ctx, &manifest)?,
        Command::Serve {
            bind,
            studio,
            refit,
        } => {
            let mut sec = ctx.cfg.serve.clone();
            set(&mut sec.bind, bind);
            if studio.is_some() {
                sec.studio = studio;
            }
            let a = &ctx.cfg.annotate;
            let config = ServerConfig {
                neighbors: a.neighbors,
                placement: if refit {
                    PlacementMode::Refit
                } else {
                    a.placement
                },
                per_stratum: a.per_stratum,
                seed: ctx.seed,
            };
            let state = AppState::load(&ctx.ws, config)?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Failure::data(e.to_string()))?;
            rt.block_on(server::serve(state, &sec.bind, sec.studio.as_deref()))?;
        }
    }
    Ok(())
}

fn apply_topic_opts(p: &mut positionlab::pipeline::TopicsParams, o: TopicOpts) {
    set(&mut p.iterations, o.iterations);
    if o.alpha.is_some() {
        p.alpha = o.alpha;
    }
    set(&mut p.beta, o.beta);
    set(&mut p.min_df, o.min_df);
    set(&mut p.max_df_ratio, o.max_df_ratio);
}

fn topics(ctx: &Ctx, action: TopicsAction) -> Result<(), Failure> {
    let mut p = ctx.cfg.topics.clone();
    match action {
        TopicsAction::Fit { k, opts } => {
            if k.is_some() {
                p.k = k;
            }
            if p.k.is_none() {
                return Err(Failure::usage(
                    "topics fit needs --k (or topics.k in the config); use `topics select` to choose K",
                ));
            }
            apply_topic_opts(&mut p, opts);
            ctx.execute(Stage::Topics(p))?;
        }
        TopicsAction::Select {
            k_min,
            k_max,
            holdout,
            opts,
        } => {
            p.k = None;
            set(&mut p.k_min, k_min);
            set(&mut p.k_max, k_max);
            set(&mut p.holdout_ratio, holdout);
            apply_topic_opts(&mut p, opts);
            ctx.execute(Stage::Topics(p))?;
            let r: KSelectionReport = ctx.ws.load(Workspace::K_SELECTION)?;
            println!("k\ttraining_perplexity\theldout_perplexity");
            for e in &r.evaluations {
                println!(
                    "{}\t{:.2}\t{:.2}",
                    e.k, e.training_perplexity, e.heldout_perplexity
                );
            }
            println!("chosen K = {}", r.chosen_k);
        }
        TopicsAction::Show { n } => {
            let model = ctx.ws.load_topic_model()?;
            for t in 0..model.k {
                println!("{t}\t{}", top_words(&model, t, n)?.join(" "));
            }
        }
    }
    Ok(())
}

fn mine(ctx: &Ctx, a: MineArgs) -> Result<(), Failure> {
    let mut c = ctx.cfg.mine.clone();
    set(&mut c.reduce.method, a.method);
    set(&mut c.reduce.dims, a.dims);
    set(&mut c.reduce.n_neighbors, a.n_neighbors);
    set(&mut c.reduce.min_dist, a.min_dist);
    set(&mut c.reduce.epochs, a.epochs);
    set(&mut c.reduce.metric, a.metric);
    if a.eps.is_some() {
        c.eps = a.eps;
    }
    set(&mut c.min_samples, a.min_samples);
    if a.elbow_k.is_some() {
        c.elbow_k = a.elbow_k;
    }
    set(&mut c.space, a.space);
    if a.no_raw_baseline {
        c.raw_baseline = false;
    }
    ctx.execute(Stage::Mine(c))?;
    let r = ctx.ws.load_positions()?;
    let fmt = |s: Option<f64>| s.map_or("undefined".into(), |s| format!("{s:.3}"));
    println!("eps {:.4}", r.eps);
    println!("clusters {:?}, noise {}", r.cluster_sizes, r.noise);
    println!("silhouette {}", fmt(r.silhouette));
    if let Some(b) = &r.raw_baseline {
        println!(
            "raw baseline: clusters {:?}, silhouette {}",
            b.cluster_sizes,
            fmt(b.silhouette)
        );
    }
    for (name, s) in &r.demographic_silhouettes {
        println!("demographic {name}: silhouette {}", fmt(*s));
    }
    Ok(())
}

fn exported_sessions(ws: &Workspace) -> Result<Vec<String>, Failure> {
    let dir = ws.path("data_scientists");
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".json") {
            out.push(stem.to_string());
        }
    }
    out.sort();
    Ok(out)
}

/// `item_id<TAB>label` lines; blank lines and `#` comments are skipped.
fn read_label_file(path: &Path) -> Result<Vec<(String, i32)>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            Failure::usage(format!(
                "{}:{}: expected `item_id<TAB>label`",
                path.display(),
                n + 1
            ))
        };
        let (id, label) = line.split_once('\t').ok_or_else(bad)?;
        out.push((id.to_string(), label.trim().parse().map_err(|_| bad())?));
    }
    Ok(out)
}

fn annotate(ctx: &Ctx, a: AnnotateArgs) -> Result<(), Failure> {
    let art = Artifacts::load(&ctx.ws)?;
    let cfg = &ctx.cfg.annotate;
    let neighbors = a.neighbors.unwrap_or(cfg.neighbors);
    let mode = if a.refit {
        PlacementMode::Refit
    } else {
        cfg.placement
    };
    let mut session = if art.session_exists(&a.session) {
        let s = art.open(&a.session)?;
        eprintln!(
            "resuming session {} ({}/{} labeled)",
            s.session_id,
            s.labels.len(),
            s.queue.len()
        );
        s
    } else {
        let agent = a
            .agent_id
            .clone()
            .unwrap_or_else(|| default_agent_id(&a.session));
        let per = a.per_stratum.unwrap_or(cfg.per_stratum);
        art.create(&a.session, &agent, per, ctx.seed)?
    };

    match &a.labels {
        Some(path) => {
            let answers: std::collections::HashMap<String, i32> =
                read_label_file(path)?.into_iter().collect();
            while let Some((_, id)) = session.next_item() {
                let Some(&label) = answers.get(id) else {
                    eprintln!("{} has no label for {id}; stopping", path.display());
                    break;
                };
                let id = id.to_string();
                art.submit(&mut session, &id, label)?;
            }
        }
        None => {
            let stdin = std::io::stdin();
            let mut lines = stdin.lock().lines();
            let mut out = std::io::stdout();
            'queue: while let Some(view) = session.next_view(&art.corpus)? {
                println!(
                    "\n[{}/{}] {}",
                    view.position + 1,
                    session.queue.len(),
                    view.item_id
                );
                println!("{}", view.text);
                let scale: Vec<String> =
                    view.scale.iter().map(|(l, n)| format!("{l}={n}")).collect();
                loop {
                    print!("label ({}; q to stop): ", scale.join(", "));
                    out.flush().map_err(|e| Failure::data(e.to_string()))?;
                    let Some(line) = lines.next() else {
                        break 'queue;
                    };
                    let line = line.map_err(|e| Failure::data(e.to_string()))?;
                    let line = line.trim();
                    if line == "q" {
                        break 'queue;
                    }
                    match line.parse::<i32>() {
                        Ok(l) if view.scale.iter().any(|(v, _)| *v == l) => {
                            art.submit(&mut session, &view.item_id, l)?;
                            break;
                        }
                        _ => println!("not a label on this scale"),
                    }
                }
            }
        }
    }

    let placement = place(&art.ctx(), &session.fingerprint, neighbors, mode)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&placement).expect("placement serializes")
    );
    if session.is_complete() {
        ctx.execute(Stage::Annotate {
            session_id: session.session_id.clone(),
        })?;
    } else {
        eprintln!(
            "{} of {} labeled; rerun with --session {} to continue",
            session.labels.len(),
            session.queue.len(),
            session.session_id
        );
    }
    Ok(())
}

fn replay_manifest(ctx: &Ctx, path: &Path) -> Result<(), Failure> {
    let m = RunManifest::load(path)?;
    let scratch_dir = ctx.ws.path(&format!(".replay/{}", m.stage.name()));
    if scratch_dir.exists() {
        std::fs::remove_dir_all(&scratch_dir)
            .map_err(|e| Failure::data(format!("{}: {e}", scratch_dir.display())))?;
    }
    let result = replay(&m, &ctx.ws, &Workspace::new(&scratch_dir));
    let _ = std::fs::remove_dir_all(&scratch_dir);
    let checks = result?;
    let mut bad = 0;
    for c in &checks {
        if c.matches() {
            println!("ok\t{}", c.artifact);
        } else {
            bad += 1;
            println!("MISMATCH\t{}", c.artifact);
        }
    }
    if bad > 0 {
        return Err(Failure::data(format!(
            "{bad} of {} artifacts differ",
            checks.len()
        )));
    }
    println!("{} artifacts reproduced byte-identically", checks.len());
    Ok(())
}
