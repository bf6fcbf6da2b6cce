//! `unea` command-line tool. JSON on stdout, diagnostics on stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use unea::alignment::{alignment_lines, evaluate_reference, SimilarityKind};
use unea::config::TrainConfig;
use unea::embed::{load_features, FeatureSet};
use unea::encoder::{trace_tree, NodeTrace};
use unea::kg::{load_kg_pair, KnowledgeGraphPair, Side};
use unea::sampler::{full_neighborhood_tree, root_rng, sample_tree, FrozenTables};
use unea::synth::{generate, SynthSpec};
use unea::trainer::{checkpoint_similarity, check_tables_fit, load_checkpoint, save_checkpoint, Manifest, Trainer, TREE_STREAM};
use unea::Error;

#[derive(Parser)]
#[command(name = "unea", version, about = "Unsupervised knowledge-graph entity alignment")]
struct Cli {
    /// Worker threads (1 gives a single-threaded run).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Hits@1, Hits@10 and MRR of a checkpoint against the reference pairs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Rank by CSLS instead of raw cosine.
        #[arg(long)]
        csls: bool,
    },
    /// Write the top candidates of every left entity as `id1 id2 score`.
    ExportAlignments {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        top: usize,
        #[arg(long)]
        csls: bool,
    },
    /// Generate a synthetic twin benchmark.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show one entity of a checkpoint, optionally with its sampled tree.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Entity id as written in the ids file.
        #[arg(long)]
        entity: u64,
        /// Graph the entity belongs to.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        side: u8,
        /// Dataset directory; defaults to the one recorded at training time.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Print the sampled tree with attention weights.
        #[arg(long)]
        tree: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, num_args = 2, value_names = ["F1", "F2"])]
    ent_emb: Vec<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["G1", "G2"])]
    rel_emb: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Train(args) => train(args),
        Command::Evaluate { checkpoint, data, csls } => evaluate(&checkpoint, &data, csls),
        Command::ExportAlignments {
            checkpoint,
            data,
            out,
            top,
            csls,
        } => export(&checkpoint, &data, &out, top, csls),
        Command::Synth { spec, out } => synth(spec.as_deref(), &out),
        Command::Inspect {
            checkpoint,
            entity,
            side,
            data,
            tree,
        } => inspect(&checkpoint, entity, side, data.as_deref(), tree),
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn print(v: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{v}");
}

fn train(args: TrainArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::from_kv_text(&read_text(p)?, &p.display().to_string())?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;

    let pair = load_kg_pair(&args.data)?;
    let ids = |side: Side, kind: &str| args.data.join(format!("{kind}_ids_{}", side.number()));
    let features = FeatureSet {
        entities: [
            load_features(&args.ent_emb[0], ids(Side::Left, "ent"))?,
            load_features(&args.ent_emb[1], ids(Side::Right, "ent"))?,
        ],
        relations: [
            load_features(&args.rel_emb[0], ids(Side::Left, "rel"))?,
            load_features(&args.rel_emb[1], ids(Side::Right, "rel"))?,
        ],
    };
    features.validate(&pair)?;
    info!(
        "loaded {} + {} entities, {} reference pairs",
        pair.g1.entity_count(),
        pair.g2.entity_count(),
        pair.reference_pairs().len()
    );

    fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let mut trainer = Trainer::<f32>::new(&pair, &features, cfg.clone())?;
    let mut lines = String::new();
    let result = trainer.run(|record| {
        let line = serde_json::to_string(record).expect("records serialize");
        print(&serde_json::from_str(&line).expect("valid json"));
        lines.push_str(&line);
        lines.push('\n');
    });
    let history = match result {
        Ok(h) => h,
        Err(e @ Error::NonFiniteLoss { .. }) => {
            let dump = args.out.join("nonfinite_state");
            let manifest = Manifest::new(&cfg, &trainer.state, None);
            match save_checkpoint(&dump, &trainer.state.tables, &manifest) {
                Ok(()) => eprintln!("state at failure written to {}", dump.display()),
                Err(d) => eprintln!("could not write failure state: {d}"),
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let history_path = args.out.join("history.jsonl");
    fs::write(&history_path, lines).map_err(|source| Error::Io {
        path: history_path,
        source,
    })?;
    let data_dir = fs::canonicalize(&args.data).unwrap_or(args.data.clone());
    let manifest = Manifest::new(&cfg, &trainer.state, Some(data_dir.display().to_string()));
    save_checkpoint(&args.out, &trainer.state.tables, &manifest)?;
    let metrics = match history.last().and_then(|r| r.metrics) {
        Some(m) => m,
        None => trainer.evaluate()?.0,
    };
    print(&json!({
        "checkpoint": args.out.display().to_string(),
        "epochs": history.len(),
        "hits1": metrics.hits1,
        "hits10": metrics.hits10,
        "mrr": metrics.mrr,
    }));
    Ok(())
}

fn kind(csls: bool) -> SimilarityKind {
    if csls {
        SimilarityKind::Csls
    } else {
        SimilarityKind::Cosine
    }
}

fn evaluate(checkpoint: &Path, data: &Path, csls: bool) -> CmdResult {
    let (tables, manifest) = load_checkpoint(checkpoint)?;
    let pair = load_kg_pair(data)?;
    let s = checkpoint_similarity(&tables, &manifest, &pair, kind(csls))?;
    let m = evaluate_reference(&s, &pair);
    print(&json!({
        "similarity": if csls { "csls" } else { "cosine" },
        "pairs": pair.reference_pairs().len(),
        "hits1": m.hits1,
        "hits10": m.hits10,
        "mrr": m.mrr,
    }));
    Ok(())
}

fn export(checkpoint: &Path, data: &Path, out: &Path, top: usize, csls: bool) -> CmdResult {
    if top == 0 {
        return Err(Failure::Usage("--top must be at least 1".into()));
    }
    let (tables, manifest) = load_checkpoint(checkpoint)?;
    let pair = load_kg_pair(data)?;
    let s = checkpoint_similarity(&tables, &manifest, &pair, kind(csls))?;
    let lines = alignment_lines(&s, &pair, top);
    let mut text = String::new();
    for (a, b, score) in &lines {
        text.push_str(&format!("{a}\t{b}\t{score:.6}\n"));
    }
    fs::write(out, text).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    print(&json!({ "out": out.display().to_string(), "lines": lines.len() }));
    Ok(())
}

fn synth(spec: Option<&Path>, out: &Path) -> CmdResult {
    let spec = match spec {
        Some(p) => SynthSpec::from_kv_text(&read_text(p)?, &p.display().to_string())?,
        None => SynthSpec::default(),
    };
    let ds = generate(&spec)?;
    ds.write(out)?;
    print(&json!({
        "out": out.display().to_string(),
        "entities": [ds.pair.g1.entity_count(), ds.pair.g2.entity_count()],
        "triples": [ds.pair.g1.triples().len(), ds.pair.g2.triples().len()],
        "reference_pairs": ds.ground_truth.len(),
    }));
    Ok(())
}

fn trace_json(t: &NodeTrace<f32>, pair: &KnowledgeGraphPair, side: Side) -> Value {
    let g = pair.graph(side);
    let relation = t.relation_from_parent.map(|k| {
        let r = g.relation_count();
        let (base, inverse) = if k >= r { (k - r, true) } else { (k, false) };
        json!({ "id": g.relation_ids().file_id(base), "inverse": inverse })
    });
    json!({
        "entity": g.entity_ids().file_id(t.entity),
        "name": g.entity_ids().name(t.entity),
        "relation": relation,
        "weight": t.weight,
        "children": t.children.iter().map(|c| trace_json(c, pair, side)).collect::<Vec<_>>(),
    })
}

fn inspect(checkpoint: &Path, entity: u64, side: u8, data: Option<&Path>, tree: bool) -> CmdResult {
    let (tables, manifest) = load_checkpoint(checkpoint)?;
    let data = match (data, &manifest.data_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => return Err(Failure::Usage("checkpoint records no dataset; pass --data".into())),
    };
    let pair = load_kg_pair(&data)?;
    check_tables_fit(&tables, &pair)?;
    let side = if side == 1 { Side::Left } else { Side::Right };
    let g = pair.graph(side);
    let Some(dense) = g.entity_ids().dense(entity) else {
        return Err(Failure::Usage(format!("entity {entity} is not in graph {}", side.number())));
    };
    let cfg = &manifest.config;
    let frozen = FrozenTables::new(&tables.frozen_entities[side.index()], &tables.frozen_relations[side.index()])?;
    let rooted = if cfg.ablation.plain_gnn_encoder {
        full_neighborhood_tree(g, side, dense, &frozen)?
    } else {
        let mut rng = root_rng(cfg.seed, TREE_STREAM, side, dense);
        sample_tree(g, side, dense, &frozen, &cfg.sampler(), &mut rng)?
    };
    let trace = trace_tree(&rooted, &tables.params, cfg.leaky_slope as f32)?;
    let mut out = json!({
        "entity": entity,
        "side": side.number(),
        "name": g.entity_ids().name(dense),
        "degree": g.degree(dense)?,
        "tree_nodes": rooted.root.node_count(),
        "tree_height": rooted.root.height(),
    });
    if tree {
        out["tree"] = trace_json(&trace, &pair, side);
    }
    print(&out);
    Ok(())
}
