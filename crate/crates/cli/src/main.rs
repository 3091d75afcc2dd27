//! Command-line driver: corpus generation, feature and centrality dumps,
//! pre-training, fine-tuning, boundary sweeps, evaluation, and checkpoint
//! inspection.
//!
//! Exit codes: 0 success, 1 user error (bad flags, config, or input files),
//! 2 internal error.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graphpre::adapt::{
    aggregate_sweep, boundary_sweep, evaluate, finetune, load_with_boundary, make_graph_task,
    make_node_task, make_link_task, write_sweep_csv, InitMode, SweepRow, TaskKind,
};
use graphpre::centrality::{centrality_targets, write_centrality_csv};
use graphpre::checkpoint::Checkpoint;
use graphpre::config::RunConfig;
use graphpre::error::{Error, Result};
use graphpre::feat::{assemble_features, write_features_csv};
use graphpre::graph::read_graph;
use graphpre::metrics::MetricsWriter;
use graphpre::model::ModelConfig;
use graphpre::pretrain::{pretrain_run, PretrainConfig};
use graphpre::synth::{generate_corpus, load_corpus, ParamRanges};

#[derive(Parser)]
#[command(name = "graphpre", version, about = "Structure-only GNN pre-training toolkit")]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Inline config override, repeatable: `--set pretrain.lr=0.001`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Force single-threaded execution with fixed reduction orders.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker thread count (also honored from GRAPHPRE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic graph corpus with sidecar targets and a manifest.
    GenCorpus {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cycle the four statistical regimes across indices.
        #[arg(long)]
        force_regimes: bool,
    },
    /// Dump the four local node features (raw and normalized) as CSV.
    Features {
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the four centrality scores as CSV.
    Centrality {
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train on a generated corpus and keep the best checkpoint.
    Pretrain {},
    /// Fine-tune a pre-trained checkpoint on a synthetic downstream task.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        boundary: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        task_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune across fix-tune boundaries and init modes; emit a CSV table.
    SweepBoundary {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        /// Comma-separated boundary list, e.g. `0,1,2,3,4`.
        #[arg(long)]
        boundaries: Option<String>,
        /// Number of seeds per cell.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a fine-tuned checkpoint on its regenerated task.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print checkpoint metadata: config echo, parameter names and shapes.
    InspectCheckpoint { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

/// IO failures on user-supplied paths are user errors, not internal ones.
fn user_io<T>(what: &str, path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::config(format!("cannot read {what} `{}`: {io}", path.display())),
        other => other,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => user_io("config", path, RunConfig::load(path))?,
        None => RunConfig::new(),
    };
    for pair in &cli.sets {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if cli.deterministic {
        cfg.set("runtime.deterministic", "true")?;
    }
    if let Some(t) = cli.threads {
        cfg.set("runtime.threads", &t.to_string())?;
    }
    init_threads(&cfg);

    match cli.cmd {
        Cmd::GenCorpus { count, seed, out, force_regimes } => {
            if let Some(c) = count {
                cfg.set("gen.count", &c.to_string())?;
            }
            if let Some(s) = seed {
                cfg.set("gen.seed", &s.to_string())?;
            }
            if let Some(o) = out {
                cfg.set("gen.out", o.to_str().unwrap_or_default())?;
            }
            if force_regimes {
                cfg.set("gen.force_regimes", "true")?;
            }
            cmd_gen_corpus(&cfg)
        }
        Cmd::Features { graph, out } => cmd_features(&graph, out.as_deref()),
        Cmd::Centrality { graph, out } => cmd_centrality(&graph, out.as_deref()),
        Cmd::Pretrain {} => cmd_pretrain(&cfg),
        Cmd::Finetune { checkpoint, task, boundary, epochs, seed, task_seed, out } => {
            if let Some(c) = checkpoint {
                cfg.set("adapt.checkpoint", c.to_str().unwrap_or_default())?;
            }
            if let Some(t) = task {
                cfg.set("adapt.task", &t)?;
            }
            if let Some(b) = boundary {
                cfg.set("adapt.boundary", &b.to_string())?;
            }
            if let Some(e) = epochs {
                cfg.set("adapt.epochs", &e.to_string())?;
            }
            if let Some(s) = seed {
                cfg.set("adapt.seed", &s.to_string())?;
            }
            if let Some(s) = task_seed {
                cfg.set("adapt.task_seed", &s.to_string())?;
            }
            if let Some(o) = out {
                cfg.set("adapt.out", o.to_str().unwrap_or_default())?;
            }
            cmd_finetune(&cfg)
        }
        Cmd::SweepBoundary { checkpoint, task, boundaries, seeds, epochs, out } => {
            if let Some(c) = checkpoint {
                cfg.set("adapt.checkpoint", c.to_str().unwrap_or_default())?;
            }
            if let Some(t) = task {
                cfg.set("adapt.task", &t)?;
            }
            if let Some(b) = boundaries {
                cfg.set("adapt.boundaries", &b)?;
            }
            if let Some(s) = seeds {
                cfg.set("adapt.sweep_seeds", &s.to_string())?;
            }
            if let Some(e) = epochs {
                cfg.set("adapt.epochs", &e.to_string())?;
            }
            if let Some(o) = out {
                cfg.set("adapt.out", o.to_str().unwrap_or_default())?;
            }
            cmd_sweep(&cfg)
        }
        Cmd::Eval { checkpoint } => cmd_eval(&checkpoint),
        Cmd::InspectCheckpoint { path } => cmd_inspect(&path),
    }
}

fn init_threads(cfg: &RunConfig) {
    let threads = if cfg.get_bool("runtime.deterministic", false) {
        1
    } else if let Some(t) = cfg.get("runtime.threads") {
        t.parse().unwrap_or(1)
    } else if let Ok(t) = std::env::var("GRAPHPRE_THREADS") {
        t.parse().unwrap_or(1)
    } else {
        0 // rayon default
    };
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn cmd_gen_corpus(cfg: &RunConfig) -> Result<()> {
    let count = cfg.get_usize("gen.count", 1024);
    let seed = cfg.get_u64("gen.seed", 0);
    let out = PathBuf::from(cfg.require("gen.out")?);
    let force = cfg.get_bool("gen.force_regimes", false);
    let ranges = cfg.param_ranges()?;
    let manifest = generate_corpus(count, &ranges, seed, &out, force)?;
    cfg.write_echo(&out.join("config_echo.cfg"))?;
    println!(
        "wrote {} graphs ({} train, {} val) to {}",
        manifest.entries.len(),
        manifest.train().count(),
        manifest.val().count(),
        out.display()
    );
    Ok(())
}

fn load_graph_file(path: &Path) -> Result<graphpre::graph::Graph> {
    let file = user_io("graph", path, fs::File::open(path).map_err(Error::from))?;
    let (g, _) = read_graph(BufReader::new(file))?;
    Ok(g)
}

fn write_or_print(out: Option<&Path>, content: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(content)?;
        }
    }
    Ok(())
}

fn cmd_features(graph: &Path, out: Option<&Path>) -> Result<()> {
    let g = load_graph_file(graph)?;
    let feats = assemble_features(&g);
    let mut buf = Vec::new();
    write_features_csv(&feats, &mut buf)?;
    write_or_print(out, &buf)
}

fn cmd_centrality(graph: &Path, out: Option<&Path>) -> Result<()> {
    let g = load_graph_file(graph)?;
    let scores = centrality_targets(&g)?;
    let mut buf = Vec::new();
    write_centrality_csv(&scores, &mut buf)?;
    write_or_print(out, &buf)
}

fn pretrain_config(cfg: &RunConfig) -> PretrainConfig {
    let d = PretrainConfig::default();
    PretrainConfig {
        mask_fraction: cfg.get_f64("pretrain.mask_fraction", d.mask_fraction),
        graphs_per_step: cfg.get_usize("pretrain.graphs_per_step", d.graphs_per_step),
        n_pos: cfg.get_usize("pretrain.n_pos", d.n_pos),
        n_neg: cfg.get_usize("pretrain.n_neg", d.n_neg),
        lr: cfg.get_f64("pretrain.lr", d.lr),
        max_steps: cfg.get_usize("pretrain.max_steps", d.max_steps),
        val_every: cfg.get_usize("pretrain.val_every", d.val_every),
        seed: cfg.get_u64("pretrain.seed", d.seed),
        cluster_support_fraction: cfg
            .get_f64("pretrain.cluster_support_fraction", d.cluster_support_fraction),
    }
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let manifest = PathBuf::from(cfg.require("pretrain.corpus")?);
    let out = PathBuf::from(cfg.require("pretrain.out")?);
    fs::create_dir_all(&out)?;
    let model_cfg = cfg.model_config()?;
    let pcfg = pretrain_config(cfg);
    pcfg.validate()?;
    let (train, val) = user_io("corpus manifest", &manifest, load_corpus(&manifest))?;
    cfg.write_echo(&out.join("config_echo.cfg"))?;

    let mut writer = MetricsWriter::create(&out.join("metrics.jsonl"))?;
    let outcome = pretrain_run(&train, &val, &model_cfg, &pcfg, |record| writer.append(record))?;

    let echo = checkpoint_echo(&model_cfg, cfg, &["pretrain."]);
    let best = Checkpoint::new(echo.clone(), outcome.best_params, None);
    best.write(&out.join("best.ckpt"))?;
    Checkpoint::new(echo, outcome.final_params, None).write(&out.join("final.ckpt"))?;
    println!(
        "pretrained {} steps; best validation total {:.6}; checkpoint checksum {:08x}",
        outcome.records.len(),
        outcome.best_val_total,
        best.checksum()
    );
    Ok(())
}

/// Model config plus selected run keys, embedded in checkpoints.
fn checkpoint_echo(
    model_cfg: &ModelConfig,
    cfg: &RunConfig,
    prefixes: &[&str],
) -> BTreeMap<String, String> {
    let mut echo = model_cfg.to_map();
    for (k, v) in cfg.map() {
        if prefixes.iter().any(|p| k.starts_with(p)) {
            echo.insert(k.clone(), v.clone());
        }
    }
    echo
}

fn adapt_ranges(cfg: &RunConfig, kind: TaskKind) -> Result<ParamRanges> {
    let mut ranges = cfg.param_ranges()?;
    let (dn_lo, dn_hi) = match kind {
        TaskKind::Graph => (80, 160),
        _ => (100, 200),
    };
    ranges.n = (cfg.get_usize("adapt.n_min", dn_lo), cfg.get_usize("adapt.n_max", dn_hi));
    ranges.validate()?;
    Ok(ranges)
}

fn make_task(cfg: &RunConfig, kind: TaskKind, task_seed: u64) -> Result<graphpre::adapt::DownstreamTask> {
    let ranges = adapt_ranges(cfg, kind)?;
    match kind {
        TaskKind::Node => make_node_task(&ranges, task_seed),
        TaskKind::Link => make_link_task(&ranges, task_seed),
        TaskKind::Graph => make_graph_task(&ranges, 50, task_seed),
    }
}

fn cmd_finetune(cfg: &RunConfig) -> Result<()> {
    let ckpt_path = PathBuf::from(cfg.require("adapt.checkpoint")?);
    let out = PathBuf::from(cfg.require("adapt.out")?);
    fs::create_dir_all(&out)?;
    let kind = TaskKind::parse(cfg.get("adapt.task").unwrap_or("node"))?;
    let boundary = cfg.get_usize("adapt.boundary", 1);
    let epochs = cfg.get_usize("adapt.epochs", 100);
    let lr = cfg.get_f64("adapt.lr", 1e-2);
    let seed = cfg.get_u64("adapt.seed", 0);
    let task_seed = cfg.get_u64("adapt.task_seed", 0);

    let ckpt = user_io("checkpoint", &ckpt_path, Checkpoint::read(&ckpt_path))?;
    let model_cfg = ModelConfig::from_map(&ckpt.config)?;
    let task = make_task(cfg, kind, task_seed)?;
    let mut model = load_with_boundary(
        &ckpt.params,
        &model_cfg,
        None,
        boundary,
        InitMode::Pretrained,
        &task,
        seed,
    )?;
    let started = std::time::Instant::now();
    let metrics = finetune(&mut model, &task, epochs, lr)?;
    let wall = started.elapsed().as_secs_f64();

    cfg.write_echo(&out.join("config_echo.cfg"))?;
    let mut echo = checkpoint_echo(&model_cfg, cfg, &["adapt."]);
    echo.insert("adapt.task".to_string(), kind.label().to_string());
    echo.insert("adapt.boundary".to_string(), boundary.to_string());
    echo.insert("adapt.task_seed".to_string(), task_seed.to_string());
    let ranges = adapt_ranges(cfg, kind)?;
    echo.insert("adapt.n_min".to_string(), ranges.n.0.to_string());
    echo.insert("adapt.n_max".to_string(), ranges.n.1.to_string());
    Checkpoint::new(echo, model.params.clone(), None).write(&out.join("finetuned.ckpt"))?;

    let row = SweepRow {
        task: kind.label().to_string(),
        boundary,
        init_mode: InitMode::Pretrained.label().to_string(),
        seed,
        micro_f1: metrics.test_micro_f1,
        epochs,
        wall_time_s: wall,
    };
    let mut csv = Vec::new();
    write_sweep_csv(std::slice::from_ref(&row), &mut csv)?;
    fs::write(out.join("result.csv"), &csv)?;
    println!("test micro-F1 {:.4} (task {}, boundary {boundary})", metrics.test_micro_f1, kind.label());
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let ckpt_path = PathBuf::from(cfg.require("adapt.checkpoint")?);
    let out = PathBuf::from(cfg.require("adapt.out")?);
    fs::create_dir_all(&out)?;
    let kind = TaskKind::parse(cfg.get("adapt.task").unwrap_or("node"))?;
    let epochs = cfg.get_usize("adapt.epochs", 100);
    let lr = cfg.get_f64("adapt.lr", 1e-2);
    let task_seed = cfg.get_u64("adapt.task_seed", 0);
    let seed_count = cfg.get_usize("adapt.sweep_seeds", 5);

    let ckpt = user_io("checkpoint", &ckpt_path, Checkpoint::read(&ckpt_path))?;
    let model_cfg = ModelConfig::from_map(&ckpt.config)?;
    let boundaries: Vec<usize> = match cfg.get("adapt.boundaries") {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad boundary `{s}` in adapt.boundaries")))
            })
            .collect::<Result<_>>()?,
        None => (0..=model_cfg.layers + 1).collect(),
    };
    let seeds: Vec<u64> = (0..seed_count as u64).collect();
    let task = make_task(cfg, kind, task_seed)?;

    let rows = boundary_sweep(&ckpt.params, &model_cfg, &task, &boundaries, &seeds, epochs, lr)?;
    cfg.write_echo(&out.join("config_echo.cfg"))?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    fs::write(out.join("sweep.csv"), &csv)?;
    for cell in aggregate_sweep(&rows) {
        println!(
            "boundary {} {:>10}: micro-F1 {:.4} +/- {:.4} over {} seeds",
            cell.boundary,
            cell.init_mode.label(),
            cell.mean,
            cell.std,
            cell.count
        );
    }
    Ok(())
}

fn cmd_eval(ckpt_path: &Path) -> Result<()> {
    let ckpt = user_io("checkpoint", ckpt_path, Checkpoint::read(ckpt_path))?;
    let model_cfg = ModelConfig::from_map(&ckpt.config)?;
    let get = |k: &str| {
        ckpt.config.get(k).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint lacks `{k}`; was it written by finetune?"))
        })
    };
    let kind = TaskKind::parse(get("adapt.task")?)?;
    let task_seed: u64 =
        get("adapt.task_seed")?.parse().map_err(|_| Error::Checkpoint("bad adapt.task_seed".into()))?;
    let mut cfg = RunConfig::new();
    for key in ["adapt.n_min", "adapt.n_max"] {
        if let Some(v) = ckpt.config.get(key) {
            cfg.set(key, v)?;
        }
    }
    let task = make_task(&cfg, kind, task_seed)?;
    let boundary: usize = get("adapt.boundary")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad adapt.boundary".into()))?;
    let model = graphpre::adapt::AdaptedModel {
        params: ckpt.params,
        model_cfg,
        frozen: Default::default(),
        boundary,
        init: InitMode::Pretrained,
        task_kind: kind,
        num_classes: task.num_classes,
    };
    let f1 = evaluate(&model, &task)?;
    println!("test micro-F1 {f1:.4} (task {}, boundary {boundary})", kind.label());
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = user_io("checkpoint", path, fs::read(path).map_err(Error::from))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    println!(
        "checkpoint {} ({} bytes, crc32 {:08x})",
        path.display(),
        bytes.len(),
        graphpre::checkpoint::stored_checksum(&bytes)?
    );
    println!("config:");
    for (k, v) in &ckpt.config {
        println!("  {k} = {v}");
    }
    println!("parameters: {}", ckpt.params.len());
    for (name, t) in ckpt.params.map() {
        println!("  {name} {:?}", t.shape());
    }
    println!("optimizer state: {}", if ckpt.opt.is_some() { "present" } else { "absent" });
    Ok(())
}
