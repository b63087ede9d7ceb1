use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use rmgib::attacks::{run_mia, MiaSetting};
use rmgib::graph::{load_graph, split_nodes, write_graph, Splits};
use rmgib::harness::{
    emit_report, prepare_graph, run_experiment, run_grid, runs_dir, scaling_probe, train_target, DatasetSpec,
    ExperimentConfig, ModelKind, PerturbationKind, RunRecord,
};
use rmgib::predictor::{accuracy, posterior_dump, read_posteriors, write_posteriors};
use rmgib::rng::{derive_seed, stream};
use rmgib::tensor::Matrix;
use rmgib::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "rmgib", version, about = "Graph information bottleneck training and privacy attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a nodes.tsv / edges.tsv pair.
    Ingest {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
    },
    /// Train the configured model and write checkpoints and posteriors.
    Train(ConfigArgs),
    /// Attack the posteriors of a finished train or experiment run.
    Attack {
        /// Directory holding seed_<s> subdirectories.
        #[arg(long)]
        run_dir: PathBuf,
        /// Attack settings; defaults to the config's list, or mia_f.
        #[arg(long = "setting")]
        settings: Vec<MiaSetting>,
    },
    /// Write a perturbed copy of the dataset.
    Perturb {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for nodes.tsv, edges.tsv and flips.json.
        #[arg(long)]
        to: PathBuf,
    },
    /// Full pipeline over every seed, persisted as a run record.
    Experiment(ConfigArgs),
    /// Cartesian grid over config keys with validation-based selection.
    Grid {
        #[command(flatten)]
        config: ConfigArgs,
        /// `key=v1,v2,...`; values parse as JSON.
        #[arg(long = "grid", required = true)]
        axes: Vec<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Seconds per epoch on synthetic graphs of growing size.
    Scaling {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [500, 1000, 2000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Summary table, trends and plots from run records.
    Report {
        /// Run record files, or directories searched for run_record.json.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        to: PathBuf,
    },
}

/// Experiment configuration: a JSON file plus per-key overrides.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable; replaces the configured seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory; defaults to a directory under the runs root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    nodes: Option<PathBuf>,
    #[arg(long, requires = "nodes")]
    edges: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    label_rate: Option<f64>,
    #[arg(long)]
    val_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    code_dim: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    prior_rate: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pseudo_fraction: Option<f64>,
    #[arg(long)]
    perturbation: Option<String>,
    #[arg(long)]
    perturbation_rate: Option<f64>,
    #[arg(long)]
    target_fraction: Option<f64>,
    /// Repeatable attack setting, `mia_f` or `mia_s`.
    #[arg(long)]
    mia: Vec<MiaSetting>,
    #[arg(long)]
    grid_mode: bool,
    /// Any other key as `dotted.key=json`.
    #[arg(long = "set")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let (Some(n), Some(e)) = (&self.nodes, &self.edges) {
            cfg.dataset = DatasetSpec::Files {
                nodes: n.clone(),
                edges: e.clone(),
            };
        }
        let mut overrides: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        };
        put("name", self.name.as_ref().map(|n| json!(n)));
        put("model", self.model.map(|m| json!(m.name())));
        put("label_rate", self.label_rate.map(|v| json!(v)));
        put("val_count", self.val_count.map(|v| json!(v)));
        put("test_count", self.test_count.map(|v| json!(v)));
        put("hidden_dim", self.hidden_dim.map(|v| json!(v)));
        put("layers", self.layers.map(|v| json!(v)));
        put("code_dim", self.code_dim.map(|v| json!(v)));
        put("beta", self.beta.map(|v| json!(v)));
        put("gamma", self.gamma.map(|v| json!(v)));
        put("prior_rate", self.prior_rate.map(|v| json!(v)));
        put("temperature", self.temperature.map(|v| json!(v)));
        put("epochs", self.epochs.map(|v| json!(v)));
        put("pseudo_fraction", self.pseudo_fraction.map(|v| json!(v)));
        put("perturbation.kind", self.perturbation.as_ref().map(|v| json!(v)));
        put("perturbation.rate", self.perturbation_rate.map(|v| json!(v)));
        put("perturbation.target_fraction", self.target_fraction.map(|v| json!(v)));
        if !self.mia.is_empty() {
            put("mia", Some(json!(self.mia.iter().map(|m| m.name()).collect::<Vec<_>>())));
        }
        if !self.seeds.is_empty() {
            put("seeds", Some(json!(self.seeds)));
        }
        if self.grid_mode {
            put("grid_mode", Some(json!(true)));
        }
        for s in &self.sets {
            let (k, v) = parse_assignment(s)?;
            overrides.push((k.to_string(), parse_value(v)));
        }
        for (k, v) in overrides {
            cfg = cfg.with_value(&k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| runs_dir().join(cfg.run_name()))
    }
}

fn parse_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::validation(format!("expected key=value, got {s}")))
}

/// JSON when it parses, otherwise a string.
fn parse_value(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

fn parse_axis(s: &str) -> Result<(String, Vec<Value>)> {
    let (k, vs) = parse_assignment(s)?;
    Ok((k.to_string(), vs.split(',').map(parse_value).collect()))
}

fn seed_dirs(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))? {
        let path = entry.map_err(|e| Error::io(run_dir, e))?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse().ok());
        if let (Some(seed), true) = (seed, path.is_dir()) {
            out.push((seed, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::validation(format!("no seed_<s> directories in {}", run_dir.display())));
    }
    Ok(out)
}

fn find_records(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack: Vec<PathBuf> = inputs.to_vec();
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            for entry in std::fs::read_dir(&p).map_err(|e| Error::io(&p, e))? {
                stack.push(entry.map_err(|e| Error::io(&p, e))?.path());
            }
        } else if p.file_name().is_some_and(|n| n == "run_record.json") || inputs.contains(&p) {
            found.push(p);
        }
    }
    found.sort();
    Ok(found)
}

fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let out = args.out_dir(&cfg);
    let clean = cfg.dataset.load()?;
    for &seed in &cfg.seeds {
        let g = prepare_graph(&clean, &cfg, seed)?.graph;
        let splits = split_nodes(&g, cfg.label_rate, cfg.val_count, cfg.test_count, seed)?;
        let dir = out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let target = train_target(&g, &splits, &cfg, seed, Some(&dir))?;
        target.write_artifacts(&dir, &cfg)?;
        write_posteriors(&dir.join("posteriors.jsonl"), &posterior_dump(target.probs(), &splits))?;
        let sp = dir.join("splits.json");
        std::fs::write(&sp, serde_json::to_string(&splits)?).map_err(|e| Error::io(&sp, e))?;
        println!(
            "seed {seed}: test accuracy {:.4}, validation accuracy {:.4}",
            accuracy(target.probs(), &splits.test, g.labels()),
            accuracy(target.probs(), &splits.val, g.labels())
        );
    }
    println!("{}", out.display());
    Ok(())
}

fn attack(run_dir: &Path, settings: &[MiaSetting]) -> Result<()> {
    for (seed, dir) in seed_dirs(run_dir)? {
        let cfg = ExperimentConfig::load(&dir.join("config.json"))?;
        let g = prepare_graph(&cfg.dataset.load()?, &cfg, seed)?.graph;
        let sp = dir.join("splits.json");
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let splits: Splits = serde_json::from_str(&text)?;
        let mut rows = vec![Vec::new(); g.node_count()];
        for r in read_posteriors(&dir.join("posteriors.jsonl"))? {
            g.check_node(r.node_id)?;
            rows[r.node_id] = r.probs;
        }
        let probs = Matrix::from_rows(&rows)?;
        let chosen: Vec<MiaSetting> = match (settings.is_empty(), cfg.mia.is_empty()) {
            (false, _) => settings.to_vec(),
            (true, false) => cfg.mia.clone(),
            (true, true) => vec![MiaSetting::Full],
        };
        for setting in chosen {
            let report = run_mia(
                &g,
                &probs,
                &splits,
                setting,
                &cfg.params,
                &cfg.attack,
                derive_seed(seed, &[stream::ATTACK]),
            )?;
            report.save(&dir.join(format!("attack_report_{}.json", setting.name())))?;
            println!(
                "seed {seed} {}: roc {:.4} ({} members, {} non-members)",
                setting.name(),
                report.roc_auc,
                report.n_members,
                report.n_nonmembers
            );
        }
    }
    Ok(())
}

fn perturb(args: &ConfigArgs, to: &Path) -> Result<()> {
    let cfg = args.resolve()?;
    let g = cfg.dataset.load()?;
    if cfg.perturbation.kind == PerturbationKind::None {
        return Err(Error::validation("set --perturbation random, heterophilic or targeted"));
    }
    let p = prepare_graph(&g, &cfg, cfg.seeds[0])?;
    write_graph(&p.graph, to)?;
    let fp = to.join("flips.json");
    let flips = json!({
        "kind": cfg.perturbation.kind,
        "rate": cfg.perturbation.rate,
        "targets": p.targets,
        "added": p.added,
        "removed": p.removed,
        "fallback_flips": p.fallback_flips,
        "flips": p.flips,
    });
    std::fs::write(&fp, serde_json::to_string_pretty(&flips)?).map_err(|e| Error::io(&fp, e))?;
    println!(
        "{} flips ({} added, {} removed), {} -> {} edges",
        p.flips.len(),
        p.added,
        p.removed,
        g.edge_count(),
        p.graph.edge_count()
    );
    Ok(())
}

fn print_record(r: &RunRecord) {
    let show = |s: Option<rmgib::harness::Stat>| s.map_or_else(|| "-".to_string(), |s| s.display());
    println!(
        "{} on {} nodes: accuracy {}  mia_f {}  mia_s {}",
        r.config.model.name(),
        r.node_count,
        r.accuracy.display(),
        show(r.mia_f_roc),
        show(r.mia_s_roc)
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { nodes, edges } => {
            let (g, rep) = load_graph(&nodes, &edges)?;
            println!(
                "{} nodes, {} edges, {} classes, {} features; dropped {} duplicate edges and {} self-loops",
                rep.nodes,
                rep.edges,
                g.class_count(),
                g.feature_dim(),
                rep.duplicate_edges,
                rep.self_loops
            );
            println!("content hash {}", g.content_hash());
        }
        Command::Train(args) => train(&args)?,
        Command::Attack { run_dir, settings } => attack(&run_dir, &settings)?,
        Command::Perturb { config, to } => perturb(&config, &to)?,
        Command::Experiment(args) => {
            let cfg = args.resolve()?;
            let out = args.out_dir(&cfg);
            let r = run_experiment(&cfg, Some(&out))?;
            print_record(&r);
            println!("{}", out.join("run_record.json").display());
        }
        Command::Grid { config, axes, workers } => {
            let cfg = config.resolve()?;
            let grid: BTreeMap<String, Vec<Value>> = axes.iter().map(|a| parse_axis(a)).collect::<Result<_>>()?;
            let out = config.out_dir(&cfg);
            let outcome = run_grid(&cfg, &grid, workers, Some(&out))?;
            for r in &outcome.records {
                print_record(r);
            }
            let best = &outcome.records[outcome.best];
            println!("selected {} (validation accuracy {})", best.config.run_name(), best.val_accuracy.display());
            let path = out.join("grid.json");
            std::fs::write(&path, serde_json::to_string_pretty(&outcome)?).map_err(|e| Error::io(&path, e))?;
        }
        Command::Scaling {
            config,
            sizes,
            repeats,
        } => {
            let cfg = config.resolve()?;
            let rows = scaling_probe(&sizes, &cfg, repeats)?;
            println!("nodes,edges,edges_per_node,seconds_per_epoch");
            for r in &rows {
                println!("{},{},{:.3},{:.6}", r.nodes, r.edges, r.edges_per_node, r.seconds_per_epoch);
            }
            if let Some(out) = &config.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let path = out.join("scaling.json");
                std::fs::write(&path, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Report { inputs, to } => {
            let paths = find_records(&inputs)?;
            let records: Vec<RunRecord> = paths.iter().map(|p| RunRecord::load(p)).collect::<Result<_>>()?;
            info!("{} run records", records.len());
            for f in emit_report(&records, &to)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
