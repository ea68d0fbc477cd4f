//! Command-line driver: corpus synthesis, exact labels, GS pre-training, the
//! three training regimes, evaluation, embeddings and explanations.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gedan_core::assignment::{pretrain_gs, GsParams, FRAME_SIZES};
use gedan_core::eval::{embed, evaluate_downstream, grid_search_costs, rank_metrics, select_prototypes};
use gedan_core::explain::{export_heatmap, node_importance, normalize_importance, HeatmapFormat};
use gedan_core::gedan::{GedanModel, Mode};
use gedan_core::ged::{gen_pair_labels, CostConfigId, LabelRow, LabelTable};
use gedan_core::graph::{label_count_corpus, parse_graphs, synth_corpus, write_graphs, Graph, GraphFormat};
use gedan_core::training::{
    train_cost_learning, train_supervised_ged, train_unsupervised, write_history, EpochRecord,
};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use config::{Overrides, RunConfig};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GEDAN_OUT";

#[derive(Debug, Parser)]
#[command(name = "gedan", version, about = "Learnable-cost graph edit distance")]
pub struct Cli {
    /// TOML config file; unknown keys are errors.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_parser = parse_frame_size)]
    pub frame_size: Option<usize>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub cost_conf: Option<u8>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_frame_size(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if FRAME_SIZES.contains(&v) {
        Ok(v)
    } else {
        Err(format!("frame size must be one of {FRAME_SIZES:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Unsupervised,
    Gedan,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unsupervised => Mode::Unsupervised,
            ModeArg::Gedan => Mode::Gedan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Dot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (graphs.jsonl).
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        min_nodes: Option<usize>,
        #[arg(long)]
        max_nodes: Option<usize>,
        #[arg(long)]
        edge_prob: Option<f64>,
        #[arg(long)]
        labels: Option<usize>,
        /// Set each graph's target to its count of nodes with this label.
        #[arg(long)]
        count_label: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact GED for every pair `i <= j` (labels.csv).
    Labels {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        conf: Option<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train the Gumbel-Sinkhorn module (gs.json).
    GsPretrain {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unsupervised encoder training (model.json).
    TrainUnsup {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        gs: Option<PathBuf>,
        /// Labelled pairs for validation and best-epoch selection.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Validation pairs drawn from the label table.
        #[arg(long, default_value_t = 1000)]
        val_pairs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Supervised regression of exact GED labels.
    TrainGed {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        gs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edit-cost learning from graph targets (model.json, head.json).
    TrainCosts {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        gs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model against exact labels and/or downstream targets.
    Eval {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Label table to compare scores with (rmse, tau, rho).
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Gedan)]
        mode: ModeArg,
        /// KNN on dissimilarity embeddings with cross-validation.
        #[arg(long)]
        downstream: bool,
        /// Fixed-cost grid baseline over 16 configurations.
        #[arg(long)]
        grid: bool,
        /// Train the encoder unsupervised for every grid configuration.
        #[arg(long)]
        grid_train: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dissimilarity embeddings against random prototypes (embeddings.csv).
    Embed {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Gedan)]
        mode: ModeArg,
        #[arg(long)]
        prototypes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Node-importance heatmap of one graph against the rest of the corpus.
    Explain {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        query: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Gedan)]
        mode: ModeArg,
        /// Defaults to the output file extension, then DOT.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Labels { .. } => "labels",
            Command::GsPretrain { .. } => "gs-pretrain",
            Command::TrainUnsup { .. } => "train-unsup",
            Command::TrainGed { .. } => "train-ged",
            Command::TrainCosts { .. } => "train-costs",
            Command::Eval { .. } => "eval",
            Command::Embed { .. } => "embed",
            Command::Explain { .. } => "explain",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    workers: usize,
    versions: BTreeMap<&'static str, &'static str>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Files read and written by one command.
#[derive(Default)]
struct Artifacts {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Artifacts {
    fn input(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn output(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("gedan-out"), PathBuf::from)
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(default_out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn or_default(p: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| dir.join(name))
}

fn read_graphs(path: &Path) -> Result<Vec<Graph>> {
    parse_graphs(path, GraphFormat::Jsonl).with_context(|| format!("reading graphs {}", path.display()))
}

fn read_labels(path: &Path, graphs: usize) -> Result<Vec<LabelRow>> {
    let rows = LabelTable::read_csv(path).with_context(|| format!("reading labels {}", path.display()))?;
    if let Some(r) = rows.iter().find(|r| r.i >= graphs || r.j >= graphs) {
        bail!("label row ({}, {}) refers to a graph outside the corpus of {graphs}", r.i, r.j);
    }
    Ok(rows)
}

fn read_gs(path: &Path) -> Result<GsParams> {
    GsParams::load(path).with_context(|| format!("missing or invalid GS checkpoint {}", path.display()))
}

fn read_model(path: &Path) -> Result<GedanModel> {
    GedanModel::load(path).with_context(|| format!("missing or invalid model checkpoint {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn new_model(cfg: &RunConfig, gs: GsParams, graphs: &[Graph]) -> Result<GedanModel> {
    let max_label = graphs.iter().map(Graph::max_label).max().unwrap_or(0);
    if max_label >= cfg.model.num_labels {
        bail!(
            "corpus uses label {max_label} but the model has {} label rows; raise model.num_labels",
            cfg.model.num_labels
        );
    }
    Ok(GedanModel::new(cfg.model.clone(), gs)?)
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    best_epoch: usize,
    best: Option<&'a EpochRecord>,
    epochs: usize,
}

fn train_metrics(history: &[EpochRecord], best_epoch: usize) -> TrainMetrics<'_> {
    TrainMetrics {
        best_epoch,
        best: history.iter().find(|r| r.epoch == best_epoch),
        epochs: history.len(),
    }
}

#[derive(Serialize)]
struct PairMetrics {
    pairs: usize,
    rmse: f64,
    tau: f64,
    rho: f64,
}

/// Parses `args` and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        frame_size: cli.frame_size,
        cost_conf: cli.cost_conf,
        lambda: cli.lambda,
        epochs: cli.epochs,
    })?;
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be positive");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let mut art = Artifacts::default();
    let manifest_dir = pool.install(|| execute(&cli.command, &mut cfg, &mut art))?;
    let manifest = Manifest {
        command: cli.command.name(),
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        workers,
        versions: BTreeMap::from([
            ("gedan-cli", env!("CARGO_PKG_VERSION")),
            ("gedan-core", gedan_core::VERSION),
        ]),
        inputs: art.inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: art.outputs.iter().map(|p| p.display().to_string()).collect(),
        config: &cfg,
    };
    write_json(&manifest_dir.join(format!("manifest-{}.json", cli.command.name())), &manifest)
}

/// Runs one command and returns the directory that receives its manifest.
fn execute(command: &Command, cfg: &mut RunConfig, art: &mut Artifacts) -> Result<PathBuf> {
    match command {
        Command::Synth {
            n,
            min_nodes,
            max_nodes,
            edge_prob,
            labels,
            count_label,
            out,
        } => {
            let dir = out_dir(out)?;
            let s = &mut cfg.synth;
            s.count = n.unwrap_or(s.count);
            s.min_nodes = min_nodes.unwrap_or(s.min_nodes);
            s.max_nodes = max_nodes.unwrap_or(s.max_nodes);
            s.edge_prob = edge_prob.unwrap_or(s.edge_prob);
            s.labels = labels.unwrap_or(s.labels);
            s.count_label = count_label.or(s.count_label);
            let graphs = match cfg.synth.count_label {
                Some(l) => label_count_corpus(&cfg.synth.spec(), l, cfg.synth_seed()),
                None => synth_corpus(&cfg.synth.spec(), cfg.synth_seed()),
            };
            write_graphs(&art.output(dir.join("graphs.jsonl")), &graphs)?;
            println!("wrote {} graphs to {}", graphs.len(), dir.display());
            Ok(dir)
        }
        Command::Labels { graphs, conf, out } => {
            let dir = out_dir(out)?;
            if let Some(c) = conf {
                cfg.labels.conf = *c;
            }
            let graphs = read_graphs(&art.input(&or_default(graphs, &dir, "graphs.jsonl")))?;
            let table = gen_pair_labels(&graphs, CostConfigId::new(cfg.labels.conf)?, cfg.labels.max_nodes)?;
            table.write_csv(&art.output(dir.join("labels.csv")))?;
            table.write_stats(&art.output(dir.join("label-stats.json")))?;
            println!("wrote {} labelled pairs (mean GED {:.3})", table.rows.len(), table.stats.mean);
            Ok(dir)
        }
        Command::GsPretrain { out } => {
            let dir = out_dir(out)?;
            let (gs, report) = pretrain_gs(&cfg.gs)?;
            gs.save(&art.output(dir.join("gs.json")))?;
            write_json(&art.output(dir.join("gs-metrics.json")), &report)?;
            println!("GS tau {:.4} -> {:.4}", report.tau_untrained, report.tau_trained);
            Ok(dir)
        }
        Command::TrainUnsup {
            graphs,
            gs,
            labels,
            val_pairs,
            out,
        } => {
            let dir = out_dir(out)?;
            let graphs = read_graphs(&art.input(&or_default(graphs, &dir, "graphs.jsonl")))?;
            let gs = read_gs(&art.input(&or_default(gs, &dir, "gs.json")))?;
            cfg.model.lambda = 1.0;
            let model = new_model(cfg, gs, &graphs)?;
            let val = match labels {
                Some(p) => {
                    let rows = read_labels(&art.input(p), graphs.len())?;
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.unsupervised.seed ^ 0x7a1);
                    let mut chosen: Vec<LabelRow> = rows.choose_multiple(&mut rng, *val_pairs).copied().collect();
                    chosen.sort_by_key(|r| (r.i, r.j));
                    Some(chosen)
                }
                None => None,
            };
            let validation = val.as_deref().map(|rows| (graphs.as_slice(), rows));
            let outcome = train_unsupervised(&model, &graphs, validation, &cfg.unsupervised)?;
            outcome.best_model.save(&art.output(dir.join("model.json")))?;
            write_history(&art.output(dir.join("history.csv")), &outcome.history)?;
            write_json(
                &art.output(dir.join("train-metrics.json")),
                &train_metrics(&outcome.history, outcome.best_epoch),
            )?;
            println!("best epoch {}", outcome.best_epoch);
            Ok(dir)
        }
        Command::TrainGed {
            graphs,
            labels,
            gs,
            out,
        } => {
            let dir = out_dir(out)?;
            let graphs = read_graphs(&art.input(&or_default(graphs, &dir, "graphs.jsonl")))?;
            let rows = read_labels(&art.input(&or_default(labels, &dir, "labels.csv")), graphs.len())?;
            let gs = read_gs(&art.input(&or_default(gs, &dir, "gs.json")))?;
            let model = new_model(cfg, gs, &graphs)?;
            let outcome = train_supervised_ged(&model, &graphs, &rows, &cfg.supervised)?;
            outcome.best_model.save(&art.output(dir.join("model.json")))?;
            write_history(&art.output(dir.join("history.csv")), &outcome.history)?;
            write_json(
                &art.output(dir.join("train-metrics.json")),
                &train_metrics(&outcome.history, outcome.best_epoch),
            )?;
            println!("best epoch {}", outcome.best_epoch);
            Ok(dir)
        }
        Command::TrainCosts { graphs, gs, out } => {
            let dir = out_dir(out)?;
            let graphs = read_graphs(&art.input(&or_default(graphs, &dir, "graphs.jsonl")))?;
            let gs = read_gs(&art.input(&or_default(gs, &dir, "gs.json")))?;
            let model = new_model(cfg, gs, &graphs)?;
            let outcome = train_cost_learning(&model, &graphs, &cfg.cost_learning)?;
            outcome.best_model.save(&art.output(dir.join("model.json")))?;
            outcome.head.save(&art.output(dir.join("head.json")))?;
            write_history(&art.output(dir.join("history.csv")), &outcome.history)?;
            write_json(
                &art.output(dir.join("train-metrics.json")),
                &train_metrics(&outcome.history, outcome.best_epoch),
            )?;
            println!("best epoch {}", outcome.best_epoch);
            Ok(dir)
        }
        Command::Eval {
            graphs,
            model,
            against,
            mode,
            downstream,
            grid,
            grid_train,
            out,
        } => {
            let dir = out_dir(out)?;
            let graphs = read_graphs(&art.input(&or_default(graphs, &dir, "graphs.jsonl")))?;
            let model = read_model(&art.input(&or_default(model, &dir, "model.json")))?;
            let mode = Mode::from(*mode);
            if against.is_none() && !downstream && !grid {
                bail!("eval needs --against, --downstream or --grid");
            }
            let mut metrics = BTreeMap::new();
            if let Some(p) = against {
                let rows = read_labels(&art.input(p), graphs.len())?;
                let pred: Vec<f64> = rows
                    .par_iter()
                    .map(|r| model.score(&graphs[r.i], &graphs[r.j], mode))
                    .collect::<gedan_core::Result<_>>()?;
                let truth: Vec<f64> = rows.iter().map(|r| r.ged).collect();
                let m = rank_metrics(&pred, &truth)?;
                println!("rmse {:.4} tau {:.4} rho {:.4}", m.rmse, m.tau, m.rho);
                metrics.insert(
                    "pairs",
                    serde_json::to_value(PairMetrics {
                        pairs: rows.len(),
                        rmse: m.rmse,
                        tau: m.tau,
                        rho: m.rho,
                    })?,
                );
            }
            if *downstream {
                let r = evaluate_downstream(&model, mode, &graphs, &cfg.pipeline)?;
                println!("downstream {} {:.4} ± {:.4}", r.metric, r.mean, r.std);
                metrics.insert("downstream", serde_json::to_value(r)?);
            }
            if *grid {
                let unsup = grid_train.then_some(&cfg.unsupervised);
                let report = grid_search_costs(&model, &graphs, unsup, &cfg.pipeline)?;
                let mut w = csv::Writer::from_path(art.output(dir.join("grid.csv")))?;
                w.write_record(["node_del", "node_ins", "edge_del", "edge_ins", "metric", "mean", "std"])?;
                for row in &report.rows {
                    let c = row.costs;
                    w.write_record([
                        c.node_del.to_string(),
                        c.node_ins.to_string(),
                        c.edge_del.to_string(),
                        c.edge_ins.to_string(),
                        row.report.metric.clone(),
                        row.report.mean.to_string(),
                        row.report.std.to_string(),
                    ])?;
                }
                w.flush()?;
                let best = report.best_row();
                println!("grid best {} {:.4}", best.report.metric, best.report.mean);
                metrics.insert("grid", serde_json::to_value(report)?);
            }
            // The flattened metrics map keeps the rmse/tau/rho keys at top level.
            let mut flat = serde_json::Map::new();
            if let Some(serde_json::Value::Object(p)) = metrics.remove("pairs") {
                flat.extend(p);
            }
            flat.extend(metrics.into_iter().map(|(k, v)| (k.to_string(), v)));
            write_json(&art.output(dir.join("metrics.json")), &flat)?;
            Ok(dir)
        }
        Command::Embed {
            graphs,
            model,
            mode,
            prototypes,
            out,
        } => {
            let dir = out_dir(out)?;
            let graphs = read_graphs(&art.input(&or_default(graphs, &dir, "graphs.jsonl")))?;
            let model = read_model(&art.input(&or_default(model, &dir, "model.json")))?;
            let count = prototypes.unwrap_or(cfg.pipeline.prototypes);
            let all: Vec<usize> = (0..graphs.len()).collect();
            let protos = select_prototypes(&all, count, cfg.pipeline.seed)?;
            let emb = embed(&graphs, &protos, &model, Mode::from(*mode))?;
            let mut w = csv::Writer::from_path(art.output(dir.join("embeddings.csv")))?;
            let mut header = vec!["id".to_string(), "target".to_string()];
            header.extend(protos.iter().map(|&p| format!("d_{}", graphs[p].id())));
            w.write_record(&header)?;
            for (g, v) in graphs.iter().zip(&emb.vectors) {
                let mut rec = vec![g.id().to_string(), g.target().map_or(String::new(), |t| t.to_string())];
                rec.extend(v.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            println!("embedded {} graphs against {count} prototypes", graphs.len());
            Ok(dir)
        }
        Command::Explain {
            graphs,
            model,
            query,
            mode,
            format,
            out,
        } => {
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf);
            std::fs::create_dir_all(&dir)?;
            let graphs = read_graphs(&art.input(&or_default(graphs, &default_out(), "graphs.jsonl")))?;
            let model = read_model(&art.input(&or_default(model, &default_out(), "model.json")))?;
            if *query >= graphs.len() {
                bail!("query {query} outside a corpus of {} graphs", graphs.len());
            }
            let mode = Mode::from(*mode);
            let raw: Vec<Vec<f64>> = (0..graphs.len())
                .map(|q| node_importance(q, &graphs, &model, mode))
                .collect::<gedan_core::Result<_>>()?;
            let norm = normalize_importance(&raw);
            let format = match format {
                Some(FormatArg::Json) => HeatmapFormat::Json,
                Some(FormatArg::Dot) => HeatmapFormat::Dot,
                None if out.extension().is_some_and(|e| e == "json") => HeatmapFormat::Json,
                None => HeatmapFormat::Dot,
            };
            export_heatmap(&graphs[*query], &norm[*query], &art.output(out.clone()), format)?;
            println!("wrote node importance of graph {query} to {}", out.display());
            Ok(dir)
        }
    }
}
