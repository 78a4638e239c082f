//! Command-line front end: tree building, pre-training, detection,
//! evaluation and the construction benchmark.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use treeood::eval::{bench_tree_construction, export_density, format_bench, write_bench_csv};
use treeood::losses::ScoreReport;
use treeood::nn::{load_weights, save_weights, GraphEncoderParams};
use treeood::pipeline::{
    detect, load_collection, preprocess_trees, pretrain_with_history, save_collection, split_collection, Objective,
    RunConfig, TRAIN_FRACTION,
};
use treeood::tree::{structural_entropy, TreeJson};

#[derive(Parser)]
#[command(name = "treeood", version, about = "Test-time graph OOD detection with coding trees")]
struct Cli {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one coding tree per graph and write them as JSON.
    BuildTrees {
        /// TUDataset directory or JSON graph array.
        dataset: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Output file; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Pre-train the graph encoder on ID training graphs.
    Pretrain {
        id_train: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Train on a seeded 90% of the dataset and write the rest here.
        #[arg(long, value_name = "HELD_OUT")]
        split: Option<PathBuf>,
        /// Zero-pad node features to at least this width, so test sets
        /// with wider features can be scored later.
        #[arg(long)]
        min_feature_dim: Option<usize>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Adapt a tree encoder on the test graphs and score them.
    Detect {
        weights: PathBuf,
        id_test: Option<PathBuf>,
        ood_test: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs_tt: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        objective: Option<ObjectiveArg>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Print the AUC of a report and optionally export score densities.
    Eval {
        report: PathBuf,
        /// CSV of ID and OOD score densities.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Time coding-tree construction on random graphs with |E| = 2|V|.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000,16000,32000,64000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output; a table goes to standard output either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ObjectiveArg {
    Full,
    ContrastiveOnly,
    RedundancyOnly,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Full => Objective::Full,
            ObjectiveArg::ContrastiveOnly => Objective::ContrastiveOnly,
            ObjectiveArg::RedundancyOnly => Objective::RedundancyOnly,
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl ModelFlags {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.seed, self.seed);
        set(&mut c.lr, self.lr);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.tau, self.tau);
        set(&mut c.hidden_dim, self.hidden_dim);
        set(&mut c.output_dim, self.output_dim);
        set(&mut c.walk_length, self.walk_length);
    }
}

fn require(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .with_context(|| format!("no {what} dataset given on the command line or in the config"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::BuildTrees {
            dataset,
            k,
            out: path,
            cache_dir,
        } => {
            set(&mut config.k, k);
            if cache_dir.is_some() {
                config.cache_dir = cache_dir;
            }
            config.validate()?;
            let graphs = load_collection(&dataset)?;
            let set = preprocess_trees(&config, &graphs)?;
            let mut entropy = 0.0;
            for (&i, tree) in set.kept.iter().zip(&set.trees) {
                entropy += structural_entropy(&graphs.graphs()[i], tree)?;
            }
            let json: Vec<TreeJson> = set.trees.iter().map(|t| t.to_json()).collect();
            let text = serde_json::to_string(&json)?;
            match path {
                Some(p) => write_file(&p, text.as_bytes())?,
                None => writeln!(out, "{text}")?,
            }
            eprintln!(
                "{} trees of height <= {} ({} skipped, {} cached), mean entropy {:.4}",
                set.trees.len(),
                config.k,
                graphs.len() - set.kept.len(),
                set.cache_hits,
                entropy / set.trees.len().max(1) as f64
            );
        }

        Command::Pretrain {
            id_train,
            epochs,
            out: path,
            split,
            min_feature_dim,
            model,
        } => {
            set(&mut config.epochs_pretrain, epochs);
            model.apply(&mut config);
            config.validate()?;
            let dataset = require(id_train, &config.id_train, "ID training")?;
            let mut graphs = load_collection(&dataset)?;
            if let Some(held_out) = split {
                let (train, rest) = split_collection(&graphs, TRAIN_FRACTION, config.seed)?;
                save_collection(&rest, &held_out)?;
                eprintln!(
                    "held out {} of {} graphs in {}",
                    rest.len(),
                    graphs.len(),
                    held_out.display()
                );
                graphs = train;
            }
            if let Some(dim) = min_feature_dim {
                graphs = graphs.pad_features(dim.max(graphs.feature_dim()))?;
            }
            let (encoder, history) = pretrain_with_history(&config, &graphs)?;
            save_weights(&path, &encoder).with_context(|| format!("writing {}", path.display()))?;
            if let (Some(first), Some(last)) = (history.epoch_losses.first(), history.epoch_losses.last()) {
                writeln!(
                    out,
                    "epoch 1 loss {first:.4}, epoch {} loss {last:.4}",
                    history.epoch_losses.len()
                )?;
            }
        }

        Command::Detect {
            weights,
            id_test,
            ood_test,
            k,
            lambda,
            epochs_tt,
            out: path,
            objective,
            cache_dir,
            model,
        } => {
            set(&mut config.k, k);
            set(&mut config.lambda, lambda);
            set(&mut config.epochs_testtime, epochs_tt);
            set(&mut config.objective, objective.map(Objective::from));
            if cache_dir.is_some() {
                config.cache_dir = cache_dir;
            }
            model.apply(&mut config);
            config.validate()?;
            let encoder: GraphEncoderParams =
                load_weights(&weights).with_context(|| format!("reading weights {}", weights.display()))?;
            if !encoder.frozen {
                bail!("{} holds an encoder that was never frozen", weights.display());
            }
            let id = load_collection(require(id_test, &config.id_test, "ID test")?)?;
            let ood = load_collection(require(ood_test, &config.ood_test, "OOD test")?)?;
            let detection = detect(&encoder, &config, &id, &ood)?;
            let report = &detection.adaptation.report;
            write_file(&path, report.to_json()?.as_bytes())?;
            let skipped = id.len() + ood.len() - detection.kept.len();
            if skipped > 0 {
                eprintln!("{skipped} edgeless graphs were not scored");
            }
            writeln!(
                out,
                "AUC {:.4} over {} graphs",
                report.auc.unwrap_or(f64::NAN),
                report.scores.len()
            )?;
        }

        Command::Eval { report, density, bins } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let parsed = ScoreReport::from_json(&text)?;
            let labels = parsed.labels.as_deref().context("report has no labels")?;
            let auc = treeood::eval::auc(&parsed.scores, labels)?;
            let mean = |ood: bool| {
                let picked: Vec<f64> = parsed
                    .scores
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == ood)
                    .map(|(&s, _)| s)
                    .collect();
                picked.iter().sum::<f64>() / picked.len() as f64
            };
            writeln!(out, "auc {auc:.6}")?;
            writeln!(out, "mean score id {:.6} ood {:.6}", mean(false), mean(true))?;
            if let Some(csv) = density {
                export_density(&parsed, bins, &csv)?;
            }
        }

        Command::Bench { sizes, seed, out: path } => {
            let records = bench_tree_construction(&sizes, seed)?;
            format_bench(&records, &mut out)?;
            if let Some(p) = path {
                write_bench_csv(&records, p)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
