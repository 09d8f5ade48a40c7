//! Command-line surface for the lexical-complexity toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 numeric failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use lexcomp::corpus::{load_dataset, Subtask};
use lexcomp::encoding::build_vocab;
use lexcomp::pipeline::{
    make_synthetic, run_ensemble, run_evaluate, run_grid_search, run_predict, run_train,
    DataConfig, MethodSpec, RunConfig, SelectionSummary,
};
use lexcomp::training::{AdversarialConfig, GridPoint, TrainingConfig};
use lexcomp::{Error, Result};

/// Env var naming the default output root for runs when `--out` is not
/// given.
const OUTPUT_ROOT_VAR: &str = "LEXCOMP_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "lexcomp", version, about = "Lexical complexity prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (train/trial/test TSVs + frequency table).
    MakeSynthetic {
        /// Output directory for the four files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Training rows; trial and test each get a tenth.
        #[arg(long, default_value_t = 600)]
        size: usize,
        #[arg(long, value_parser = parse_subtask, default_value = "single_word")]
        subtask: Subtask,
    },
    /// Build a vocabulary file from a training TSV.
    BuildVocab {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, value_parser = parse_subtask, default_value = "single_word")]
        subtask: Subtask,
        /// Keep tokens occurring at least this often.
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; flags override config-file keys.
    Train(TrainArgs),
    /// Sweep learning rate × batch size, then train the winner.
    GridSearch {
        #[command(flatten)]
        train: TrainArgs,
        /// Learning rates to sweep (comma-separated).
        #[arg(long, value_delimiter = ',')]
        learning_rates: Option<Vec<f64>>,
        /// Batch sizes to sweep (comma-separated).
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
    },
    /// Predict a dataset with a checkpoint file or a run directory.
    Predict {
        /// Checkpoint file, or run directory (uses its routing.json or
        /// best.ckpt.json).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output prediction CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average ensemble members into one prediction CSV.
    Ensemble {
        /// Ensemble spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Dataset to predict (needed for checkpoint/routed members).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_subtask, default_value = "single_word")]
        subtask: Subtask,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction CSV against gold labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_parser = parse_subtask, default_value = "single_word")]
        subtask: Subtask,
        /// Also write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export scatter/histogram/per-domain analysis CSVs.
    Analyze {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_parser = parse_subtask, default_value = "single_word")]
        subtask: Subtask,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Run config JSON; optional when --subtask/--train/--dev are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default: $LEXCOMP_OUTPUT_ROOT/<method>_<subtask>_seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_subtask)]
    subtask: Option<Subtask>,
    /// Method string: standard | feat | adv | msft | mtl, composable with '+'.
    #[arg(long)]
    method: Option<MethodSpec>,
    /// Encoder preset: toy | bert_base | roberta_large.
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    vocab_min_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Select the best epoch per domain instead of on the whole dev set.
    #[arg(long)]
    per_domain_selection: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    init_variance: Option<f64>,
    #[arg(long)]
    pgd_steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    frequencies: Option<PathBuf>,
    #[arg(long)]
    stage1_train: Option<PathBuf>,
    #[arg(long)]
    stage1_dev: Option<PathBuf>,
    #[arg(long)]
    partner_train: Option<PathBuf>,
    #[arg(long)]
    partner_dev: Option<PathBuf>,
}

fn parse_subtask(s: &str) -> std::result::Result<Subtask, String> {
    match s.replace('-', "_").as_str() {
        "single_word" | "1" => Ok(Subtask::SingleWord),
        "mwe" | "2" => Ok(Subtask::Mwe),
        other => Err(format!("unknown subtask '{other}' (expected single_word or mwe)")),
    }
}

impl TrainArgs {
    /// Builds the effective run config: the config file (when given)
    /// with every explicitly-passed flag applied on top.
    fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let subtask = self.subtask.ok_or_else(|| {
                    Error::invalid("--subtask is required when no --config is given")
                })?;
                let train = self.train.clone().ok_or_else(|| {
                    Error::invalid("--train is required when no --config is given")
                })?;
                let dev = self.dev.clone().ok_or_else(|| {
                    Error::invalid("--dev is required when no --config is given")
                })?;
                RunConfig {
                    subtask,
                    method: MethodSpec::standard(),
                    encoder: "toy".into(),
                    max_len: lexcomp::encoding::DEFAULT_MAX_LEN,
                    vocab_min_count: 1,
                    seed: 1,
                    per_domain_selection: false,
                    optimizer: TrainingConfig::default(),
                    adversarial: None,
                    data: DataConfig {
                        train,
                        dev,
                        test: None,
                        frequencies: None,
                        stage1_train: None,
                        stage1_dev: None,
                        partner_train: None,
                        partner_dev: None,
                    },
                }
            }
        };
        if let Some(v) = self.subtask {
            cfg.subtask = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = &self.encoder {
            cfg.encoder = v.clone();
        }
        if let Some(v) = self.max_len {
            cfg.max_len = v;
        }
        if let Some(v) = self.vocab_min_count {
            cfg.vocab_min_count = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.per_domain_selection {
            cfg.per_domain_selection = true;
        }
        if let Some(v) = self.learning_rate {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.optimizer.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.optimizer.max_epochs = v;
        }
        if let Some(v) = self.warmup_fraction {
            cfg.optimizer.warmup_fraction = v;
        }
        if let Some(v) = self.clip_norm {
            cfg.optimizer.clip_norm = v;
        }
        if let Some(v) = &self.train {
            cfg.data.train = v.clone();
        }
        if let Some(v) = &self.dev {
            cfg.data.dev = v.clone();
        }
        if let Some(v) = &self.test {
            cfg.data.test = Some(v.clone());
        }
        if let Some(v) = &self.frequencies {
            cfg.data.frequencies = Some(v.clone());
        }
        if let Some(v) = &self.stage1_train {
            cfg.data.stage1_train = Some(v.clone());
        }
        if let Some(v) = &self.stage1_dev {
            cfg.data.stage1_dev = Some(v.clone());
        }
        if let Some(v) = &self.partner_train {
            cfg.data.partner_train = Some(v.clone());
        }
        if let Some(v) = &self.partner_dev {
            cfg.data.partner_dev = Some(v.clone());
        }
        if cfg.method.adv {
            let adv = cfg.adversarial.get_or_insert_with(AdversarialConfig::default);
            if let Some(v) = self.epsilon {
                adv.epsilon = v;
            }
            if let Some(v) = self.step_size {
                adv.step_size = v;
            }
            if let Some(v) = self.init_variance {
                adv.init_variance = v;
            }
            if let Some(v) = self.pgd_steps {
                adv.pgd_steps = v;
            }
            if let Some(v) = self.alpha {
                adv.alpha = v;
            }
        }
        Ok(cfg)
    }

    fn run_dir(&self, cfg: &RunConfig) -> Result<PathBuf> {
        if let Some(out) = &self.out {
            return Ok(out.clone());
        }
        let root = std::env::var_os(OUTPUT_ROOT_VAR).ok_or_else(|| {
            Error::invalid(format!("--out is required unless {OUTPUT_ROOT_VAR} is set"))
        })?;
        Ok(PathBuf::from(root).join(format!("{}_{}_seed{}", cfg.method, cfg.subtask, cfg.seed)))
    }
}

fn describe_selection(sel: &SelectionSummary) -> String {
    match sel {
        SelectionSummary::Whole { epoch, dev_pearson } => {
            format!("best epoch {epoch} (dev Pearson {dev_pearson:.6})")
        }
        SelectionSummary::PerDomain { epochs, .. } => {
            let parts: Vec<String> =
                epochs.iter().map(|(d, e)| format!("{d}: epoch {e}")).collect();
            format!("per-domain best: {}", parts.join(", "))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeSynthetic { out, seed, size, subtask } => {
            let paths = make_synthetic(&out, seed, size, subtask)?;
            println!("wrote {}", paths.train.display());
            println!("wrote {}", paths.trial.display());
            println!("wrote {}", paths.test.display());
            println!("wrote {}", paths.frequencies.display());
        }
        Command::BuildVocab { train, subtask, min_count, out } => {
            let data = load_dataset(&train, subtask)?;
            let vocab = build_vocab(&data, min_count)?;
            vocab.save(&out)?;
            println!("wrote {} ({} entries)", out.display(), vocab.len());
        }
        Command::Train(args) => {
            let cfg = args.effective_config()?;
            let run_dir = args.run_dir(&cfg)?;
            let outcome = run_train(&cfg, &run_dir)?;
            println!("run directory: {}", outcome.run_dir.display());
            println!("manifest: {}", outcome.manifest_path.display());
            println!("{}", describe_selection(&outcome.selection));
            for path in &outcome.best_paths {
                println!("best checkpoint: {}", path.display());
            }
        }
        Command::GridSearch { train, learning_rates, batch_sizes } => {
            let cfg = train.effective_config()?;
            let out_dir = train.run_dir(&cfg)?;
            let lrs = learning_rates
                .unwrap_or_else(|| lexcomp::training::TARGET_SCALE_LR_GRID.to_vec());
            let batches =
                batch_sizes.unwrap_or_else(|| lexcomp::training::BATCH_SIZE_GRID.to_vec());
            let mut grid = Vec::new();
            for &lr in &lrs {
                for &batch in &batches {
                    grid.push(GridPoint { learning_rate: lr, batch_size: batch });
                }
            }
            let out = run_grid_search(&cfg, &grid, &out_dir)?;
            println!("grid table: {}", out.grid_path.display());
            println!(
                "best point: lr {} batch {}",
                out.best_point.learning_rate, out.best_point.batch_size
            );
            println!("best run: {}", out.best_run.run_dir.display());
        }
        Command::Predict { model, data, out } => {
            let n = run_predict(&model, &data, &out)?;
            println!("wrote {n} predictions to {}", out.display());
        }
        Command::Ensemble { spec, data, subtask, out } => {
            let n = run_ensemble(&spec, data.as_deref(), subtask, &out)?;
            println!("wrote {n} predictions to {}", out.display());
        }
        Command::Evaluate { predictions, gold, subtask, report } => {
            let rep = run_evaluate(&predictions, &gold, subtask, report.as_deref())?;
            println!("pearson\tspearman\tmae\tmse\tr2\tcount");
            println!("{}", rep.tsv_line());
            for (domain, block) in &rep.per_domain {
                println!(
                    "{domain}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                    block.pearson, block.spearman, block.mae, block.mse, block.r2, block.count
                );
            }
            if let Some(path) = report {
                println!("report: {}", path.display());
            }
        }
        Command::Analyze { predictions, gold, subtask, out } => {
            let files = lexcomp::pipeline::run_analyze(&predictions, &gold, subtask, &out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here as "errors"; keep them 0
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
