use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use grouprec::config::ExperimentConfig;
use grouprec::data::{load_ratings, DatasetFingerprint, RatingsDataset};
use grouprec::eval::{evaluate, EvalOptions, MetricsReport};
use grouprec::groups::{generate_groups, GroupsFile};
use grouprec::model::{train, ModelParams};
use grouprec::{Error, Result};

#[derive(Parser)]
#[command(
    name = "grouprec",
    version,
    about = "Neural collaborative filtering for group recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset statistics
    Stats(Flags),
    /// Train a model and write a checkpoint
    Train(Flags),
    /// Generate synthetic evaluation groups
    GenGroups(Flags),
    /// Evaluate checkpoints on a groups file
    Eval(Flags),
}

#[derive(Args)]
struct Flags {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// One character, or tab / space / comma
    #[arg(long)]
    delimiter: Option<String>,
    /// Skip the first line of the dataset
    #[arg(long)]
    header: bool,
    /// gmf or mlp
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    factors: Option<String>,
    /// Comma-separated hidden widths, e.g. 32,16,8
    #[arg(long)]
    mlp_layers: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    test_fraction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Group sizes, e.g. 2..10 or 2,6,10
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    per_size: Option<String>,
    /// Sampling attempts per group before a size is abandoned
    #[arg(long)]
    max_attempts: Option<String>,
    /// Comma-separated subset of ipa,average,expertise,softmax
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    ndcg_n: Option<String>,
    /// Divide MSE by the group size once more
    #[arg(long = "mse-paper-literal")]
    mse_group_scaled: bool,
    #[arg(long)]
    threads: Option<String>,
    /// Output file (checkpoint, groups file or report)
    #[arg(long)]
    out: Option<String>,
    /// Model checkpoint to evaluate; repeatable
    #[arg(long)]
    checkpoint: Vec<String>,
    /// Groups file to evaluate on
    #[arg(long)]
    groups: Option<String>,
}

impl Flags {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let pairs = [
            ("dataset", &self.dataset),
            ("delimiter", &self.delimiter),
            ("model", &self.model),
            ("factors", &self.factors),
            ("mlp-layers", &self.mlp_layers),
            ("lr", &self.lr),
            ("batch-size", &self.batch_size),
            ("epochs", &self.epochs),
            ("test-fraction", &self.test_fraction),
            ("seed", &self.seed),
            ("sizes", &self.sizes),
            ("per-size", &self.per_size),
            ("max-attempts", &self.max_attempts),
            ("strategies", &self.strategies),
            ("ndcg-n", &self.ndcg_n),
            ("threads", &self.threads),
            ("out", &self.out),
            ("groups", &self.groups),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.header {
            cfg.set("header", "true")?;
        }
        if self.mse_group_scaled {
            cfg.set("mse-paper-literal", "true")?;
        }
        if !self.checkpoint.is_empty() {
            cfg.set("checkpoint", &self.checkpoint.join(","))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Stats(f) => f.resolve().and_then(|c| cmd_stats(&c)),
        Command::Train(f) => f.resolve().and_then(|c| cmd_train(&c)),
        Command::GenGroups(f) => f.resolve().and_then(|c| cmd_gen_groups(&c)),
        Command::Eval(f) => f.resolve().and_then(|c| cmd_eval(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn load(cfg: &ExperimentConfig) -> Result<RatingsDataset> {
    load_ratings(required(&cfg.dataset, "dataset")?, &cfg.load)
}

fn load_split(cfg: &ExperimentConfig) -> Result<RatingsDataset> {
    let dataset = load(cfg)?.split(cfg.train.test_fraction, cfg.split_seed())?;
    info!(
        "split: {} train / {} test ratings",
        dataset.train().count(),
        dataset.test().count()
    );
    Ok(dataset)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn cmd_stats(cfg: &ExperimentConfig) -> Result<()> {
    let stats = load(cfg)?.stats();
    print!("{}", stats.render());
    Ok(())
}

fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let dataset = load_split(cfg)?;
    let trained = train(&dataset, cfg.model, &cfg.train_config())?;
    trained.params.save_checkpoint(out)?;
    let meta = format!(
        "config {}\ndataset {}\nmodel {}\n",
        cfg.fingerprint(),
        dataset.fingerprint(),
        cfg.model
    );
    let meta_file = meta_path(out);
    fs::write(&meta_file, meta).map_err(|e| Error::io(&meta_file, e))?;
    match trained.epoch_losses.last() {
        Some(loss) => println!(
            "trained {} for {} epochs, final loss {loss:.6}",
            cfg.model, cfg.train.epochs
        ),
        None => println!("wrote untrained {} initialization", cfg.model),
    }
    println!("checkpoint {}", out.display());
    Ok(())
}

fn cmd_gen_groups(cfg: &ExperimentConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let dataset = load_split(cfg)?;
    let generated = generate_groups(
        &dataset,
        &cfg.sizes,
        cfg.per_size,
        cfg.groups_seed(),
        cfg.max_attempts,
    )?;
    let file = GroupsFile {
        dataset: dataset.fingerprint(),
        config: Some(cfg.fingerprint()),
        groups: generated.groups,
    };
    file.save(out)?;
    println!("size\tproduced\tshortfall\tduplicates\tqualifying_items\tattempts");
    for r in &generated.reports {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.size,
            r.produced,
            r.shortfall(),
            r.duplicates,
            r.qualifying_items,
            r.attempts
        );
        if r.shortfall() > 0 {
            warn!(
                "size {}: {} of {} groups missing",
                r.size,
                r.shortfall(),
                r.requested
            );
        }
    }
    Ok(())
}

/// Refuses a checkpoint whose sidecar names a different dataset split.
fn check_meta(checkpoint: &Path, dataset: &RatingsDataset) -> Result<()> {
    let meta_file = meta_path(checkpoint);
    let Ok(text) = fs::read_to_string(&meta_file) else {
        warn!(
            "{} not found; dataset pairing not checked",
            meta_file.display()
        );
        return Ok(());
    };
    let Some(recorded) = text.lines().find_map(|l| l.strip_prefix("dataset ")) else {
        return Err(Error::Checkpoint(format!(
            "{} has no dataset line",
            meta_file.display()
        )));
    };
    let recorded: DatasetFingerprint = recorded.parse()?;
    let found = dataset.fingerprint();
    if recorded != found {
        return Err(Error::FingerprintMismatch {
            expected: recorded.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.checkpoints.is_empty() {
        return Err(Error::Config("--checkpoint is required".into()));
    }
    let groups = GroupsFile::load(required(&cfg.groups, "groups")?)?;
    let dataset = load_split(cfg)?;
    groups.check_against(&dataset)?;
    let options = EvalOptions {
        ndcg_n: cfg.ndcg_n,
        mse_group_scaled: cfg.mse_group_scaled,
        threads: cfg.threads,
    };
    let mut report = MetricsReport::default();
    for path in &cfg.checkpoints {
        check_meta(path, &dataset)?;
        let model = ModelParams::load_checkpoint(path)?;
        for &strategy in &cfg.strategies {
            info!(
                "evaluating {} / {strategy} on {} groups",
                model.model_type(),
                groups.groups.len()
            );
            report
                .rows
                .extend(evaluate(&model, &dataset, &groups, strategy, &options)?.rows);
        }
    }
    let fingerprint = cfg.fingerprint();
    match &cfg.out {
        Some(out) => {
            report
                .write_tsv(create(out)?, Some(&fingerprint))
                .map_err(|e| Error::io(out, e))?;
            println!("report {} ({} rows)", out.display(), report.rows.len());
        }
        None => report
            .write_tsv(io::stdout().lock(), Some(&fingerprint))
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}
