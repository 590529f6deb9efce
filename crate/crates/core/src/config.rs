//! Experiment configuration: defaults, `key = value` files, stage seeds.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::aggregation::Strategy;
use crate::data::LoadOptions;
use crate::error::{Error, Result};
use crate::groups::DEFAULT_MAX_ATTEMPTS;
use crate::model::{ModelType, TrainConfig};

/// Pipeline stages with independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Split = 1,
    Train = 2,
    Groups = 3,
}

/// Sub-seed for `stage`: first output of ChaCha8 seeded with `seed` on stream `stage`.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub load: LoadOptions,
    pub model: ModelType,
    /// `train.seed` is ignored; training uses the derived stage seed.
    pub train: TrainConfig,
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub max_attempts: usize,
    pub strategies: Vec<Strategy>,
    pub ndcg_n: usize,
    pub mse_group_scaled: bool,
    pub threads: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub groups: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            load: LoadOptions::default(),
            model: ModelType::Gmf,
            train: TrainConfig::default(),
            sizes: (2..=10).collect(),
            per_size: 10_000,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            strategies: Strategy::ALL.to_vec(),
            ndcg_n: 5,
            mse_group_scaled: false,
            threads: None,
            seed: 42,
            out: None,
            checkpoints: Vec::new(),
            groups: None,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::set`]; they match the long CLI flags.
pub const KEYS: [&str; 21] = [
    "dataset",
    "delimiter",
    "header",
    "model",
    "factors",
    "mlp-layers",
    "lr",
    "batch-size",
    "epochs",
    "test-fraction",
    "seed",
    "sizes",
    "per-size",
    "max-attempts",
    "strategies",
    "ndcg-n",
    "mse-paper-literal",
    "threads",
    "out",
    "checkpoint",
    "groups",
];

impl ExperimentConfig {
    /// Reads a `key = value` file over the defaults. `#` starts a comment.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| num(key, s))
                .collect()
        }
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "delimiter" => self.load.delimiter = parse_delimiter(value)?,
            "header" => self.load.has_header = parse_bool(key, value)?,
            "model" => self.model = value.parse()?,
            "factors" => self.train.factors = num(key, value)?,
            "mlp-layers" => self.train.mlp_layers = list(key, value)?,
            "lr" => self.train.learning_rate = num(key, value)?,
            "batch-size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "test-fraction" => self.train.test_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sizes" => self.sizes = parse_sizes(value)?,
            "per-size" => self.per_size = num(key, value)?,
            "max-attempts" => self.max_attempts = num(key, value)?,
            "strategies" => {
                self.strategies = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "ndcg-n" => self.ndcg_n = num(key, value)?,
            "mse-paper-literal" => self.mse_group_scaled = parse_bool(key, value)?,
            "threads" => self.threads = Some(num(key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => {
                self.checkpoints = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "groups" => self.groups = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut train = self.train.clone();
        train.seed = 0;
        train.validate()?;
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must not be empty".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Config("group sizes must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must not be empty".into()));
        }
        if self.ndcg_n == 0 || self.ndcg_n > crate::groups::EVAL_ITEMS {
            return Err(Error::Config(format!(
                "ndcg-n must lie in 1..={}",
                crate::groups::EVAL_ITEMS
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max-attempts must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        let mut seen = HashSet::new();
        let paths = self
            .dataset
            .iter()
            .chain(&self.out)
            .chain(&self.checkpoints)
            .chain(&self.groups);
        for p in paths {
            if !seen.insert(p) {
                return Err(Error::Config(format!("path {} is used twice", p.display())));
            }
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Split)
    }

    pub fn groups_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Groups)
    }

    /// Training settings with the derived training seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: stage_seed(self.seed, Stage::Train),
            ..self.train.clone()
        }
    }

    /// Canonical `key=value` listing of every setting that can change results.
    pub fn canonical(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let t = &self.train;
        let lines = [
            (
                "dataset",
                self.dataset
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("delimiter", format!("{:?}", self.load.delimiter)),
            ("header", self.load.has_header.to_string()),
            ("model", self.model.to_string()),
            ("factors", t.factors.to_string()),
            (
                "mlp-layers",
                join(
                    &t.mlp_layers
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>(),
                ),
            ),
            ("lr", format!("{:e}", t.learning_rate)),
            ("batch-size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("test-fraction", format!("{:e}", t.test_fraction)),
            ("seed", self.seed.to_string()),
            (
                "sizes",
                join(&self.sizes.iter().map(|x| x.to_string()).collect::<Vec<_>>()),
            ),
            ("per-size", self.per_size.to_string()),
            ("max-attempts", self.max_attempts.to_string()),
            (
                "strategies",
                join(
                    &self
                        .strategies
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>(),
                ),
            ),
            ("ndcg-n", self.ndcg_n.to_string()),
            ("mse-paper-literal", self.mse_group_scaled.to_string()),
            (
                "checkpoint",
                join(
                    &self
                        .checkpoints
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>(),
                ),
            ),
            (
                "groups",
                self.groups
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 8 bytes of the SHA-256 of [`canonical`](Self::canonical), as hex.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Accepts a single character or one of `tab`, `space`, `whitespace`, `comma`.
pub fn parse_delimiter(value: &str) -> Result<char> {
    match value {
        "tab" | "\\t" => Ok('\t'),
        "space" | "whitespace" => Ok(' '),
        "comma" => Ok(','),
        _ => {
            let mut chars = value.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(Error::Config(format!(
                    "delimiter must be one character, got {value:?}"
                ))),
            }
        }
    }
}

/// Comma list with optional inclusive ranges, e.g. `2-4,6` or `2..10`.
pub fn parse_sizes(value: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse sizes {value:?}"));
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let range = part.split_once("..").or_else(|| part.split_once('-'));
        match range {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b
                    .trim()
                    .trim_start_matches('=')
                    .parse()
                    .map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}
