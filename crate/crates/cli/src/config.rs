//! Run configuration: an optional TOML file, overridden field by field by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use dtsl::network::{Architecture, FilterPlan};
use dtsl::train::TrainConfig;

/// Default sentence length in tokens.
pub const DEFAULT_MAX_LEN: usize = 64;

/// Every key the configuration file accepts. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub labeled_ratio: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub w_max: Option<f64>,
    pub t_ramp: Option<f64>,
    pub seed: Option<u64>,
    pub max_len: Option<usize>,
    pub embed_dim: Option<usize>,
    pub dropout: Option<f64>,
    /// Nine convolution widths: shared block A, shared block B, path.
    pub filters: Option<[usize; 9]>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the options below; flags take precedence
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// JSON-lines corpus (`id`, `event`, `text`, `label`)
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Word vectors in word2vec text format
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Report or prediction output
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub labeled_ratio: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub w_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_ramp: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies every flag that was given.
    pub fn overridden_by(mut self, flags: &Flags) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = flags.$field.clone() {
                    self.$field = Some(v);
                })*
            };
        }
        take!(
            corpus, embeddings, checkpoint, out, labeled_ratio, epochs, batch_size, lr, w_max, t_ramp, seed,
            max_len, embed_dim
        );
        self
    }

    /// Config file (if any) with flags applied.
    pub fn resolve(flags: &Flags) -> anyhow::Result<Self> {
        let base = match &flags.config {
            Some(path) => Self::load(path)?,
            None => FileConfig::default(),
        };
        Ok(base.overridden_by(flags))
    }

    pub fn require(&self, field: &str) -> anyhow::Result<&Path> {
        let value = match field {
            "corpus" => &self.corpus,
            "embeddings" => &self.embeddings,
            "checkpoint" => &self.checkpoint,
            "out" => &self.out,
            _ => unreachable!("not a path field: {field}"),
        };
        match value {
            Some(p) => Ok(p),
            None => bail!("{field}: required (pass --{field} or set it in the config file)"),
        }
    }

    /// A path that must already exist.
    pub fn input(&self, field: &str) -> anyhow::Result<&Path> {
        let path = self.require(field)?;
        if !path.exists() {
            bail!("{field}: {} does not exist", path.display());
        }
        Ok(path)
    }

    /// Training configuration; `embed_dim` falls back to the width of the
    /// loaded embedding table.
    pub fn train_config(&self, table_dim: usize) -> anyhow::Result<TrainConfig> {
        let embed_dim = self.embed_dim.unwrap_or(table_dim);
        if embed_dim != table_dim {
            bail!("embed_dim: configured {embed_dim} but the embeddings have dimension {table_dim}");
        }
        let filters = self.filters.map(FilterPlan::from_array).unwrap_or_default();
        let arch = Architecture::new(self.max_len.unwrap_or(DEFAULT_MAX_LEN), embed_dim, dtsl::data::Label::CLASSES)
            .with_filters(filters);
        let defaults = TrainConfig::new(arch);
        let config = TrainConfig {
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            lr: self.lr.unwrap_or(defaults.lr),
            dropout: self.dropout.unwrap_or(defaults.dropout),
            w_max: self.w_max.or(defaults.w_max),
            t_ramp: self.t_ramp.unwrap_or(defaults.t_ramp),
            labeled_ratio: self.labeled_ratio.unwrap_or(defaults.labeled_ratio),
            seed: self.seed.unwrap_or(defaults.seed),
            arch,
        };
        config.validate()?;
        Ok(config)
    }
}
