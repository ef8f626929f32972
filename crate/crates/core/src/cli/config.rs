//! Flat, versioned run configuration shared by every command.
//!
//! The file is TOML with `format_version` on its first line. Unknown keys are
//! rejected, missing keys take the defaults below, and every key has a
//! matching `--kebab-case` flag that overrides the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::HiVt5Config;
use crate::rng::Rng;
use crate::training::{AdamWConfig, TrainConfig};

pub const RUN_CONFIG_FORMAT_VERSION: u32 = 1;

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr, )*) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        /// One optional flag per config key.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct Overrides {
            $( $(#[doc = $doc])* #[arg(long, global = true, value_name = "VALUE")] pub $field: Option<$ty>, )*
        }

        impl Overrides {
            pub fn apply(&self, config: &mut RunConfig) {
                $( if let Some(v) = &self.$field { config.$field = v.clone(); } )*
            }
        }
    };
}

run_config! {
    /// Config file format; must be the first key.
    format_version: u32 = RUN_CONFIG_FORMAT_VERSION,
    /// Root seed; every subsystem seed is forked from it by name.
    seed: u64 = 0,
    /// Directory for checkpoints, logs, reports and echoed configs.
    out_dir: PathBuf = PathBuf::from("run"),
    /// Raw corpus written by gen-data (empty: `<out_dir>/raw.json`).
    raw_corpus: PathBuf = PathBuf::new(),
    /// Constructed corpus written by build (empty: `<out_dir>/corpus.json`).
    corpus: PathBuf = PathBuf::new(),

    /// Synthetic documents to generate.
    n_docs: usize = 200,
    min_pages: usize = 1,
    /// Longest raw document; longer than `window` gets cut by build.
    max_doc_pages: usize = 20,
    tokens_per_page: usize = 28,
    questions_per_doc: usize = 2,
    n_filler_words: usize = 60,
    n_keys: usize = 10,
    n_values: usize = 40,
    ambiguous_fraction: f64 = 0.0,
    raster_size: usize = 32,

    /// Page window of constructed documents.
    window: usize = 20,
    train_ratio: f64 = 0.8,
    val_ratio: f64 = 0.1,
    test_ratio: f64 = 0.1,

    d_model: usize = 64,
    n_enc_layers: usize = 2,
    n_dec_layers: usize = 2,
    n_heads: usize = 4,
    d_ff: usize = 256,
    page_tokens: usize = 10,
    page_len: usize = 128,
    decoder_budget: usize = 1024,
    max_pages: usize = 20,
    patch_size: usize = 16,
    use_visual: bool = true,
    page_loss_weight: f64 = 1.0,
    page_loss_all_slots: bool = true,
    coord_buckets: usize = 32,
    rel_buckets: usize = 32,
    rel_max_distance: usize = 128,
    max_answer_len: usize = 8,
    n_sentinels: usize = 32,
    token_init_std: f64 = 0.5,
    coord_init_std: f64 = 0.1,

    lr: f64 = 1e-3,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    eps: f64 = 1e-8,
    weight_decay: f64 = 0.01,
    warmup_steps: u64 = 100,
    grad_clip: f64 = 1.0,
    batch_size: usize = 8,
    mask_ratio: f64 = 0.15,
    mean_span: f64 = 3.0,
    pretrain_steps: u64 = 500,
    train_steps: u64 = 2000,
    finetune_steps: u64 = 500,
    /// Save the checkpoint every this many steps (0: only at the end).
    checkpoint_every: u64 = 0,

    /// Checkpoint to start stage 2 from (empty: fresh model, or the
    /// pretrain checkpoint of `out_dir` if it exists).
    train_from: PathBuf = PathBuf::new(),
    /// Checkpoint to finetune (empty: `<out_dir>/train.ckpt`).
    finetune_from: PathBuf = PathBuf::new(),
    /// Checkpoint to evaluate (empty: `<out_dir>/finetune.ckpt`).
    eval_checkpoint: PathBuf = PathBuf::new(),
    /// Corpus to evaluate on (empty: the constructed corpus).
    eval_corpus: PathBuf = PathBuf::new(),
    /// train, val, test or all.
    eval_split: String = "test".into(),
    /// oracle, concat, max_conf or hierarchical.
    eval_setup: String = "hierarchical".into(),
    /// Total encoder length of the concatenated page in the concat setup.
    eval_budget: usize = 512,
    /// Questions whose answer-page attention gets dumped.
    attention_samples: usize = 0,
}

impl RunConfig {
    /// Parses a config file. The first non-blank, non-comment line must set
    /// `format_version`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .unwrap_or("");
        if !first.starts_with("format_version") {
            return Err(Error::Config(format!("{origin}: the first key must be format_version")));
        }
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {}", e.message().trim())))?;
        if config.format_version != RUN_CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{origin}: unsupported format_version {} (expected {RUN_CONFIG_FORMAT_VERSION})",
                config.format_version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The fully resolved config as TOML, `format_version` first.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config encoding: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.window == 0 || self.window > crate::corpus::MAX_DOCUMENT_PAGES {
            return Err(Error::Config(format!("window must lie in 1..={}", crate::corpus::MAX_DOCUMENT_PAGES)));
        }
        if self.eval_budget == 0 {
            return Err(Error::Config("eval_budget must be at least 1".into()));
        }
        self.eval_setup.parse::<crate::evaluation::SetupKind>()?;
        self.split_filter()?;
        Ok(())
    }

    fn or_default(p: &Path, dir: &Path, name: &str) -> PathBuf {
        if p.as_os_str().is_empty() {
            dir.join(name)
        } else {
            p.to_path_buf()
        }
    }

    pub fn raw_corpus_path(&self) -> PathBuf {
        Self::or_default(&self.raw_corpus, &self.out_dir, "raw.json")
    }

    pub fn corpus_path(&self) -> PathBuf {
        Self::or_default(&self.corpus, &self.out_dir, "corpus.json")
    }

    pub fn eval_corpus_path(&self) -> PathBuf {
        if self.eval_corpus.as_os_str().is_empty() {
            self.corpus_path()
        } else {
            self.eval_corpus.clone()
        }
    }

    pub fn checkpoint_path(&self, stage: crate::training::Stage) -> PathBuf {
        self.out_dir.join(format!("{stage}.ckpt"))
    }

    pub fn step_log_path(&self, stage: crate::training::Stage) -> PathBuf {
        self.out_dir.join(format!("{stage}_log.csv"))
    }

    pub fn split_filter(&self) -> Result<Option<crate::corpus::Split>> {
        match self.eval_split.as_str() {
            "all" => Ok(None),
            s => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("eval_split {s:?} must be train, val, test or all"))),
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_docs: self.n_docs,
            min_pages: self.min_pages,
            max_pages: self.max_doc_pages,
            tokens_per_page: self.tokens_per_page,
            questions_per_doc: self.questions_per_doc,
            n_filler_words: self.n_filler_words,
            n_keys: self.n_keys,
            n_values: self.n_values,
            ambiguous_fraction: self.ambiguous_fraction,
            raster_size: self.raster_size,
            seed: Rng::new(self.seed).fork("synthetic").seed(),
        }
    }

    pub fn model_config(&self) -> HiVt5Config {
        HiVt5Config {
            d_model: self.d_model,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size: 0,
            page_tokens: self.page_tokens,
            page_len: self.page_len,
            decoder_budget: self.decoder_budget,
            max_pages: self.max_pages,
            patch_size: self.patch_size,
            use_visual: self.use_visual,
            page_loss_weight: self.page_loss_weight,
            page_loss_all_slots: self.page_loss_all_slots,
            coord_buckets: self.coord_buckets,
            rel_buckets: self.rel_buckets,
            rel_max_distance: self.rel_max_distance,
            max_answer_len: self.max_answer_len,
            n_sentinels: self.n_sentinels,
            token_init_std: self.token_init_std,
            coord_init_std: self.coord_init_std,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: AdamWConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
                warmup_steps: self.warmup_steps,
                grad_clip: self.grad_clip,
            },
            batch_size: self.batch_size,
            mask_ratio: self.mask_ratio,
            mean_span: self.mean_span,
            pretrain_steps: self.pretrain_steps,
            train_steps: self.train_steps,
            finetune_steps: self.finetune_steps,
        }
    }
}
