//! Stage-aware training loop.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::denoise::make_denoise_example;
use super::optim::{AdamState, AdamWConfig};
use super::steps::{cache_encodings, denoise_page_input, finetune_step, pretrain_step, train_step, QaItem, QaLosses};
use crate::corpus::{two_page_window, Corpus, Split};
use crate::error::{Error, Result};
use crate::model::{HiVt5Model, PageInput};
use crate::nn::ParamGroup;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Train,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Train => "train",
            Stage::Finetune => "finetune",
        }
    }

    /// Stages a checkpoint may be in for this stage to start or resume from it
    /// (`None` is a freshly initialised model).
    pub fn accepts(self, previous: Option<Stage>) -> bool {
        match self {
            Stage::Pretrain => matches!(previous, None | Some(Stage::Pretrain)),
            Stage::Train => matches!(previous, None | Some(Stage::Pretrain) | Some(Stage::Train)),
            Stage::Finetune => matches!(previous, Some(Stage::Train) | Some(Stage::Finetune)),
        }
    }

    pub fn expected_predecessors(self) -> &'static str {
        match self {
            Stage::Pretrain => "none or pretrain",
            Stage::Train => "none, pretrain or train",
            Stage::Finetune => "train or finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub mean_span: f64,
    pub pretrain_steps: u64,
    pub train_steps: u64,
    pub finetune_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            batch_size: 8,
            mask_ratio: 0.15,
            mean_span: 3.0,
            pretrain_steps: 500,
            train_steps: 2000,
            finetune_steps: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio {} must lie in (0, 1)", self.mask_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.mean_span.is_nan() || self.mean_span < 1.0 {
            return Err(Error::Config("mean_span must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0 && o.grad_clip >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: Stage,
    pub answer_loss: f64,
    pub page_loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

pub const STEP_LOG_HEADER: &str = "step,stage,answer_loss,page_loss,lr,wall_ms";

impl StepRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.stage, self.answer_loss, self.page_loss, self.lr, self.wall_ms
        )
    }
}

pub fn step_log_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(STEP_LOG_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// One page available for denoising.
#[derive(Debug, Clone)]
pub struct PretrainPage {
    pub page: PageInput,
}

/// One question with its full document, tokenized.
#[derive(Debug, Clone)]
pub struct QaSource {
    pub pages: Vec<PageInput>,
    pub answer: Vec<usize>,
    pub answer_page: usize,
}

/// Every page of every document referenced by `split` (all documents if
/// `split` is `None`).
pub fn pretrain_pages(model: &HiVt5Model, corpus: &Corpus, split: Option<Split>) -> Result<Vec<PretrainPage>> {
    let wanted: HashSet<&str> = match split {
        None => corpus.documents.iter().map(|d| d.id.as_str()).collect(),
        Some(sp) => corpus.samples_in(sp).map(|s| s.doc_id.as_str()).collect(),
    };
    let mut out = Vec::new();
    for doc in &corpus.documents {
        if !wanted.contains(doc.id.as_str()) {
            continue;
        }
        for (i, p) in doc.pages.iter().enumerate() {
            if p.tokens.is_empty() {
                continue;
            }
            out.push(PretrainPage {
                page: PageInput::build(&model.vocab, &model.config, "", p, i)?,
            });
        }
    }
    Ok(out)
}

pub fn qa_sources(model: &HiVt5Model, corpus: &Corpus, split: Option<Split>) -> Result<Vec<QaSource>> {
    let index = corpus.document_index();
    corpus
        .samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .map(|s| {
            let doc = &corpus.documents[*index
                .get(s.doc_id.as_str())
                .ok_or_else(|| Error::Validation(format!("unknown doc_id {}", s.doc_id)))?];
            Ok(QaSource {
                pages: PageInput::for_document(&model.vocab, &model.config, &s.question, doc)?,
                answer: model.vocab.encode(&s.answers[0]),
                answer_page: s.answer_page_idx,
            })
        })
        .collect()
}

/// Two-page view of a source (see `two_page_window`).
pub fn two_page_item(src: &QaSource, rng: &mut Rng) -> QaItem {
    let idx = two_page_window(src.pages.len(), src.answer_page, rng);
    QaItem {
        pages: idx
            .iter()
            .enumerate()
            .map(|(k, &p)| PageInput {
                page_index: k,
                ..src.pages[p].clone()
            })
            .collect(),
        encoded: None,
        answer: src.answer.clone(),
        answer_page: idx.iter().position(|&p| p == src.answer_page).expect("answer page kept"),
    }
}

pub fn full_item(src: &QaSource) -> QaItem {
    QaItem {
        pages: src.pages.clone(),
        encoded: None,
        answer: src.answer.clone(),
        answer_page: src.answer_page,
    }
}

/// Model plus everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: HiVt5Model,
    pub train: TrainConfig,
    /// Stage of the current state; `None` before any training.
    pub stage: Option<Stage>,
    /// Updates completed in the current stage.
    pub step: u64,
    pub seed: u64,
    pub rng: Rng,
    pub adam: AdamState,
    pub log: Vec<StepRecord>,
    finetune_cache: HashMap<usize, QaItem>,
}

impl Trainer {
    pub fn new(model: HiVt5Model, train: TrainConfig, seed: u64) -> Result<Self> {
        train.validate()?;
        let adam = AdamState::new(&model.store);
        Ok(Self {
            model,
            train,
            stage: None,
            step: 0,
            seed,
            rng: Rng::new(seed).fork("training"),
            adam,
            log: Vec::new(),
            finetune_cache: HashMap::new(),
        })
    }

    /// Reassembles a trainer from checkpointed parts.
    pub fn from_parts(model: HiVt5Model, train: TrainConfig, stage: Option<Stage>, step: u64, seed: u64, rng: Rng, adam: AdamState) -> Result<Self> {
        train.validate()?;
        let mut t = Self {
            model,
            train,
            stage,
            step,
            seed,
            rng,
            adam,
            log: Vec::new(),
            finetune_cache: HashMap::new(),
        };
        t.apply_freeze();
        Ok(t)
    }

    fn apply_freeze(&mut self) {
        let frozen = self.stage == Some(Stage::Finetune);
        self.model.store.set_frozen(ParamGroup::Encoder, frozen);
    }

    /// Enters `stage`, checking the stage order. Moving to a new stage resets
    /// the optimizer and the step counter; re-entering the current stage
    /// resumes.
    pub fn enter(&mut self, stage: Stage) -> Result<()> {
        if !stage.accepts(self.stage) {
            return Err(Error::Stage(format!(
                "{stage} needs a model in stage {}, found {}",
                stage.expected_predecessors(),
                self.stage.map_or("none", Stage::name)
            )));
        }
        if self.stage != Some(stage) {
            self.stage = Some(stage);
            self.step = 0;
            self.adam = AdamState::new(&self.model.store);
            self.finetune_cache.clear();
        }
        self.apply_freeze();
        Ok(())
    }

    fn record(&mut self, stage: Stage, losses: QaLosses, lr: f64, started: Instant) -> StepRecord {
        let r = StepRecord {
            step: self.step,
            stage,
            answer_loss: losses.answer,
            page_loss: losses.page,
            lr,
            wall_ms: started.elapsed().as_millis(),
        };
        self.log.push(r.clone());
        r
    }

    /// Denoising updates until the stage has `until` steps.
    pub fn pretrain(&mut self, pages: &[PretrainPage], until: u64) -> Result<Vec<StepRecord>> {
        self.enter(Stage::Pretrain)?;
        if pages.is_empty() {
            return Err(Error::Validation("no pages to pretrain on".into()));
        }
        let mut out = Vec::new();
        while self.step < until {
            let started = Instant::now();
            let mut batch = Vec::with_capacity(self.train.batch_size);
            for _ in 0..self.train.batch_size {
                let p = &pages[self.rng.below(pages.len())].page;
                let ex = make_denoise_example(&p.ocr, &p.boxes, self.train.mask_ratio, self.train.mean_span, &self.model.vocab, &mut self.rng);
                batch.push((denoise_page_input(&ex, p.visual.clone()), ex.target));
            }
            let (loss, lr) = pretrain_step(&mut self.model, &mut self.adam, &self.train.optimizer, &batch)?;
            self.step += 1;
            out.push(self.record(Stage::Pretrain, QaLosses { answer: loss, page: 0.0 }, lr, started));
        }
        Ok(out)
    }

    /// Two-page training updates until the stage has `until` steps.
    pub fn train_stage(&mut self, sources: &[QaSource], until: u64) -> Result<Vec<StepRecord>> {
        self.enter(Stage::Train)?;
        if sources.is_empty() {
            return Err(Error::Validation("no questions to train on".into()));
        }
        let mut out = Vec::new();
        while self.step < until {
            let started = Instant::now();
            let batch: Vec<QaItem> = (0..self.train.batch_size)
                .map(|_| {
                    let src = &sources[self.rng.below(sources.len())];
                    two_page_item(src, &mut self.rng)
                })
                .collect();
            let (losses, lr) = train_step(&mut self.model, &mut self.adam, &self.train.optimizer, &batch)?;
            self.step += 1;
            out.push(self.record(Stage::Train, losses, lr, started));
        }
        Ok(out)
    }

    /// Full-document updates with the encoder frozen until the stage has
    /// `until` steps. Page vectors are computed once per question.
    pub fn finetune(&mut self, sources: &[QaSource], until: u64) -> Result<Vec<StepRecord>> {
        self.enter(Stage::Finetune)?;
        if sources.is_empty() {
            return Err(Error::Validation("no questions to finetune on".into()));
        }
        let mut out = Vec::new();
        while self.step < until {
            let started = Instant::now();
            let mut batch = Vec::with_capacity(self.train.batch_size);
            for _ in 0..self.train.batch_size {
                let k = self.rng.below(sources.len());
                if !self.finetune_cache.contains_key(&k) {
                    let mut item = full_item(&sources[k]);
                    cache_encodings(&self.model, &mut item)?;
                    self.finetune_cache.insert(k, item);
                }
                batch.push(self.finetune_cache[&k].clone());
            }
            let (losses, lr) = finetune_step(&mut self.model, &mut self.adam, &self.train.optimizer, &batch)?;
            self.step += 1;
            out.push(self.record(Stage::Finetune, losses, lr, started));
        }
        Ok(out)
    }
}
