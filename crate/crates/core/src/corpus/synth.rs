//! Deterministic synthetic multi-page corpora.
//!
//! Pages are grids of filler words (`w*`). Each question plants a key token
//! (`k*`) immediately followed by a value token (`v*`) on one uniformly
//! chosen page and asks for the value. Answers are therefore single OCR
//! tokens, found verbatim on the answer page.

use serde::{Deserialize, Serialize};

use super::types::{Corpus, Document, GrayImage, OcrToken, Page, QaSample, Split, MAX_DOCUMENT_PAGES};
use crate::error::{Error, Result};
use crate::nn::BBox;
use crate::rng::Rng;

pub const GRID_COLUMNS: usize = 4;
/// Grid height used when pages carry no filler at all.
pub const EMPTY_PAGE_ROWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub min_pages: usize,
    pub max_pages: usize,
    /// Filler tokens per page; 0 leaves only the planted pairs.
    pub tokens_per_page: usize,
    pub questions_per_doc: usize,
    pub n_filler_words: usize,
    pub n_keys: usize,
    pub n_values: usize,
    /// Fraction of questions phrased with the word "document".
    pub ambiguous_fraction: f64,
    /// Side of the square page raster; 0 disables images.
    pub raster_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 200,
            min_pages: 1,
            max_pages: 20,
            tokens_per_page: 28,
            questions_per_doc: 2,
            n_filler_words: 60,
            n_keys: 40,
            n_values: 40,
            ambiguous_fraction: 0.0,
            raster_size: 32,
            seed: 0,
        }
    }
}

pub fn filler_word(i: usize) -> String {
    format!("w{i}")
}

pub fn key_word(i: usize) -> String {
    format!("k{i}")
}

pub fn value_word(i: usize) -> String {
    format!("v{i}")
}

pub fn question_text(key: &str, ambiguous: bool) -> String {
    if ambiguous {
        format!("What is {key} in this document?")
    } else {
        format!("What is {key}?")
    }
}

impl SyntheticConfig {
    /// Every word the generator can emit (OCR, questions, answers).
    pub fn lexicon(&self) -> Vec<String> {
        let mut words: Vec<String> = ["what", "is", "in", "this", "document", "?"].iter().map(|s| s.to_string()).collect();
        words.extend((0..self.n_filler_words).map(filler_word));
        words.extend((0..self.n_keys).map(key_word));
        words.extend((0..self.n_values).map(value_word));
        words
    }

    fn check(&self, page_limit: Option<usize>) -> Result<()> {
        if self.min_pages == 0 || self.min_pages > self.max_pages {
            return Err(Error::Config(format!(
                "pages range [{}, {}] is empty or starts at 0",
                self.min_pages, self.max_pages
            )));
        }
        if let Some(limit) = page_limit {
            if self.max_pages > limit {
                return Err(Error::Config(format!(
                    "pages range [{}, {}] exceeds [1, {limit}]",
                    self.min_pages, self.max_pages
                )));
            }
        }
        if self.questions_per_doc > self.n_keys {
            return Err(Error::Config(format!(
                "{} keys cannot stay unique across {} questions per document",
                self.n_keys, self.questions_per_doc
            )));
        }
        if self.questions_per_doc > 0 && self.n_values == 0 {
            return Err(Error::Config("n_values must be positive".into()));
        }
        if self.tokens_per_page > 0 && self.n_filler_words == 0 {
            return Err(Error::Config("n_filler_words must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return Err(Error::Config("ambiguous_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generates a corpus whose documents have between 1 and 20 pages.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Corpus> {
    config.check(Some(MAX_DOCUMENT_PAGES))?;
    generate(config)
}

/// Like [`generate_synthetic`] but allows documents longer than 20 pages,
/// to be cut down by construction.
pub fn generate_raw(config: &SyntheticConfig) -> Result<Corpus> {
    config.check(None)?;
    generate(config)
}

fn cell_box(cell: usize, rows: usize) -> BBox {
    let (r, c) = (cell / GRID_COLUMNS, cell % GRID_COLUMNS);
    let w = 1.0 / GRID_COLUMNS as f64;
    let h = 1.0 / rows as f64;
    BBox::new(
        (c as f64 + 0.1) * w,
        (r as f64 + 0.2) * h,
        (c as f64 + 0.9) * w,
        (r as f64 + 0.8) * h,
    )
}

fn render(tokens: &[OcrToken], size: usize) -> GrayImage {
    let mut img = GrayImage::filled(size, size, 255);
    for t in tokens {
        let to_px = |v: f64| ((v * size as f64) as usize).min(size);
        for row in to_px(t.bbox.y0)..to_px(t.bbox.y1) {
            for col in to_px(t.bbox.x0)..to_px(t.bbox.x1) {
                img.pixels[row * size + col] = 40;
            }
        }
    }
    img
}

fn generate(config: &SyntheticConfig) -> Result<Corpus> {
    let mut rng = Rng::new(config.seed).fork("synthetic-corpus");
    let mut corpus = Corpus::default();
    for d in 0..config.n_docs {
        let n_pages = rng.range_inclusive(config.min_pages, config.max_pages);
        let keys = rng.sample_distinct(config.n_keys, config.questions_per_doc);
        // (page, key, value) per question
        let plants: Vec<(usize, usize, usize)> = keys
            .iter()
            .map(|&k| (rng.below(n_pages), k, rng.below(config.n_values)))
            .collect();
        let doc_id = format!("doc{d:05}");
        let mut pages = Vec::with_capacity(n_pages);
        for p in 0..n_pages {
            let on_page: Vec<_> = plants.iter().filter(|pl| pl.0 == p).collect();
            let cells = if config.tokens_per_page == 0 {
                EMPTY_PAGE_ROWS * GRID_COLUMNS
            } else {
                config.tokens_per_page.max(2 * on_page.len() * GRID_COLUMNS / (GRID_COLUMNS - 1) + GRID_COLUMNS)
            };
            let rows = cells.div_ceil(GRID_COLUMNS);
            let mut words: Vec<Option<String>> = (0..rows * GRID_COLUMNS)
                .map(|c| (c < config.tokens_per_page).then(|| filler_word(rng.below(config.n_filler_words))))
                .collect();
            let mut taken = vec![false; words.len()];
            for &&(_, k, v) in &on_page {
                // key and value share a row so the value sits right after the key
                let cell = loop {
                    let c = rng.below(words.len());
                    if c % GRID_COLUMNS != GRID_COLUMNS - 1 && !taken[c] && !taken[c + 1] {
                        break c;
                    }
                };
                taken[cell] = true;
                taken[cell + 1] = true;
                words[cell] = Some(key_word(k));
                words[cell + 1] = Some(value_word(v));
            }
            let tokens: Vec<OcrToken> = words
                .into_iter()
                .enumerate()
                .filter_map(|(c, w)| w.map(|text| OcrToken { text, bbox: cell_box(c, rows) }))
                .collect();
            let image = (config.raster_size > 0).then(|| render(&tokens, config.raster_size));
            pages.push(Page { tokens, image });
        }
        for &(p, k, v) in &plants {
            let ambiguous = rng.bernoulli(config.ambiguous_fraction);
            corpus.samples.push(QaSample {
                question: question_text(&key_word(k), ambiguous),
                answers: vec![value_word(v)],
                doc_id: doc_id.clone(),
                answer_page_idx: p,
                split: Split::Train,
            });
        }
        corpus.documents.push(Document { id: doc_id, pages });
    }
    Ok(corpus)
}
