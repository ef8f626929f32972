use super::config::HiVt5Config;
use super::visual::{featurize_patches, PATCH_FEATURES};
use super::vocab::{tokenize, Vocab, QA_TASK};
use crate::corpus::{Document, Page};
use crate::error::Result;
use crate::nn::BBox;

/// Encoder input for one page, before budgeting.
#[derive(Debug, Clone, PartialEq)]
pub struct PageInput {
    /// Task prefix token placed before the question.
    pub task: usize,
    /// Question token ids (without the task prefix).
    pub question: Vec<usize>,
    pub ocr: Vec<usize>,
    pub boxes: Vec<BBox>,
    /// Pre-projection patch features.
    pub visual: Option<Vec<[f64; PATCH_FEATURES]>>,
    pub page_index: usize,
}

impl PageInput {
    /// Tokenizes the question and every OCR word; sub-tokens of one word
    /// share its box. Visual features are attached when the config asks for
    /// them and the page has a raster.
    pub fn build(vocab: &Vocab, config: &HiVt5Config, question: &str, page: &Page, page_index: usize) -> Result<Self> {
        let mut ocr = Vec::new();
        let mut boxes = Vec::new();
        for tok in &page.tokens {
            for w in tokenize(&tok.text) {
                ocr.push(vocab.id(&w));
                boxes.push(tok.bbox);
            }
        }
        let visual = match (&page.image, config.use_visual) {
            (Some(img), true) => Some(featurize_patches(img, config.patch_size)?),
            _ => None,
        };
        Ok(Self {
            task: QA_TASK,
            question: vocab.encode(question),
            ocr,
            boxes,
            visual,
            page_index,
        })
    }

    pub fn for_document(vocab: &Vocab, config: &HiVt5Config, question: &str, doc: &Document) -> Result<Vec<Self>> {
        doc.pages
            .iter()
            .enumerate()
            .map(|(i, p)| Self::build(vocab, config, question, p, i))
            .collect()
    }

    pub fn visual_len(&self) -> usize {
        self.visual.as_ref().map_or(0, Vec::len)
    }
}

/// Segment lengths of an encoded page: `[PAGE] × M`, visual, task prefix +
/// question, OCR (after truncation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub page_tokens: usize,
    pub visual: usize,
    pub question: usize,
    pub ocr: usize,
    pub ocr_dropped: usize,
}

impl SeqLayout {
    pub fn len(&self) -> usize {
        self.page_tokens + self.visual + self.question + self.ocr
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ocr_start(&self) -> usize {
        self.page_tokens + self.visual + self.question
    }
}
