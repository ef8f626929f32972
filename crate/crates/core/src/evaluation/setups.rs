//! The oracle, concat, max-confidence and hierarchical evaluation setups.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{exact_match, sample_anls};
use super::report::{build_report, MetricReport};
use crate::corpus::{Corpus, Document, QaSample, Split};
use crate::error::{Error, Result};
use crate::model::vocab::END;
use crate::model::{HiVt5Model, PageInput};
use crate::tensor::no_grad;

pub const ANLS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupKind {
    Oracle,
    Concat,
    MaxConf,
    Hierarchical,
}

impl SetupKind {
    pub const ALL: [SetupKind; 4] = [SetupKind::Oracle, SetupKind::Concat, SetupKind::MaxConf, SetupKind::Hierarchical];

    pub fn name(self) -> &'static str {
        match self {
            SetupKind::Oracle => "oracle",
            SetupKind::Concat => "concat",
            SetupKind::MaxConf => "max_conf",
            SetupKind::Hierarchical => "hierarchical",
        }
    }
}

impl fmt::Display for SetupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SetupKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Validation(format!("unknown setup {s:?} (expected oracle, concat, max_conf or hierarchical)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub text: String,
    pub page: usize,
    pub confidence: f64,
}

/// Outcome for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub doc_id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub answer_page: usize,
    pub n_pages: usize,
    pub prediction: String,
    pub predicted_page: usize,
    pub exact: bool,
    pub anls: f64,
    pub page_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub setup: SetupKind,
    pub report: MetricReport,
    pub results: Vec<SampleResult>,
}

/// All pages' OCR in page order (each page already in reading order) as one
/// page, with the source page of every OCR position. The visual features of
/// the first page are kept.
pub fn merge_pages(pages: &[PageInput]) -> (PageInput, Vec<usize>) {
    let mut merged = PageInput {
        ocr: Vec::new(),
        boxes: Vec::new(),
        page_index: 0,
        ..pages[0].clone()
    };
    let mut source = Vec::new();
    for (j, p) in pages.iter().enumerate() {
        merged.ocr.extend_from_slice(&p.ocr);
        merged.boxes.extend_from_slice(&p.boxes);
        source.extend(std::iter::repeat_n(j, p.ocr.len()));
    }
    (merged, source)
}

fn find_subsequence(haystack: &[usize], needle: &[usize]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn single(page: &PageInput) -> Vec<PageInput> {
    vec![PageInput {
        page_index: 0,
        ..page.clone()
    }]
}

/// Runs one setup on a tokenized document. `budget` is the total encoder
/// length of the concatenated page and only affects `concat`.
pub fn predict(model: &HiVt5Model, pages: &[PageInput], answer_page: usize, setup: SetupKind, budget: usize) -> Result<Prediction> {
    if pages.is_empty() {
        return Err(Error::Validation("document has no pages".into()));
    }
    if answer_page >= pages.len() {
        return Err(Error::Index(format!("answer page {answer_page} of a {}-page document", pages.len())));
    }
    let max_len = model.config.max_answer_len + 1;
    no_grad(|| match setup {
        SetupKind::Oracle => {
            let g = model.generate(&single(&pages[answer_page]), max_len)?;
            Ok(Prediction {
                text: g.text,
                page: answer_page,
                confidence: g.confidence,
            })
        }
        SetupKind::Hierarchical => {
            let g = model.generate(pages, max_len)?;
            Ok(Prediction {
                text: g.text,
                page: g.page,
                confidence: g.confidence,
            })
        }
        SetupKind::MaxConf => {
            let mut best: Option<Prediction> = None;
            for (j, p) in pages.iter().enumerate() {
                let g = model.generate(&single(p), max_len)?;
                if best.as_ref().is_none_or(|b| g.confidence > b.confidence) {
                    best = Some(Prediction {
                        text: g.text,
                        page: j,
                        confidence: g.confidence,
                    });
                }
            }
            Ok(best.expect("at least one page"))
        }
        SetupKind::Concat => {
            let (merged, source) = merge_pages(pages);
            let vectors = model.encode_page_with(&merged, budget, None)?.vectors;
            let g = model.generate_encoded(&[vectors], max_len)?;
            let answer: Vec<usize> = g.tokens.iter().copied().filter(|&t| t != END).collect();
            let page = match find_subsequence(&merged.ocr, &answer) {
                Some(pos) => source[pos],
                None => g.page,
            };
            Ok(Prediction {
                text: g.text,
                page,
                confidence: g.confidence,
            })
        }
    })
}

fn score(sample: &QaSample, doc: &Document, p: Prediction) -> SampleResult {
    SampleResult {
        doc_id: sample.doc_id.clone(),
        question: sample.question.clone(),
        answers: sample.answers.clone(),
        answer_page: sample.answer_page_idx,
        n_pages: doc.pages.len(),
        exact: exact_match(&p.text, &sample.answers),
        anls: sample_anls(&p.text, &sample.answers, ANLS_THRESHOLD),
        page_correct: p.page == sample.answer_page_idx,
        prediction: p.text,
        predicted_page: p.page,
    }
}

/// Scores every question of `split` (all questions when `None`). Questions are
/// processed in parallel; results keep corpus order.
pub fn evaluate(model: &HiVt5Model, corpus: &Corpus, split: Option<Split>, setup: SetupKind, budget: usize) -> Result<Evaluation> {
    if budget == 0 {
        return Err(Error::Validation("evaluation budget must be at least 1 token".into()));
    }
    let index = corpus.document_index();
    let samples: Vec<&QaSample> = corpus.samples.iter().filter(|s| split.is_none_or(|sp| s.split == sp)).collect();
    let results = samples
        .par_iter()
        .map(|s| {
            let doc = &corpus.documents[*index
                .get(s.doc_id.as_str())
                .ok_or_else(|| Error::Validation(format!("unknown doc_id {}", s.doc_id)))?];
            let pages = PageInput::for_document(&model.vocab, &model.config, &s.question, doc)?;
            let p = predict(model, &pages, s.answer_page_idx, setup, budget)?;
            Ok(score(s, doc, p))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        setup,
        report: build_report(&results),
        results,
    })
}
