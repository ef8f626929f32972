use std::collections::HashMap;
use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::nn::BBox;

/// Documents are capped at this many pages once constructed.
pub const MAX_DOCUMENT_PAGES: usize = 20;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OcrToken {
    pub text: String,
    pub bbox: BBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OcrTokenRepr {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

impl Serialize for OcrToken {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OcrTokenRepr {
            text: self.text.clone(),
            bbox: self.bbox.as_array(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OcrToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = OcrTokenRepr::deserialize(d)?;
        let [x0, y0, x1, y1] = r.bbox;
        Ok(OcrToken {
            text: r.text,
            bbox: BBox { x0, y0, x1, y1 },
        })
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrayImageRepr {
    h: usize,
    w: usize,
    pixels: String,
}

impl Serialize for GrayImage {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GrayImageRepr {
            h: self.h,
            w: self.w,
            pixels: base64::engine::general_purpose::STANDARD.encode(&self.pixels),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GrayImage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GrayImageRepr::deserialize(d)?;
        let pixels = base64::engine::general_purpose::STANDARD
            .decode(r.pixels.as_bytes())
            .map_err(serde::de::Error::custom)?;
        Ok(GrayImage {
            h: r.h,
            w: r.w,
            pixels,
        })
    }
}

impl GrayImage {
    pub fn filled(h: usize, w: usize, value: u8) -> Self {
        Self {
            h,
            w,
            pixels: vec![value; h * w],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.w + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub tokens: Vec<OcrToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<GrayImage>,
}

impl Page {
    pub fn text_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub pages: Vec<Page>,
}

impl Document {
    /// Identifier of the raw document this one was cut from (the part before
    /// any `#` suffix added by construction).
    pub fn source_id(&self) -> &str {
        source_id(&self.id)
    }
}

pub fn source_id(id: &str) -> &str {
    id.split('#').next().unwrap_or(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSample {
    pub question: String,
    pub answers: Vec<String>,
    pub doc_id: String,
    pub answer_page_idx: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub samples: Vec<QaSample>,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub documents: usize,
    pub pages: usize,
    pub questions: usize,
    pub multi_page_questions: usize,
    pub max_pages: usize,
    pub per_split: Vec<(Split, usize)>,
}

impl CorpusStats {
    pub fn multi_page_fraction(&self) -> f64 {
        if self.questions == 0 {
            0.0
        } else {
            self.multi_page_questions as f64 / self.questions as f64
        }
    }

    pub fn mean_pages(&self) -> f64 {
        if self.documents == 0 {
            0.0
        } else {
            self.pages as f64 / self.documents as f64
        }
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28}{:>10}", "documents", self.documents)?;
        writeln!(f, "{:<28}{:>10}", "pages", self.pages)?;
        writeln!(f, "{:<28}{:>10.2}", "mean pages / document", self.mean_pages())?;
        writeln!(f, "{:<28}{:>10}", "max pages / document", self.max_pages)?;
        writeln!(f, "{:<28}{:>10}", "questions", self.questions)?;
        writeln!(
            f,
            "{:<28}{:>9.2}%",
            "multi-page questions",
            100.0 * self.multi_page_fraction()
        )?;
        writeln!(
            f,
            "{:<28}{:>9.2}%",
            "single-page questions",
            100.0 * (1.0 - self.multi_page_fraction())
        )?;
        for (split, n) in &self.per_split {
            writeln!(f, "{:<28}{:>10}", format!("questions ({split})"), n)?;
        }
        Ok(())
    }
}

impl Corpus {
    pub fn document_index(&self) -> HashMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Checks every structural invariant. `max_pages` bounds document length
    /// (pass `None` for raw, not yet constructed corpora).
    pub fn validate(&self, max_pages: Option<usize>) -> Result<()> {
        let mut ids = HashMap::new();
        for (di, doc) in self.documents.iter().enumerate() {
            let at = format!("documents[{di}] ({})", doc.id);
            if ids.insert(doc.id.as_str(), di).is_some() {
                return Err(Error::Validation(format!("{at}: duplicate document id")));
            }
            if doc.pages.is_empty() {
                return Err(Error::Validation(format!("{at}: document has no pages")));
            }
            if let Some(max) = max_pages {
                if doc.pages.len() > max {
                    return Err(Error::Validation(format!(
                        "{at}: {} pages exceeds the limit of {max}",
                        doc.pages.len()
                    )));
                }
            }
            for (pi, page) in doc.pages.iter().enumerate() {
                for (ti, tok) in page.tokens.iter().enumerate() {
                    tok.bbox
                        .validate()
                        .map_err(|e| Error::Validation(format!("{at}.pages[{pi}].tokens[{ti}]: {e}")))?;
                }
                if let Some(img) = &page.image {
                    if img.pixels.len() != img.h * img.w || img.h == 0 || img.w == 0 {
                        return Err(Error::Validation(format!(
                            "{at}.pages[{pi}].image: {} pixels for {}x{}",
                            img.pixels.len(),
                            img.h,
                            img.w
                        )));
                    }
                }
            }
        }
        for (si, s) in self.samples.iter().enumerate() {
            let at = format!("samples[{si}]");
            if s.answers.is_empty() {
                return Err(Error::Validation(format!("{at}: no answers")));
            }
            let Some(&di) = ids.get(s.doc_id.as_str()) else {
                return Err(Error::Validation(format!("{at}: unknown doc_id {:?}", s.doc_id)));
            };
            let n = self.documents[di].pages.len();
            if s.answer_page_idx >= n {
                return Err(Error::Validation(format!(
                    "{at}: answer_page_idx {} out of range for a {n}-page document",
                    s.answer_page_idx
                )));
            }
        }
        Ok(())
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &QaSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn stats(&self) -> CorpusStats {
        let index = self.document_index();
        let pages = |s: &QaSample| index.get(s.doc_id.as_str()).map(|&i| self.documents[i].pages.len()).unwrap_or(0);
        let mut per_split = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            let n = self.samples_in(split).count();
            if n > 0 {
                per_split.push((split, n));
            }
        }
        CorpusStats {
            documents: self.documents.len(),
            pages: self.documents.iter().map(|d| d.pages.len()).sum(),
            questions: self.samples.len(),
            multi_page_questions: self.samples.iter().filter(|s| pages(s) > 1).count(),
            max_pages: self.documents.iter().map(|d| d.pages.len()).max().unwrap_or(0),
            per_split,
        }
    }
}

/// Band height used when a page has no measurable token height.
pub const DEFAULT_LINE_HEIGHT: f64 = 0.02;

/// Median token height of a page, the quantum for reading-order bands.
pub fn line_height(tokens: &[OcrToken]) -> f64 {
    let mut h: Vec<f64> = tokens.iter().map(|t| t.bbox.y1 - t.bbox.y0).filter(|h| *h > 0.0).collect();
    if h.is_empty() {
        return DEFAULT_LINE_HEIGHT;
    }
    h.sort_by(f64::total_cmp);
    h[h.len() / 2]
}

/// Sorts tokens top-left to bottom-right: by row band (`y0` rounded to a
/// multiple of `band_height`), then by `x0`. The sort is stable.
pub fn sort_reading_order(tokens: &mut [OcrToken], band_height: f64) {
    let band = |t: &OcrToken| (t.bbox.y0 / band_height).round() as i64;
    tokens.sort_by(|a, b| {
        band(a)
            .cmp(&band(b))
            .then(a.bbox.x0.partial_cmp(&b.bbox.x0).unwrap_or(std::cmp::Ordering::Equal))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, x0: f64, y0: f64) -> OcrToken {
        OcrToken {
            text: text.into(),
            bbox: BBox::new(x0, y0, x0 + 0.05, y0 + 0.02),
        }
    }

    #[test]
    fn reading_order_rows_then_columns() {
        let mut t = vec![
            tok("d", 0.5, 0.51),
            tok("b", 0.6, 0.101),
            tok("a", 0.1, 0.105),
            tok("c", 0.1, 0.5),
        ];
        sort_reading_order(&mut t, 0.05);
        let order: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(order, ["a", "b", "c", "d"]);
    }

    #[test]
    fn dense_grid_keeps_row_order() {
        // 200 rows of height 1/200, far thinner than the default band
        let rows = 200;
        let h = 1.0 / rows as f64;
        let grid: Vec<OcrToken> = (0..rows * 4)
            .map(|i| OcrToken {
                text: i.to_string(),
                bbox: BBox::new((i % 4) as f64 * 0.25, (i / 4) as f64 * h, (i % 4) as f64 * 0.25 + 0.2, (i / 4 + 1) as f64 * h),
            })
            .collect();
        let mut shuffled = grid.clone();
        shuffled.reverse();
        let band = line_height(&shuffled);
        sort_reading_order(&mut shuffled, band);
        assert_eq!(shuffled, grid);
    }

    #[test]
    fn source_id_strips_construction_suffix() {
        assert_eq!(source_id("doc7#3"), "doc7");
        assert_eq!(source_id("doc7"), "doc7");
    }
}
