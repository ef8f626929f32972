//! JSON corpus files.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{line_height, sort_reading_order, Corpus, Document, QaSample, CORPUS_FORMAT_VERSION, MAX_DOCUMENT_PAGES};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    format_version: u32,
    documents: Vec<Document>,
    samples: Vec<QaSample>,
}

/// Parses and validates corpus JSON. `max_pages` is forwarded to
/// [`Corpus::validate`]. `origin` names the source in error messages.
pub fn parse_corpus(text: &str, origin: &str, max_pages: Option<usize>) -> Result<Corpus> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: CorpusFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: format!("{origin}: {}", e.path()),
        message: e.inner().to_string(),
    })?;
    if file.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "{origin}: unsupported corpus format_version {} (expected {CORPUS_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let mut corpus = Corpus {
        documents: file.documents,
        samples: file.samples,
    };
    corpus
        .validate(max_pages)
        .map_err(|e| Error::Validation(format!("{origin}: {e}")))?;
    for page in corpus.documents.iter_mut().flat_map(|d| d.pages.iter_mut()) {
        let band = line_height(&page.tokens);
        sort_reading_order(&mut page.tokens, band);
    }
    Ok(corpus)
}

pub fn corpus_to_json(corpus: &Corpus) -> Result<String> {
    let file = CorpusFile {
        format_version: CORPUS_FORMAT_VERSION,
        documents: corpus.documents.clone(),
        samples: corpus.samples.clone(),
    };
    serde_json::to_string(&file).map_err(|e| Error::Validation(format!("cannot serialise corpus: {e}")))
}

/// Reads a constructed corpus (documents of at most 20 pages).
pub fn ingest_corpus(path: &Path) -> Result<Corpus> {
    read_corpus(path, Some(MAX_DOCUMENT_PAGES))
}

pub fn read_corpus(path: &Path, max_pages: Option<usize>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), max_pages)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_atomic(path, corpus_to_json(corpus)?.as_bytes())
}

/// Writes via a temporary file in the target directory and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{OcrToken, Page, Split};
    use crate::nn::BBox;

    fn minimal() -> Corpus {
        Corpus {
            documents: vec![Document {
                id: "d0".into(),
                pages: vec![Page {
                    tokens: vec![OcrToken {
                        text: "total".into(),
                        bbox: BBox::new(0.1, 0.2, 0.3, 0.25),
                    }],
                    image: None,
                }],
            }],
            samples: vec![QaSample {
                question: "What is the total?".into(),
                answers: vec!["total".into()],
                doc_id: "d0".into(),
                answer_page_idx: 0,
                split: Split::Train,
            }],
        }
    }

    #[test]
    fn minimal_round_trip() {
        let c = minimal();
        let text = corpus_to_json(&c).unwrap();
        assert!(text.contains("\"box\":[0.1,0.2,0.3,0.25]"));
        assert_eq!(parse_corpus(&text, "mem", Some(20)).unwrap(), c);
    }

    #[test]
    fn answer_page_out_of_range_rejected() {
        let mut c = minimal();
        c.samples[0].answer_page_idx = 1;
        let text = corpus_to_json(&c).unwrap();
        assert!(matches!(parse_corpus(&text, "mem", Some(20)), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_record_reports_path() {
        let text = r#"{"format_version":1,"documents":[{"id":"a","pages":[{"tokens":[{"text":"x","box":[0,0,1]}]}]}],"samples":[]}"#;
        match parse_corpus(text, "mem", None) {
            Err(Error::Parse { path, .. }) => assert!(path.contains("documents[0].pages[0].tokens[0].box"), "{path}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn atomic_write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/corpus.json");
        write_corpus(&p, &minimal()).unwrap();
        assert_eq!(ingest_corpus(&p).unwrap(), minimal());
    }
}
