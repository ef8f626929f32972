//! Document / question data model, corpus files, synthetic generation and
//! dataset construction.

pub mod construct;
pub mod io;
pub mod synth;
pub mod types;

pub use construct::{construct_multipage, filter_ambiguous, is_ambiguous, shorten_two_pages, split_and_trim, two_page_window};
pub use io::{corpus_to_json, ingest_corpus, parse_corpus, read_corpus, write_atomic, write_corpus};
pub use synth::{generate_raw, generate_synthetic, SyntheticConfig};
pub use types::{
    line_height, sort_reading_order, source_id, DEFAULT_LINE_HEIGHT, Corpus, CorpusStats, Document, GrayImage, OcrToken, Page, QaSample, Split,
    MAX_DOCUMENT_PAGES,
};
