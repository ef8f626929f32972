//! Hierarchical multi-page question-answering model.

pub mod config;
pub mod hivt5;
pub mod input;
pub mod visual;
pub mod vocab;

pub use config::{page_budget, HiVt5Config};
pub use hivt5::{predict_page, teacher_forcing, Generation, HiVt5Model, ModelOutput, PageEncoding, PageHead};
pub use input::{PageInput, SeqLayout};
pub use visual::{featurize_patches, PATCH_FEATURES};
pub use vocab::{detokenize, tokenize, Vocab};
