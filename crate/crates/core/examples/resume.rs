//! Stopping halfway, saving, loading and continuing gives the same bytes as
//! an uninterrupted run.

use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::model::{HiVt5Config, HiVt5Model, Vocab};
use hivt5::training::{checkpoint_bytes, checkpoint_from_bytes, parse_header, qa_sources, TrainConfig, Trainer};

fn main() -> hivt5::Result<()> {
    let syn = SyntheticConfig { n_docs: 20, min_pages: 2, max_pages: 4, seed: 40, ..Default::default() };
    let corpus = generate_synthetic(&syn)?;
    let vocab = Vocab::build(syn.lexicon().iter().map(String::as_str), 8);
    let config = HiVt5Config { d_model: 32, page_tokens: 2, page_len: 48, decoder_budget: 40, n_sentinels: 8, ..Default::default() };
    let fresh = || -> hivt5::Result<Trainer> { Trainer::new(HiVt5Model::new(config.clone(), vocab.clone(), 40)?, TrainConfig::default(), 40) };

    let mut straight = fresh()?;
    let sources = qa_sources(&straight.model, &corpus, None)?;
    straight.train_stage(&sources, 60)?;

    let mut first = fresh()?;
    first.train_stage(&sources, 30)?;
    let saved = checkpoint_bytes(&first)?;
    let (header, _) = parse_header(&saved)?;
    println!("saved at step {} ({} stage, {} blobs, {} bytes)", header.step, header.stage.unwrap(), header.blobs.len(), saved.len());
    drop(first);

    let mut resumed = checkpoint_from_bytes(&saved)?;
    resumed.train_stage(&sources, 60)?;
    let (a, b) = (checkpoint_bytes(&straight)?, checkpoint_bytes(&resumed)?);
    println!("uninterrupted {} bytes, resumed {} bytes, identical: {}", a.len(), b.len(), a == b);
    assert_eq!(a, b);
    Ok(())
}
