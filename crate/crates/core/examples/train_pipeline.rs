//! The three training stages on a small synthetic corpus: denoising
//! pretraining, two-page training, then full-document finetuning with the
//! encoder frozen.

use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::evaluation::{evaluate, SetupKind};
use hivt5::model::{HiVt5Config, HiVt5Model, Vocab};
use hivt5::nn::ParamGroup;
use hivt5::training::{group_digests, pretrain_pages, qa_sources, save_checkpoint, StepRecord, TrainConfig, Trainer};

fn summarize(stage: &str, log: &[StepRecord]) {
    for chunk in log.chunks(log.len().div_ceil(5)) {
        let n = chunk.len() as f64;
        let a = chunk.iter().map(|r| r.answer_loss).sum::<f64>() / n;
        let p = chunk.iter().map(|r| r.page_loss).sum::<f64>() / n;
        println!("{stage:<9} steps {:>4}-{:<4} answer {a:.3} page {p:.3}", chunk[0].step, chunk[chunk.len() - 1].step);
    }
}

fn main() -> hivt5::Result<()> {
    let base = SyntheticConfig { n_keys: 10, n_values: 40, ..Default::default() };
    let short = generate_synthetic(&SyntheticConfig { n_docs: 100, min_pages: 2, max_pages: 4, seed: 10, ..base.clone() })?;
    let long = generate_synthetic(&SyntheticConfig { n_docs: 200, min_pages: 20, max_pages: 20, questions_per_doc: 1, seed: 11, ..base.clone() })?;
    let held_out = generate_synthetic(&SyntheticConfig { n_docs: 60, min_pages: 20, max_pages: 20, questions_per_doc: 1, seed: 12, ..base.clone() })?;

    let vocab = Vocab::build(base.lexicon().iter().map(String::as_str), 32);
    let config = HiVt5Config { d_model: 64, page_tokens: 4, page_len: 64, decoder_budget: 80, ..Default::default() };
    let mut t = Trainer::new(HiVt5Model::new(config, vocab, 10)?, TrainConfig::default(), 10)?;

    let pages = pretrain_pages(&t.model, &short, None)?;
    summarize("pretrain", &t.pretrain(&pages, 300)?);
    let sources = qa_sources(&t.model, &short, None)?;
    summarize("train", &t.train_stage(&sources, 1200)?);

    let before = evaluate(&t.model, &held_out, None, SetupKind::Hierarchical, 256)?;
    let frozen = group_digests(&t.model.store, ParamGroup::Encoder);
    let sources = qa_sources(&t.model, &long, None)?;
    summarize("finetune", &t.finetune(&sources, 300)?);
    let after = evaluate(&t.model, &held_out, None, SetupKind::Hierarchical, 256)?;
    assert_eq!(frozen, group_digests(&t.model.store, ParamGroup::Encoder));

    println!("held-out 20-page documents before finetuning: exact {:.3} page {:.3}", before.report.accuracy, before.report.page_accuracy);
    println!("                           after finetuning:  exact {:.3} page {:.3}", after.report.accuracy, after.report.page_accuracy);
    let path = std::env::temp_dir().join("hivt5-example-finetune.ckpt");
    save_checkpoint(&t, &path)?;
    println!("checkpoint: {}", path.display());
    Ok(())
}
