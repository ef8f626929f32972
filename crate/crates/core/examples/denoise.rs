//! Span corruption on one page, then a short layout-aware denoising run.

use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::model::{HiVt5Config, HiVt5Model, Vocab};
use hivt5::training::{make_denoise_example, pretrain_pages, reconstruct, TrainConfig, Trainer};
use hivt5::Rng;

fn main() -> hivt5::Result<()> {
    let syn = SyntheticConfig { n_docs: 40, min_pages: 1, max_pages: 3, seed: 4, ..Default::default() };
    let corpus = generate_synthetic(&syn)?;
    let vocab = Vocab::build(syn.lexicon().iter().map(String::as_str), 32);
    let config = HiVt5Config { d_model: 64, page_tokens: 4, page_len: 64, decoder_budget: 80, ..Default::default() };
    let model = HiVt5Model::new(config, vocab, 4)?;

    let pages = pretrain_pages(&model, &corpus, None)?;
    let page = &pages[0].page;
    let ex = make_denoise_example(&page.ocr, &page.boxes, 0.15, 3.0, &model.vocab, &mut Rng::new(1));
    println!("page:   {}", model.vocab.decode(&page.ocr));
    println!("input:  {}", ex.input_ids.iter().map(|&i| model.vocab.word(i)).collect::<Vec<_>>().join(" "));
    println!("target: {}", ex.target.iter().map(|&i| model.vocab.word(i)).collect::<Vec<_>>().join(" "));
    assert_eq!(reconstruct(&ex, &model.vocab), page.ocr);

    let mut trainer = Trainer::new(model, TrainConfig::default(), 4)?;
    let log = trainer.pretrain(&pages, 300)?;
    for r in log.iter().filter(|r| r.step % 50 == 0 || r.step == 1) {
        println!("step {:>3}  loss {:.3}  lr {:.2e}", r.step, r.answer_loss, r.lr);
    }
    Ok(())
}
