//! One forward pass over a multi-page document: per-page encodings, the
//! concatenated [PAGE] memory, answer logits and page logits.

use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::model::{page_budget, teacher_forcing, HiVt5Config, HiVt5Model, PageInput, Vocab};
use hivt5::no_grad;

fn main() -> hivt5::Result<()> {
    let syn = SyntheticConfig { n_docs: 1, min_pages: 6, max_pages: 6, questions_per_doc: 1, seed: 2, ..Default::default() };
    let corpus = generate_synthetic(&syn)?;
    let vocab = Vocab::build(syn.lexicon().iter().map(String::as_str), 32);
    let config = HiVt5Config { d_model: 32, n_heads: 4, d_ff: 64, page_tokens: 10, page_len: 128, decoder_budget: 200, ..Default::default() };
    println!("M = {} [PAGE] tokens per page; floor(S/P_max) = {}", config.page_tokens, page_budget(config.decoder_budget, config.max_pages)?);
    let model = HiVt5Model::new(config, vocab, 1)?;
    println!("{} parameters in {} tensors", model.store.num_scalars(), model.store.len());

    let sample = &corpus.samples[0];
    let doc = corpus.document(&sample.doc_id).unwrap();
    let pages = PageInput::for_document(&model.vocab, &model.config, &sample.question, doc)?;
    for p in &pages {
        let l = model.layout(p, model.config.page_len)?;
        println!(
            "page {}: {} [PAGE] + {} visual + {} question + {} OCR = {} positions",
            p.page_index, l.page_tokens, l.visual, l.question, l.ocr, l.len()
        );
    }

    let answer = model.vocab.encode(&sample.answers[0]);
    let out = no_grad(|| model.forward_document(&pages, Some(&answer)))?;
    let memory = no_grad(|| model.memory(&out.page_vectors))?;
    println!("D: {:?}", memory.shape());
    println!("answer logits: {:?} for decoder input {:?}", out.answer_logits.unwrap().shape(), teacher_forcing(&answer).0);
    println!("page logits: {:?}", out.page_logits.to_vec().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let g = no_grad(|| model.generate(&pages, 4))?;
    println!("untrained generation: {:?} on page {}", g.text, g.page);
    Ok(())
}
