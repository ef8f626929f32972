//! [PAGE]-token attention after training: dumps one page's maps as CSV and
//! measures how much attention lands on the planted answer token.

use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::evaluation::{dump_attention, page_attention};
use hivt5::model::{HiVt5Config, HiVt5Model, PageInput, Vocab};
use hivt5::training::{pretrain_pages, qa_sources, TrainConfig, Trainer};

fn main() -> hivt5::Result<()> {
    let base = SyntheticConfig { n_keys: 10, n_values: 40, ..Default::default() };
    let train = generate_synthetic(&SyntheticConfig { n_docs: 100, min_pages: 2, max_pages: 4, seed: 30, ..base.clone() })?;
    let probe = generate_synthetic(&SyntheticConfig { n_docs: 50, min_pages: 1, max_pages: 1, questions_per_doc: 1, seed: 31, ..base.clone() })?;

    let vocab = Vocab::build(base.lexicon().iter().map(String::as_str), 32);
    let config = HiVt5Config { d_model: 64, page_tokens: 4, page_len: 64, decoder_budget: 80, ..Default::default() };
    let mut t = Trainer::new(HiVt5Model::new(config, vocab, 30)?, TrainConfig::default(), 30)?;
    t.pretrain(&pretrain_pages(&t.model, &train, None)?, 300)?;
    t.train_stage(&qa_sources(&t.model, &train, None)?, 1500)?;
    let model = &t.model;

    let mut lift = 0.0;
    let mut top = 0;
    for s in &probe.samples {
        let doc = probe.document(&s.doc_id).unwrap();
        let page = PageInput::build(&model.vocab, &model.config, &s.question, &doc.pages[0], 0)?;
        let answer_pos = page.ocr.iter().position(|&id| id == model.vocab.id(&s.answers[0])).unwrap();
        let (maps, layout) = page_attention(model, &page)?;
        // mean over heads and [PAGE] rows of the last layer, restricted to OCR keys
        let last: Vec<_> = maps.iter().filter(|m| m.layer == model.config.n_enc_layers - 1).collect();
        let mut ocr_mass = vec![0.0; layout.ocr];
        for m in &last {
            for r in 0..m.rows {
                for (k, v) in m.row(r)[layout.ocr_start()..].iter().enumerate() {
                    ocr_mass[k] += v / (m.rows * last.len()) as f64;
                }
            }
        }
        let total: f64 = ocr_mass.iter().sum();
        lift += ocr_mass[answer_pos] / total * layout.ocr as f64;
        let best = (0..layout.ocr).max_by(|&a, &b| ocr_mass[a].total_cmp(&ocr_mass[b])).unwrap();
        top += usize::from(best == answer_pos);
    }
    let n = probe.samples.len();
    println!("answer token: {:.2}x the uniform share of OCR attention; top OCR key on {top}/{n} pages", lift / n as f64);

    let s = &probe.samples[0];
    let page = PageInput::build(&model.vocab, &model.config, &s.question, &probe.document(&s.doc_id).unwrap().pages[0], 0)?;
    let dir = std::env::temp_dir().join("hivt5-example-attention");
    let files = dump_attention(model, &page, &dir)?;
    println!("{} maps written to {}", files.len(), dir.display());
    Ok(())
}
