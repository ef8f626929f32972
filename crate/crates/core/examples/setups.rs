//! The four evaluation setups on 20-page documents, broken down by the page
//! holding the answer.

use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::evaluation::{evaluate, SetupKind};
use hivt5::model::{HiVt5Config, HiVt5Model, Vocab};
use hivt5::training::{pretrain_pages, qa_sources, TrainConfig, Trainer};

fn main() -> hivt5::Result<()> {
    let base = SyntheticConfig { n_keys: 10, n_values: 40, ..Default::default() };
    let short = generate_synthetic(&SyntheticConfig { n_docs: 100, min_pages: 2, max_pages: 4, seed: 20, ..base.clone() })?;
    let long = generate_synthetic(&SyntheticConfig { n_docs: 200, min_pages: 20, max_pages: 20, questions_per_doc: 1, seed: 21, ..base.clone() })?;
    let eval = generate_synthetic(&SyntheticConfig { n_docs: 100, min_pages: 20, max_pages: 20, questions_per_doc: 1, seed: 22, ..base.clone() })?;

    let vocab = Vocab::build(base.lexicon().iter().map(String::as_str), 32);
    let config = HiVt5Config { d_model: 64, page_tokens: 4, page_len: 64, decoder_budget: 80, ..Default::default() };
    let mut t = Trainer::new(HiVt5Model::new(config, vocab, 20)?, TrainConfig::default(), 20)?;
    t.pretrain(&pretrain_pages(&t.model, &short, None)?, 300)?;
    t.train_stage(&qa_sources(&t.model, &short, None)?, 1500)?;
    t.finetune(&qa_sources(&t.model, &long, None)?, 300)?;

    // a 256-token budget covers roughly the first eight pages once merged
    let budget = 256;
    let buckets = [(0, 5), (5, 10), (10, 15), (15, 20)];
    print!("{:<14}{:>9}{:>9}{:>9}", "setup", "exact", "anls", "page");
    for (lo, hi) in buckets {
        print!("{:>10}", format!("p{}-{}", lo + 1, hi));
    }
    println!();
    for setup in SetupKind::ALL {
        let e = evaluate(&t.model, &eval, None, setup, budget)?;
        print!("{:<14}{:>9.3}{:>9.3}{:>9.3}", setup.name(), e.report.accuracy, e.report.anls, e.report.page_accuracy);
        for (lo, hi) in buckets {
            let rows: Vec<_> = e.results.iter().filter(|r| (lo..hi).contains(&r.answer_page)).collect();
            let acc = rows.iter().filter(|r| r.exact).count() as f64 / rows.len().max(1) as f64;
            print!("{acc:>10.3}");
        }
        println!();
    }
    Ok(())
}
