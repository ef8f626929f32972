//! Raw synthetic documents cut into 20-page windows, filtered and split.

use hivt5::corpus::{
    construct_multipage, corpus_to_json, filter_ambiguous, generate_raw, parse_corpus, split_and_trim, SyntheticConfig,
};
use hivt5::Rng;

fn main() -> hivt5::Result<()> {
    let syn = SyntheticConfig {
        n_docs: 30,
        min_pages: 1,
        max_pages: 45,
        ambiguous_fraction: 0.2,
        seed: 3,
        ..Default::default()
    };
    let raw = generate_raw(&syn)?;
    println!("raw corpus\n{}", raw.stats());

    let rng = Rng::new(3);
    let mut windows = construct_multipage(&raw, 20, &mut rng.fork("construct"));
    let (kept, removed) = filter_ambiguous(std::mem::take(&mut windows.samples));
    windows.samples = kept;
    let built = split_and_trim(&windows, [0.8, 0.1, 0.1], &mut rng.fork("split"))?;
    println!("constructed ({} ambiguous questions removed)\n{}", removed.len(), built.stats());

    let s = &built.samples[0];
    let doc = built.document(&s.doc_id).unwrap();
    let page: Vec<&str> = doc.pages[s.answer_page_idx].text_tokens().collect();
    println!("{:?} -> {:?} on page {} of {}", s.question, s.answers, s.answer_page_idx + 1, doc.id);
    println!("  page text: {}", page.join(" "));

    // the on-disk format round-trips exactly
    let json = corpus_to_json(&built)?;
    assert_eq!(parse_corpus(&json, "memory", Some(20))?, built);
    println!("json: {} bytes, round trip ok", json.len());
    Ok(())
}
