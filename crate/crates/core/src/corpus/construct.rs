//! Dataset construction: page windows, ambiguity filtering, splits and
//! two-page training views.

use std::collections::HashMap;

use super::types::{source_id, Corpus, Document, QaSample, Split};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Cuts every document longer than `window` pages down to a random subset of
/// `window` pages that contains the answer page of the question. Each such
/// question gets its own document `"{id}#{k}"`; page order is preserved and
/// `answer_page_idx` remapped. Documents within the window are untouched.
pub fn construct_multipage(raw: &Corpus, window: usize, rng: &mut Rng) -> Corpus {
    let index = raw.document_index();
    let mut out = Corpus::default();
    let mut kept = vec![false; raw.documents.len()];
    let mut per_doc_count: HashMap<usize, usize> = HashMap::new();
    for s in &raw.samples {
        let di = index[s.doc_id.as_str()];
        let doc = &raw.documents[di];
        if doc.pages.len() <= window {
            if !kept[di] {
                kept[di] = true;
                out.documents.push(doc.clone());
            }
            out.samples.push(s.clone());
            continue;
        }
        let k = per_doc_count.entry(di).or_insert(0);
        let id = format!("{}#{}", doc.id, *k);
        *k += 1;
        let others: Vec<usize> = (0..doc.pages.len()).filter(|&p| p != s.answer_page_idx).collect();
        let mut chosen: Vec<usize> = rng
            .sample_distinct(others.len(), window - 1)
            .into_iter()
            .map(|i| others[i])
            .collect();
        chosen.push(s.answer_page_idx);
        chosen.sort_unstable();
        let answer_page_idx = chosen.iter().position(|&p| p == s.answer_page_idx).expect("answer page kept");
        out.documents.push(Document {
            id: id.clone(),
            pages: chosen.iter().map(|&p| doc.pages[p].clone()).collect(),
        });
        out.samples.push(QaSample {
            doc_id: id,
            answer_page_idx,
            ..s.clone()
        });
    }
    // documents without questions pass through when short
    for (di, doc) in raw.documents.iter().enumerate() {
        if !kept[di] && doc.pages.len() <= window && !raw.samples.iter().any(|s| s.doc_id == doc.id) {
            out.documents.push(doc.clone());
        }
    }
    out
}

/// Whole-word, case-insensitive match on "document".
pub fn is_ambiguous(question: &str) -> bool {
    question
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| w.eq_ignore_ascii_case("document"))
}

pub fn filter_ambiguous(samples: Vec<QaSample>) -> (Vec<QaSample>, Vec<QaSample>) {
    samples.into_iter().partition(|s| !is_ambiguous(&s.question))
}

/// Assigns splits per source document so that no document (or any window cut
/// from it) appears in two splits. Counts are `round(ratio · n)` for train and
/// val, the remainder going to test.
pub fn split_and_trim(corpus: &Corpus, ratios: [f64; 3], rng: &mut Rng) -> Result<Corpus> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut sources: Vec<&str> = Vec::new();
    for d in &corpus.documents {
        let s = source_id(&d.id);
        if !sources.contains(&s) {
            sources.push(s);
        }
    }
    rng.shuffle(&mut sources);
    let n = sources.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let assignment: HashMap<&str, Split> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (*s, split)
        })
        .collect();
    let mut out = corpus.clone();
    for s in &mut out.samples {
        s.split = assignment[source_id(&s.doc_id)];
    }
    Ok(out)
}

/// Page indices of a two-page training view: the answer page plus one
/// uniformly chosen neighbour (only the existing one at either end, none for
/// 1-page documents).
pub fn two_page_window(n_pages: usize, answer_page: usize, rng: &mut Rng) -> Vec<usize> {
    let a = answer_page;
    if n_pages == 1 {
        vec![a]
    } else if a == 0 {
        vec![0, 1]
    } else if a == n_pages - 1 || rng.bernoulli(0.5) {
        vec![a - 1, a]
    } else {
        vec![a, a + 1]
    }
}

/// Two-page training view of a question; see [`two_page_window`].
pub fn shorten_two_pages(sample: &QaSample, document: &Document, rng: &mut Rng) -> (Document, QaSample) {
    let a = sample.answer_page_idx;
    let pages = two_page_window(document.pages.len(), a, rng);
    let view = Document {
        id: document.id.clone(),
        pages: pages.iter().map(|&p| document.pages[p].clone()).collect(),
    };
    let sample = QaSample {
        answer_page_idx: pages.iter().position(|&p| p == a).expect("answer page kept"),
        ..sample.clone()
    };
    (view, sample)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::{prop_assert, prop_assert_eq, proptest};

    use super::*;
    use crate::corpus::synth::{generate_raw, SyntheticConfig};

    fn sample(q: &str) -> QaSample {
        QaSample {
            question: q.into(),
            answers: vec!["x".into()],
            doc_id: "d".into(),
            answer_page_idx: 0,
            split: Split::Train,
        }
    }

    fn raw(n_docs: usize, min_pages: usize, max_pages: usize, seed: u64) -> Corpus {
        generate_raw(&SyntheticConfig {
            n_docs,
            min_pages,
            max_pages,
            tokens_per_page: 6,
            questions_per_doc: 3,
            raster_size: 0,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn page_text(doc: &Document, p: usize) -> Vec<String> {
        doc.pages[p].tokens.iter().map(|t| t.text.clone()).collect()
    }

    #[test]
    fn short_documents_unchanged() {
        let c = raw(4, 5, 5, 1);
        let out = construct_multipage(&c, 20, &mut Rng::new(0));
        assert_eq!(out, c);
    }

    #[test]
    fn long_documents_cut_to_window_with_answer_page() {
        let c = raw(5, 30, 30, 2);
        let out = construct_multipage(&c, 20, &mut Rng::new(0));
        out.validate(Some(20)).unwrap();
        assert_eq!(out.samples.len(), c.samples.len());
        for (orig, new) in c.samples.iter().zip(&out.samples) {
            let d_new = out.document(&new.doc_id).unwrap();
            assert_eq!(d_new.pages.len(), 20);
            let d_old = c.document(&orig.doc_id).unwrap();
            // content check: remapped index addresses the same page
            assert_eq!(page_text(d_new, new.answer_page_idx), page_text(d_old, orig.answer_page_idx));
            assert_eq!(source_id(&new.doc_id), orig.doc_id);
        }
    }

    #[test]
    fn filter_examples() {
        assert!(is_ambiguous("What is the title of the document?"));
        assert!(is_ambiguous("DOCUMENT number?"));
        assert!(!is_ambiguous("What is the date?"));
        assert!(!is_ambiguous("Who signed this documentation?"));
        let (kept, removed) = filter_ambiguous(vec![sample("What is the date?"), sample("Whose document is it?")]);
        assert_eq!(kept.len(), 1);
        assert_eq!(removed.len(), 1);
    }

    #[test]
    fn split_counts_and_disjointness() {
        let c = raw(100, 1, 3, 3);
        let out = split_and_trim(&c, [0.8, 0.1, 0.1], &mut Rng::new(4)).unwrap();
        let mut per_split: HashMap<Split, HashSet<&str>> = HashMap::new();
        for s in &out.samples {
            per_split.entry(s.split).or_default().insert(source_id(&s.doc_id));
        }
        assert_eq!(per_split[&Split::Train].len(), 80);
        assert_eq!(per_split[&Split::Val].len(), 10);
        assert_eq!(per_split[&Split::Test].len(), 10);
        let again = split_and_trim(&c, [0.8, 0.1, 0.1], &mut Rng::new(4)).unwrap();
        assert_eq!(out, again);
        assert!(split_and_trim(&c, [0.8, 0.1, 0.2], &mut Rng::new(4)).is_err());
    }

    #[test]
    fn splits_group_windows_of_one_source() {
        let c = construct_multipage(&raw(10, 25, 25, 5), 20, &mut Rng::new(1));
        let out = split_and_trim(&c, [0.5, 0.25, 0.25], &mut Rng::new(2)).unwrap();
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for s in &out.samples {
            let prev = seen.insert(source_id(&s.doc_id), s.split);
            assert!(prev.is_none() || prev == Some(s.split));
        }
    }

    #[test]
    fn two_page_boundaries() {
        let c = raw(1, 5, 5, 6);
        let doc = &c.documents[0];
        let mut s = c.samples[0].clone();
        let mut rng = Rng::new(0);
        s.answer_page_idx = 0;
        let (v, t) = shorten_two_pages(&s, doc, &mut rng);
        assert_eq!((page_text(&v, 0), page_text(&v, 1), t.answer_page_idx), (page_text(doc, 0), page_text(doc, 1), 0));
        s.answer_page_idx = 4;
        let (v, t) = shorten_two_pages(&s, doc, &mut rng);
        assert_eq!((page_text(&v, 0), page_text(&v, 1), t.answer_page_idx), (page_text(doc, 3), page_text(doc, 4), 1));
    }

    #[test]
    fn two_page_interior_is_balanced() {
        let c = raw(1, 5, 5, 7);
        let mut s = c.samples[0].clone();
        s.answer_page_idx = 2;
        let mut rng = Rng::new(11);
        let previous = (0..4000)
            .filter(|_| shorten_two_pages(&s, &c.documents[0], &mut rng).1.answer_page_idx == 1)
            .count();
        // binomial(4000, 0.5): 4 sigma is about 126
        assert!((previous as i64 - 2000).abs() < 126, "{previous}");
    }

    proptest! {
        #[test]
        fn construction_keeps_answer_and_limit(seed in 0u64..200, pages in 1usize..40) {
            let c = raw(3, pages, pages, seed);
            let out = construct_multipage(&c, 20, &mut Rng::new(seed));
            prop_assert!(out.validate(Some(20)).is_ok());
            for (orig, new) in c.samples.iter().zip(&out.samples) {
                let d = out.document(&new.doc_id).unwrap();
                prop_assert_eq!(d.pages.len(), pages.min(20));
                prop_assert_eq!(page_text(d, new.answer_page_idx), page_text(c.document(&orig.doc_id).unwrap(), orig.answer_page_idx));
            }
        }

        #[test]
        fn filter_partitions(words in proptest::collection::vec("[a-zA-Z]{1,10}", 1..8)) {
            let samples: Vec<_> = words.iter().map(|w| sample(&format!("What {w} document{w}?"))).collect();
            let n = samples.len();
            let (kept, removed) = filter_ambiguous(samples);
            prop_assert_eq!(kept.len() + removed.len(), n);
            prop_assert!(kept.iter().all(|s| !is_ambiguous(&s.question)));
            prop_assert!(removed.iter().all(|s| is_ambiguous(&s.question)));
        }

        #[test]
        fn two_page_view_contains_answer(seed in 0u64..100, n in 1usize..8, a in 0usize..8) {
            let c = raw(1, n, n, seed);
            let mut s = c.samples[0].clone();
            s.answer_page_idx = a % n;
            let (v, t) = shorten_two_pages(&s, &c.documents[0], &mut Rng::new(seed));
            prop_assert_eq!(v.pages.len(), n.min(2));
            prop_assert_eq!(page_text(&v, t.answer_page_idx), page_text(&c.documents[0], s.answer_page_idx));
        }
    }
}
