use hivt5::corpus::{generate_synthetic, SyntheticConfig};
use hivt5::model::{HiVt5Config, HiVt5Model, PageInput, Vocab};
use hivt5::nn::ParamGroup;
use hivt5::training::{full_item, qa_losses, qa_sources};
use hivt5::{no_grad, Rng, Tensor};

fn tiny_model(seed: u64) -> (HiVt5Model, hivt5::corpus::Corpus) {
    let syn = SyntheticConfig {
        n_docs: 1,
        min_pages: 2,
        max_pages: 2,
        tokens_per_page: 6,
        questions_per_doc: 1,
        n_filler_words: 8,
        n_keys: 4,
        n_values: 4,
        raster_size: 16,
        seed,
        ..Default::default()
    };
    let corpus = generate_synthetic(&syn).unwrap();
    let vocab = Vocab::build(syn.lexicon().iter().map(String::as_str), 2);
    let config = HiVt5Config {
        d_model: 8,
        n_enc_layers: 2,
        n_dec_layers: 2,
        n_heads: 2,
        d_ff: 16,
        page_tokens: 2,
        page_len: 24,
        decoder_budget: 8,
        max_pages: 4,
        patch_size: 8,
        n_sentinels: 2,
        ..Default::default()
    };
    let mut model = HiVt5Model::new(config, vocab, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0x5eed);
    for id in [model.head.gain, model.head.bias] {
        let n = model.store.get(id).numel();
        model.store.set_data(id, (0..n).map(|_| rng.normal()).collect()).unwrap();
    }
    (model, corpus)
}

/// Worst relative error between the backward pass and central differences
/// over up to `per_tensor` coordinates of every listed parameter.
fn worst_error(model: &mut HiVt5Model, params: &[hivt5::nn::ParamId], per_tensor: usize, loss: &dyn Fn(&HiVt5Model) -> Tensor) -> f64 {
    model.store.zero_grad();
    loss(model).backward().unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &id in params {
        let t = model.store.get(id);
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        let original = t.to_vec();
        let step = (original.len() / per_tensor).max(1);
        for i in (0..original.len()).step_by(step) {
            let mut eval = |delta: f64| {
                let mut d = original.clone();
                d[i] += delta;
                model.store.set_data(id, d).unwrap();
                no_grad(|| loss(model).item())
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(err);
        }
        model.store.set_data(id, original).unwrap();
    }
    worst
}

#[test]
fn two_layer_encoder_gradients_match_finite_differences() {
    let (mut model, corpus) = tiny_model(1);
    let page = PageInput::build(&model.vocab, &model.config, &corpus.samples[0].question, &corpus.documents[0].pages[0], 0).unwrap();
    let mut rng = Rng::new(9);
    let n = model.config.page_tokens * model.config.d_model;
    let probe = Tensor::new((0..n).map(|_| rng.normal()).collect(), &[model.config.page_tokens, model.config.d_model]).unwrap();
    let params = model.group_params(ParamGroup::Encoder);
    assert!(!params.is_empty());
    let loss = |m: &HiVt5Model| m.encode_page(&page).unwrap().vectors.mul(&probe).unwrap().sum();
    let err = worst_error(&mut model, &params, 6, &loss);
    assert!(err < 1e-5, "worst relative error {err:.3e}");
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let (mut model, corpus) = tiny_model(2);
    let item = full_item(&qa_sources(&model, &corpus, None).unwrap()[0]);
    let lambda = model.config.page_loss_weight;
    let params: Vec<_> = model.store.ids().collect();
    let loss = |m: &HiVt5Model| {
        let (a, p) = qa_losses(m, &item).unwrap();
        a.add(&p.scale(lambda)).unwrap()
    };
    let err = worst_error(&mut model, &params, 4, &loss);
    assert!(err < 1e-5, "worst relative error {err:.3e}");
}
