use super::*;
use crate::corpus::{generate_synthetic, Corpus, SyntheticConfig};
use crate::model::{HiVt5Config, HiVt5Model, Vocab};
use crate::nn::ParamGroup;
use crate::tensor::no_grad;
use crate::Error;

fn tiny_config() -> HiVt5Config {
    HiVt5Config {
        d_model: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_ff: 32,
        page_tokens: 2,
        page_len: 32,
        decoder_budget: 64,
        max_pages: 6,
        patch_size: 8,
        n_sentinels: 4,
        ..Default::default()
    }
}

fn corpus(n_docs: usize, pages: usize, seed: u64) -> (Corpus, Vocab) {
    let syn = SyntheticConfig {
        n_docs,
        min_pages: pages,
        max_pages: pages,
        tokens_per_page: 8,
        questions_per_doc: 1,
        raster_size: 16,
        seed,
        ..Default::default()
    };
    let c = generate_synthetic(&syn).unwrap();
    (c, Vocab::build(syn.lexicon().iter().map(String::as_str), 4))
}

fn trainer(config: HiVt5Config, n_docs: usize, pages: usize, seed: u64) -> (Trainer, Corpus) {
    let (c, v) = corpus(n_docs, pages, seed);
    let model = HiVt5Model::new(config, v, seed).unwrap();
    let train = TrainConfig {
        batch_size: 2,
        optimizer: AdamWConfig {
            lr: 3e-3,
            warmup_steps: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    (Trainer::new(model, train, seed).unwrap(), c)
}

#[test]
fn initial_answer_loss_near_uniform() {
    let (t, c) = trainer(tiny_config(), 6, 2, 1);
    let sources = qa_sources(&t.model, &c, None).unwrap();
    let ln_v = (t.model.config.vocab_size as f64).ln();
    let mean = no_grad(|| {
        sources
            .iter()
            .map(|s| qa_losses(&t.model, &full_item(s)).unwrap().0.item())
            .sum::<f64>()
    }) / sources.len() as f64;
    assert!((mean - ln_v).abs() <= 0.1 * ln_v, "{mean} vs ln V = {ln_v}");
}

#[test]
fn initial_page_loss_is_log_of_candidates() {
    for (all_slots, want) in [(false, 2f64.ln()), (true, 6f64.ln())] {
        let cfg = HiVt5Config {
            page_loss_all_slots: all_slots,
            ..tiny_config()
        };
        let (t, c) = trainer(cfg, 3, 2, 2);
        for s in qa_sources(&t.model, &c, None).unwrap() {
            let page = no_grad(|| qa_losses(&t.model, &full_item(&s)).unwrap().1.item());
            assert!((page - want).abs() < 1e-9, "{page} vs {want}");
        }
    }
}

#[test]
fn zero_page_weight_leaves_head_without_gradient() {
    let cfg = HiVt5Config {
        page_loss_weight: 0.0,
        ..tiny_config()
    };
    let (mut t, c) = trainer(cfg, 3, 2, 3);
    // decay alone would move the head's matrix
    t.train.optimizer.weight_decay = 0.0;
    let sources = qa_sources(&t.model, &c, None).unwrap();
    let before = group_digests(&t.model.store, ParamGroup::PageHead);
    t.train_stage(&sources, 3).unwrap();
    assert_eq!(group_digests(&t.model.store, ParamGroup::PageHead), before);
}

#[test]
fn gradient_reaches_coordinate_tables() {
    let (t, c) = trainer(tiny_config(), 2, 2, 4);
    let src = &qa_sources(&t.model, &c, None).unwrap()[0];
    let (answer, _) = qa_losses(&t.model, &full_item(src)).unwrap();
    answer.backward().unwrap();
    for name in ["embed.x", "embed.y", "embed.tokens", "page_tokens", "visual.proj"] {
        let g = t.model.store.get(t.model.store.find(name).unwrap()).grad().unwrap();
        assert!(g.iter().any(|v| *v != 0.0), "{name} got no gradient");
    }
}

#[test]
fn memorizes_a_handful_of_questions() {
    let (mut t, c) = trainer(tiny_config(), 3, 2, 5);
    t.train.batch_size = 3;
    let sources = qa_sources(&t.model, &c, None).unwrap();
    let log = t.train_stage(&sources, 300).unwrap();
    let first = log[0].answer_loss;
    let last: f64 = log[log.len() - 10..].iter().map(|r| r.answer_loss).sum::<f64>() / 10.0;
    assert!(last < 0.1 * first, "loss went from {first} to {last}");
}

#[test]
fn pretraining_lowers_denoise_loss() {
    let (mut t, c) = trainer(tiny_config(), 4, 2, 6);
    let pages = pretrain_pages(&t.model, &c, None).unwrap();
    let log = t.pretrain(&pages, 150).unwrap();
    let head: f64 = log[..10].iter().map(|r| r.answer_loss).sum::<f64>() / 10.0;
    let tail: f64 = log[log.len() - 10..].iter().map(|r| r.answer_loss).sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
    assert!(log.iter().all(|r| r.page_loss == 0.0 && r.stage == Stage::Pretrain));
}

#[test]
fn finetuning_never_touches_the_encoder() {
    let (mut t, c) = trainer(tiny_config(), 3, 4, 7);
    let sources = qa_sources(&t.model, &c, None).unwrap();
    t.train_stage(&sources, 2).unwrap();
    let enc = group_digests(&t.model.store, ParamGroup::Encoder);
    let dec = group_digests(&t.model.store, ParamGroup::Decoder);
    t.finetune(&sources, 4).unwrap();
    assert_eq!(group_digests(&t.model.store, ParamGroup::Encoder), enc);
    assert_ne!(group_digests(&t.model.store, ParamGroup::Decoder), dec);
}

#[test]
fn finetune_step_refuses_a_trainable_encoder() {
    let (mut t, c) = trainer(tiny_config(), 1, 2, 8);
    let item = full_item(&qa_sources(&t.model, &c, None).unwrap()[0]);
    let err = finetune_step(&mut t.model, &mut t.adam, &t.train.optimizer.clone(), &[item]);
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn stage_order_is_enforced() {
    let (mut t, _) = trainer(tiny_config(), 1, 2, 9);
    assert!(matches!(t.enter(Stage::Finetune), Err(Error::Stage(_))));
    t.enter(Stage::Train).unwrap();
    assert!(matches!(t.enter(Stage::Pretrain), Err(Error::Stage(_))));
    t.enter(Stage::Finetune).unwrap();
    assert!(matches!(t.enter(Stage::Train), Err(Error::Stage(_))));
    assert!(t.model.store.is_frozen(ParamGroup::Encoder));
}

#[test]
fn new_stage_resets_optimizer_and_step() {
    let (mut t, c) = trainer(tiny_config(), 2, 2, 10);
    let pages = pretrain_pages(&t.model, &c, None).unwrap();
    t.pretrain(&pages, 3).unwrap();
    assert_eq!((t.step, t.adam.step), (3, 3));
    t.enter(Stage::Train).unwrap();
    assert_eq!((t.step, t.adam.step), (0, 0));
    assert!(t.adam.m.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (mut t, c) = trainer(tiny_config(), 2, 2, 11);
    t.train_stage(&qa_sources(&t.model, &c, None).unwrap(), 2).unwrap();
    let a = checkpoint_bytes(&t).unwrap();
    assert_eq!(a, checkpoint_bytes(&t).unwrap());
    let back = checkpoint_from_bytes(&a).unwrap();
    assert_eq!(checkpoint_bytes(&back).unwrap(), a);
    assert_eq!(back.stage, Some(Stage::Train));
    assert_eq!(back.rng.state(), t.rng.state());
}

fn assert_same_state(a: &Trainer, b: &Trainer) {
    let (xa, xb) = (checkpoint_bytes(a).unwrap(), checkpoint_bytes(b).unwrap());
    let (ha, ba) = parse_header(&xa).unwrap();
    let (hb, bb) = parse_header(&xb).unwrap();
    assert_eq!(ha, hb);
    for e in &ha.blobs {
        let r = e.offset as usize..e.offset as usize + 8 * e.len as usize;
        assert!(ba[r.clone()] == bb[r], "blob {} differs", e.name);
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (mut straight, c) = trainer(tiny_config(), 3, 3, 12);
    let sources = qa_sources(&straight.model, &c, None).unwrap();
    let mut split = straight.clone();
    straight.train_stage(&sources, 6).unwrap();

    split.train_stage(&sources, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&split, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    resumed.train_stage(&sources, 6).unwrap();
    assert_same_state(&resumed, &straight);
}

#[test]
fn resumed_finetuning_matches_uninterrupted() {
    let (mut straight, c) = trainer(tiny_config(), 3, 3, 13);
    let sources = qa_sources(&straight.model, &c, None).unwrap();
    straight.train_stage(&sources, 2).unwrap();
    let mut split = straight.clone();
    straight.finetune(&sources, 4).unwrap();
    split.finetune(&sources, 2).unwrap();
    let mut resumed = checkpoint_from_bytes(&checkpoint_bytes(&split).unwrap()).unwrap();
    resumed.finetune(&sources, 4).unwrap();
    assert_same_state(&resumed, &straight);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (t, _) = trainer(tiny_config(), 1, 2, 14);
    let good = checkpoint_bytes(&t).unwrap();
    let cases: Vec<Vec<u8>> = vec![
        b"NOTACKPT\n{}\n".to_vec(),
        good[..good.len() - 8].to_vec(),
        String::from_utf8_lossy(&good).replacen("\"format_version\":1", "\"format_version\":9", 1).into_bytes(),
        String::from_utf8_lossy(&good).replacen("param/page_tokens", "param/other", 1).into_bytes(),
    ];
    for bytes in cases {
        assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}

#[test]
fn step_log_has_fixed_columns() {
    let (mut t, c) = trainer(tiny_config(), 2, 2, 15);
    t.train_stage(&qa_sources(&t.model, &c, None).unwrap(), 2).unwrap();
    let csv = step_log_csv(&t.log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,stage,answer_loss,page_loss,lr,wall_ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,train,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 6));
}

#[test]
fn train_config_rejects_bad_values() {
    for bad in [
        TrainConfig { mask_ratio: 0.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig {
            optimizer: AdamWConfig { lr: -1.0, ..Default::default() },
            ..Default::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
