use std::fs;
use std::path::Path;

use hivt5::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION};

const BASE: &str = r#"format_version = 1
seed = 7
n_docs = 8
min_pages = 1
max_doc_pages = 24
tokens_per_page = 6
raster_size = 16
d_model = 16
n_heads = 2
d_ff = 32
page_tokens = 2
page_len = 40
patch_size = 8
n_sentinels = 8
batch_size = 2
warmup_steps = 2
pretrain_steps = 3
train_steps = 4
finetune_steps = 2
eval_split = "all"
eval_budget = 64
"#;

fn setup(dir: &Path, extra: &str) -> String {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, format!("{BASE}out_dir = {:?}\n{extra}", dir.join("out"))).unwrap();
    cfg.display().to_string()
}

fn hivt5(cfg: &str, args: &[&str]) -> i32 {
    let mut all = vec!["hivt5", "-c", cfg];
    all.extend_from_slice(args);
    run(all)
}

#[test]
fn gen_data_is_reproducible_and_refuses_collisions() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (setup(a.path(), ""), setup(b.path(), ""));
    assert_eq!(hivt5(&ca, &["gen-data"]), EXIT_OK);
    assert_eq!(hivt5(&cb, &["gen-data"]), EXIT_OK);
    let raw = |d: &Path| fs::read(d.join("out/raw.json")).unwrap();
    assert_eq!(raw(a.path()), raw(b.path()));
    assert_eq!(hivt5(&ca, &["gen-data"]), EXIT_VALIDATION);
    assert_eq!(hivt5(&ca, &["gen-data", "--force"]), EXIT_OK);
    let echoed = fs::read_to_string(a.path().join("out/gen-data.config.toml")).unwrap();
    assert!(echoed.starts_with("format_version = 1"));
}

#[test]
fn build_leaves_its_input_untouched_and_drops_ambiguous_questions() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "ambiguous_fraction = 0.5\n");
    assert_eq!(hivt5(&cfg, &["gen-data"]), EXIT_OK);
    let before = fs::read(d.path().join("out/raw.json")).unwrap();
    assert_eq!(hivt5(&cfg, &["build"]), EXIT_OK);
    assert_eq!(fs::read(d.path().join("out/raw.json")).unwrap(), before);
    let raw = hivt5::corpus::read_corpus(&d.path().join("out/raw.json"), None).unwrap();
    let built = hivt5::corpus::ingest_corpus(&d.path().join("out/corpus.json")).unwrap();
    let ambiguous = raw.samples.iter().filter(|s| hivt5::corpus::is_ambiguous(&s.question)).count();
    assert!(ambiguous > 0);
    assert_eq!(built.samples.len(), raw.samples.len() - ambiguous);
    assert!(built.documents.iter().all(|doc| doc.pages.len() <= 20));
}

#[test]
fn stage_order_and_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    assert_eq!(hivt5(&cfg, &["gen-data"]), EXIT_OK);
    assert_eq!(hivt5(&cfg, &["build"]), EXIT_OK);
    assert_eq!(hivt5(&cfg, &["pretrain"]), EXIT_OK);
    let pre = d.path().join("out/pretrain.ckpt");
    assert_eq!(hivt5(&cfg, &["finetune", "--finetune-from", pre.to_str().unwrap()]), EXIT_VALIDATION);
    assert_eq!(hivt5(&cfg, &["eval"]), EXIT_RUNTIME);
    assert_eq!(hivt5(&cfg, &["nonsense"]), EXIT_USAGE);
    assert_eq!(hivt5(&cfg, &["eval", "--eval-setup", "beam"]), EXIT_VALIDATION);
    assert_eq!(hivt5(&cfg, &["train", "--d-model", "abc"]), EXIT_USAGE);
    fs::write(d.path().join("bad.toml"), "format_version = 1\nlearning_rate = 3\n").unwrap();
    assert_eq!(run(["hivt5", "-c", d.path().join("bad.toml").to_str().unwrap(), "build"]), EXIT_VALIDATION);
}

#[test]
fn interrupted_training_resumes_to_the_same_checkpoint() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (setup(a.path(), ""), setup(b.path(), ""));
    for c in [&ca, &cb] {
        assert_eq!(hivt5(c, &["gen-data"]), EXIT_OK);
        assert_eq!(hivt5(c, &["build"]), EXIT_OK);
    }
    assert_eq!(hivt5(&ca, &["train"]), EXIT_OK);
    assert_eq!(hivt5(&cb, &["train", "--train-steps", "2"]), EXIT_OK);
    assert_eq!(hivt5(&cb, &["train", "--resume"]), EXIT_OK);
    let ckpt = |d: &Path| fs::read(d.join("out/train.ckpt")).unwrap();
    assert_eq!(ckpt(a.path()), ckpt(b.path()));
    let losses = |d: &Path| -> Vec<String> {
        fs::read_to_string(d.join("out/train_log.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(losses(a.path()), losses(b.path()));
}

#[test]
fn full_pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (setup(a.path(), "checkpoint_every = 2\n"), setup(b.path(), ""));
    for c in [&ca, &cb] {
        for cmd in ["gen-data", "build", "pretrain", "train", "finetune", "eval", "report"] {
            assert_eq!(hivt5(c, &[cmd]), EXIT_OK, "{cmd}");
        }
    }
    for f in ["out/finetune.ckpt", "out/eval/hierarchical/report.json", "out/summary.csv"] {
        assert!(fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn single_page_corpus_makes_oracle_and_hierarchical_agree() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("max_doc_pages = 24", "max_doc_pages = 1");
    fs::write(&cfg, text).unwrap();
    for cmd in ["gen-data", "build", "train"] {
        assert_eq!(hivt5(&cfg, &[cmd]), EXIT_OK, "{cmd}");
    }
    let ckpt = d.path().join("out/train.ckpt");
    for setup in ["oracle", "hierarchical"] {
        assert_eq!(hivt5(&cfg, &["eval", "--eval-setup", setup, "--eval-checkpoint", ckpt.to_str().unwrap()]), EXIT_OK);
    }
    let read = |s: &str| fs::read(d.path().join(format!("out/eval/{s}/report.json"))).unwrap();
    assert_eq!(read("oracle"), read("hierarchical"));
}
