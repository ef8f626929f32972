//! Command implementations behind the `hivt5` binary.

use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::corpus::{
    construct_multipage, filter_ambiguous, generate_raw, ingest_corpus, read_corpus, split_and_trim, write_atomic, write_corpus,
    Corpus, Split, MAX_DOCUMENT_PAGES,
};
use crate::error::{Error, Result};
use crate::evaluation::{dump_attention, evaluate, write_report_files, Evaluation, MetricReport, SetupKind};
use crate::model::{HiVt5Model, PageInput, Vocab};
use crate::rng::Rng;
use crate::training::{
    load_checkpoint, pretrain_pages, qa_sources, save_checkpoint, PretrainPage, QaSource, Stage, StepRecord, Trainer,
    STEP_LOG_HEADER,
};

fn refuse_existing(paths: &[&Path], force: bool) -> Result<()> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) if !force => Err(Error::Validation(format!(
            "{} already exists; pass --force to overwrite",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn echo_config(config: &RunConfig, name: &str) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    write_atomic(&config.out_dir.join(format!("{name}.config.toml")), config.to_toml()?.as_bytes())
}

/// Vocabulary over every OCR word, question and answer of a corpus.
pub fn corpus_vocab(corpus: &Corpus, n_sentinels: usize) -> Vocab {
    let words = corpus
        .documents
        .iter()
        .flat_map(|d| d.pages.iter())
        .flat_map(|p| p.tokens.iter().map(|t| t.text.as_str()));
    let questions = corpus
        .samples
        .iter()
        .flat_map(|s| std::iter::once(s.question.as_str()).chain(s.answers.iter().map(String::as_str)));
    Vocab::build(words.chain(questions), n_sentinels)
}

/// Writes the raw synthetic corpus.
pub fn gen_data(config: &RunConfig, force: bool) -> Result<Corpus> {
    let path = config.raw_corpus_path();
    refuse_existing(&[&path], force)?;
    let raw = generate_raw(&config.synthetic_config())?;
    write_corpus(&path, &raw)?;
    echo_config(config, "gen-data")?;
    println!("wrote {}", path.display());
    print!("{}", raw.stats());
    Ok(raw)
}

/// Window construction, ambiguity filter and per-source splits.
pub fn build(config: &RunConfig, force: bool) -> Result<Corpus> {
    let out = config.corpus_path();
    refuse_existing(&[&out], force)?;
    let raw = read_corpus(&config.raw_corpus_path(), None)?;
    let root = Rng::new(config.seed);
    let constructed = construct_multipage(&raw, config.window, &mut root.fork("construct"));
    let (kept, removed) = filter_ambiguous(constructed.samples);
    let filtered = Corpus {
        documents: constructed.documents,
        samples: kept,
    };
    let corpus = split_and_trim(
        &filtered,
        [config.train_ratio, config.val_ratio, config.test_ratio],
        &mut root.fork("split"),
    )?;
    corpus.validate(Some(MAX_DOCUMENT_PAGES))?;
    write_corpus(&out, &corpus)?;
    echo_config(config, "build")?;
    println!("wrote {}", out.display());
    println!("{:<28}{:>10}", "ambiguous questions removed", removed.len());
    print!("{}", corpus.stats());
    Ok(corpus)
}

fn fresh_trainer(config: &RunConfig, corpus: &Corpus) -> Result<Trainer> {
    let vocab = corpus_vocab(corpus, config.n_sentinels);
    let model = HiVt5Model::new(config.model_config(), vocab, config.seed)?;
    Trainer::new(model, config.train_config(), config.seed)
}

/// Loads a checkpoint and adopts the optimizer and schedule settings of
/// `config`; the architecture always comes from the checkpoint.
fn checkpoint_trainer(config: &RunConfig, path: &Path) -> Result<Trainer> {
    let mut t = load_checkpoint(path)?;
    let mut wanted = config.model_config();
    wanted.vocab_size = t.model.config.vocab_size;
    if wanted != t.model.config {
        eprintln!("note: {} was built with a different model config; keeping the checkpoint's", path.display());
    }
    let train = config.train_config();
    train.validate()?;
    t.train = train;
    Ok(t)
}

enum StageData {
    Pages(Vec<PretrainPage>),
    Questions(Vec<QaSource>),
}

fn previous_log(path: &Path, stage: Stage, upto: u64) -> Vec<String> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            let mut f = l.split(',');
            let step = f.next().and_then(|s| s.parse::<u64>().ok());
            let st = f.next();
            st == Some(stage.name()) && step.is_some_and(|s| s <= upto)
        })
        .map(str::to_string)
        .collect()
}

fn write_log(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = format!("{STEP_LOG_HEADER}\n");
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// Runs `stage` to `target` steps, saving checkpoint and step log every
/// `checkpoint_every` steps and at the end.
fn run_stage(config: &RunConfig, t: &mut Trainer, stage: Stage, target: u64, data: &StageData, mut log: Vec<String>) -> Result<Vec<StepRecord>> {
    let ckpt = config.checkpoint_path(stage);
    let log_path = config.step_log_path(stage);
    let every = config.checkpoint_every;
    let mut all = Vec::new();
    t.enter(stage)?;
    loop {
        let until = t.step.checked_div(every).map_or(target, |k| ((k + 1) * every).min(target));
        let records = match (stage, data) {
            (Stage::Pretrain, StageData::Pages(p)) => t.pretrain(p, until)?,
            (Stage::Train, StageData::Questions(q)) => t.train_stage(q, until)?,
            (Stage::Finetune, StageData::Questions(q)) => t.finetune(q, until)?,
            _ => return Err(Error::Contract(format!("wrong data for stage {stage}"))),
        };
        if let Some(r) = records.last() {
            eprintln!("{stage} step {}/{target}: answer_loss {:.4} page_loss {:.4}", r.step, r.answer_loss, r.page_loss);
        }
        log.extend(records.iter().map(StepRecord::csv_line));
        all.extend(records);
        save_checkpoint(t, &ckpt)?;
        write_log(&log_path, &log)?;
        if t.step >= target {
            break;
        }
    }
    println!("wrote {} and {}", ckpt.display(), log_path.display());
    Ok(all)
}

fn train_corpus(config: &RunConfig) -> Result<Corpus> {
    ingest_corpus(&config.corpus_path())
}

/// Stage 1: layout-aware denoising on single pages of the training split.
pub fn pretrain(config: &RunConfig, resume: bool, force: bool) -> Result<Trainer> {
    let corpus = train_corpus(config)?;
    let ckpt = config.checkpoint_path(Stage::Pretrain);
    let (mut t, log) = if resume {
        let t = checkpoint_trainer(config, &ckpt)?;
        let log = previous_log(&config.step_log_path(Stage::Pretrain), Stage::Pretrain, t.step);
        (t, log)
    } else {
        refuse_existing(&[&ckpt], force)?;
        (fresh_trainer(config, &corpus)?, Vec::new())
    };
    echo_config(config, "pretrain")?;
    let pages = pretrain_pages(&t.model, &corpus, Some(Split::Train))?;
    run_stage(config, &mut t, Stage::Pretrain, config.pretrain_steps, &StageData::Pages(pages), log)?;
    Ok(t)
}

/// Stage 2: answer and page losses on two-page views of training questions.
pub fn train(config: &RunConfig, resume: bool, force: bool) -> Result<Trainer> {
    let corpus = train_corpus(config)?;
    let ckpt = config.checkpoint_path(Stage::Train);
    let (mut t, log) = if resume {
        let t = checkpoint_trainer(config, &ckpt)?;
        let log = previous_log(&config.step_log_path(Stage::Train), Stage::Train, t.step);
        (t, log)
    } else {
        refuse_existing(&[&ckpt], force)?;
        let pretrained = config.checkpoint_path(Stage::Pretrain);
        let from: Option<PathBuf> = if !config.train_from.as_os_str().is_empty() {
            Some(config.train_from.clone())
        } else {
            pretrained.exists().then_some(pretrained)
        };
        let t = match from {
            Some(p) => {
                println!("starting from {}", p.display());
                checkpoint_trainer(config, &p)?
            }
            None => fresh_trainer(config, &corpus)?,
        };
        (t, Vec::new())
    };
    echo_config(config, "train")?;
    let sources = qa_sources(&t.model, &corpus, Some(Split::Train))?;
    run_stage(config, &mut t, Stage::Train, config.train_steps, &StageData::Questions(sources), log)?;
    Ok(t)
}

/// Stage 3: full-length documents with the encoder frozen.
pub fn finetune(config: &RunConfig, resume: bool, force: bool) -> Result<Trainer> {
    let corpus = train_corpus(config)?;
    let ckpt = config.checkpoint_path(Stage::Finetune);
    let (mut t, log) = if resume {
        let t = checkpoint_trainer(config, &ckpt)?;
        let log = previous_log(&config.step_log_path(Stage::Finetune), Stage::Finetune, t.step);
        (t, log)
    } else {
        refuse_existing(&[&ckpt], force)?;
        let from = if config.finetune_from.as_os_str().is_empty() {
            config.checkpoint_path(Stage::Train)
        } else {
            config.finetune_from.clone()
        };
        let t = checkpoint_trainer(config, &from)?;
        if t.stage != Some(Stage::Train) {
            return Err(Error::Stage(format!(
                "finetune needs a checkpoint in stage train, {} is in stage {}",
                from.display(),
                t.stage.map_or("none", Stage::name)
            )));
        }
        (t, Vec::new())
    };
    echo_config(config, "finetune")?;
    let sources = qa_sources(&t.model, &corpus, Some(Split::Train))?;
    run_stage(config, &mut t, Stage::Finetune, config.finetune_steps, &StageData::Questions(sources), log)?;
    Ok(t)
}

pub fn eval_dir(config: &RunConfig, setup: SetupKind) -> PathBuf {
    config.out_dir.join("eval").join(setup.name())
}

/// Scores a checkpoint under one setup and writes the report files.
pub fn eval(config: &RunConfig, force: bool) -> Result<Evaluation> {
    let setup: SetupKind = config.eval_setup.parse()?;
    let ckpt = if config.eval_checkpoint.as_os_str().is_empty() {
        config.checkpoint_path(Stage::Finetune)
    } else {
        config.eval_checkpoint.clone()
    };
    if !ckpt.exists() {
        return Err(Error::Io {
            path: ckpt,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    let dir = eval_dir(config, setup);
    refuse_existing(&[&dir.join("report.json")], force)?;
    let model = load_checkpoint(&ckpt)?.model;
    let corpus = ingest_corpus(&config.eval_corpus_path())?;
    let result = evaluate(&model, &corpus, config.split_filter()?, setup, config.eval_budget)?;
    write_report_files(&result, &dir)?;
    write_atomic(&dir.join("config.toml"), config.to_toml()?.as_bytes())?;
    let index = corpus.document_index();
    for (i, r) in result.results.iter().take(config.attention_samples).enumerate() {
        let doc = &corpus.documents[index[r.doc_id.as_str()]];
        let pages = PageInput::for_document(&model.vocab, &model.config, &r.question, doc)?;
        dump_attention(&model, &pages[r.answer_page], &dir.join("attention").join(format!("sample{i}")))?;
    }
    println!("wrote {}", dir.display());
    println!("{}", report_line(setup.name(), &result.report));
    Ok(result)
}

fn report_line(name: &str, r: &MetricReport) -> String {
    format!(
        "{name:<14}{:>8}{:>10.4}{:>10.4}{:>10.4}",
        r.n_samples, r.accuracy, r.anls, r.page_accuracy
    )
}

/// Summarises every `eval/<setup>/report.json` of the output directory into
/// a table and `summary.csv`.
pub fn report(config: &RunConfig) -> Result<Vec<(String, MetricReport)>> {
    let root = config.out_dir.join("eval");
    let entries = std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("report.json").exists()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!("no report.json under {}", root.display())));
    }
    let mut out = Vec::new();
    let mut csv = String::from("setup,n_samples,accuracy,anls,page_accuracy\n");
    println!("{:<14}{:>8}{:>10}{:>10}{:>10}", "setup", "n", "accuracy", "anls", "page acc");
    for d in dirs {
        let path = d.join("report.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rep: MetricReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        println!("{}", report_line(&name, &rep));
        csv.push_str(&format!("{name},{},{},{},{}\n", rep.n_samples, rep.accuracy, rep.anls, rep.page_accuracy));
        out.push((name, rep));
    }
    for (name, rep) in &out {
        println!("\n{name}: per answer page (1-based)");
        for row in &rep.breakdown {
            println!(
                "  page {:>2}  n {:>4}  accuracy {:.3}  anls {:.3}  page acc {:.3}",
                row.answer_page + 1,
                row.n,
                row.accuracy,
                row.anls,
                row.page_accuracy
            );
        }
    }
    write_atomic(&config.out_dir.join("summary.csv"), csv.as_bytes())?;
    Ok(out)
}
