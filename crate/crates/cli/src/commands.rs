use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use biobridge::baseline::{fit_tfidf, predict_logreg, train_logreg};
use biobridge::bioembed::EmbeddingTable;
use biobridge::corpus::{
    build_embedding_table, corpus_stats, generate_synthetic_with_report, generate_tokenizer_text,
    load_jsonl, save_jsonl, split_corpus, split_corpus_stratified, CharStats, CorpusSplit,
};
use biobridge::encoder::{
    load_checkpoint, predict, save_checkpoint, train, Checkpoint, EncoderConfig, ModelParams,
    TrainConfig, TrainOutcome,
};
use biobridge::metrics::{evaluate, MetricsReport, PredictionSet};
use biobridge::pipeline::{encode_records, encode_stats, EncodeOptions};
use biobridge::preprocess::{load_lexicon, preprocess_records, AbbrevLexicon};
use biobridge::tokenizer::{train_vocab_from_texts, Vocab};
use log::info;
use serde::Serialize;

use crate::config::{config_err, require_file, RunConfig};
use crate::manifest::{write_json, Recorder};

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "dev.jsonl", "test.jsonl"];

fn ensure_out(cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.paths.out)
        .with_context(|| format!("creating {}", cfg.paths.out.display()))
}

pub fn lexicon(cfg: &RunConfig) -> anyhow::Result<AbbrevLexicon> {
    match &cfg.paths.lexicon {
        Some(p) => {
            require_file("paths.lexicon", p)?;
            Ok(load_lexicon(p)?)
        }
        None => Ok(AbbrevLexicon::starter()),
    }
}

pub fn split_paths(cfg: &RunConfig) -> [PathBuf; 3] {
    SPLIT_FILES.map(|f| cfg.out(f))
}

pub fn load_splits(cfg: &RunConfig) -> anyhow::Result<CorpusSplit> {
    let [tr, dv, te] = split_paths(cfg);
    for p in [&tr, &dv, &te] {
        if !p.is_file() {
            return config_err(format!(
                "paths.out: split file `{}` missing; run `preprocess` first",
                p.display()
            ));
        }
    }
    Ok(CorpusSplit {
        train: load_jsonl(&tr)?,
        dev: load_jsonl(&dv)?,
        test: load_jsonl(&te)?,
    })
}

pub fn load_vocab(cfg: &RunConfig) -> anyhow::Result<Vocab> {
    let p = cfg.out("vocab.txt");
    if !p.is_file() {
        return config_err(format!(
            "paths.out: vocabulary `{}` missing; run `train-vocab` first",
            p.display()
        ));
    }
    Ok(Vocab::load(&p)?)
}

pub fn load_table(cfg: &RunConfig) -> anyhow::Result<(EmbeddingTable, PathBuf)> {
    let p = cfg.embeddings_path()?;
    Ok((EmbeddingTable::load(&p)?, p))
}

pub fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    ensure_out(cfg)?;
    let mut rec = Recorder::new(cfg, "synth");
    let mut scfg = cfg.synth.clone();
    if scfg.abbrev_lexicon_path.is_none() {
        scfg.abbrev_lexicon_path = cfg.paths.lexicon.clone();
    }
    let (records, report) = generate_synthetic_with_report(&scfg)?;
    let corpus = cfg.out("corpus.jsonl");
    save_jsonl(&corpus, &records)?;
    rec.output(&corpus);

    let text = cfg.out("tokenizer_text.txt");
    let mut lines = generate_tokenizer_text(&scfg)?.join("\n");
    lines.push('\n');
    fs::write(&text, lines).with_context(|| format!("writing {}", text.display()))?;
    rec.output(&text);

    let table = build_embedding_table(&scfg, cfg.bioembed.dim, cfg.seed)?;
    let emb = cfg.out("embeddings.txt");
    table.save(&emb)?;
    rec.output(&emb);

    let rep = cfg.out("synth_report.json");
    write_json(&rep, &report)?;
    rec.output(&rep);
    info!(
        "synth: {} records, emergency fraction {:.3}, {} of {} symptom mentions reserved",
        report.n_records, report.emergency_fraction, report.reserved_mentions, report.symptom_mentions
    );
    rec.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct PreprocessStats {
    records: usize,
    raw: CharStats,
    preprocessed: CharStats,
    train: usize,
    dev: usize,
    test: usize,
    train_positive: usize,
    dev_positive: usize,
    test_positive: usize,
}

pub fn preprocess(cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus = cfg.corpus_path();
    require_file("paths.corpus", &corpus)?;
    ensure_out(cfg)?;
    let mut rec = Recorder::new(cfg, "preprocess");
    rec.input(&corpus);
    let raw = load_jsonl(&corpus)?;
    let clean = preprocess_records(&raw, &lexicon(cfg)?)?;
    let split = if cfg.split.stratified {
        split_corpus_stratified(&clean, cfg.split_ratios(), cfg.seed)?
    } else {
        split_corpus(&clean, cfg.split_ratios(), cfg.seed)?
    };
    let [tr, dv, te] = split_paths(cfg);
    for (p, part) in [(&tr, &split.train), (&dv, &split.dev), (&te, &split.test)] {
        save_jsonl(p, part)?;
        rec.output(p);
    }
    let pos = |v: &[biobridge::corpus::PIRecord]| v.iter().filter(|r| r.label == 1).count();
    let stats = PreprocessStats {
        records: raw.len(),
        raw: corpus_stats(&raw),
        preprocessed: corpus_stats(&clean),
        train: split.train.len(),
        dev: split.dev.len(),
        test: split.test.len(),
        train_positive: pos(&split.train),
        dev_positive: pos(&split.dev),
        test_positive: pos(&split.test),
    };
    let sp = cfg.out("stats.json");
    write_json(&sp, &stats)?;
    rec.output(&sp);
    info!(
        "preprocess: {} records split {}/{}/{}",
        stats.records, stats.train, stats.dev, stats.test
    );
    rec.finish()?;
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus = cfg.corpus_path();
    require_file("paths.corpus", &corpus)?;
    let s = corpus_stats(&load_jsonl(&corpus)?);
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

pub fn train_vocab(cfg: &RunConfig) -> anyhow::Result<()> {
    ensure_out(cfg)?;
    let mut rec = Recorder::new(cfg, "train-vocab");
    let source = match &cfg.paths.tokenizer_text {
        Some(p) => {
            require_file("paths.tokenizer_text", p)?;
            Some(p.clone())
        }
        None => Some(cfg.out("tokenizer_text.txt")).filter(|p| p.is_file()),
    };
    let texts: Vec<String> = match &source {
        Some(p) => {
            rec.input(p);
            fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .lines()
                .map(String::from)
                .collect()
        }
        None => {
            let tr = cfg.out("train.jsonl");
            require_file("paths.tokenizer_text", &tr)?;
            rec.input(&tr);
            load_jsonl(&tr)?.into_iter().map(|r| r.text).collect()
        }
    };
    let vocab = train_vocab_from_texts(texts.iter().map(String::as_str), cfg.vocab.size, cfg.seed)?;
    let out = cfg.out("vocab.txt");
    vocab.save(&out)?;
    rec.output(&out);
    info!("train-vocab: {} tokens", vocab.len());
    rec.finish()?;
    Ok(())
}

/// Encoder settings with the vocabulary size taken from the vocabulary.
pub fn encoder_for(cfg: &RunConfig, vocab: &Vocab) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab.len(),
        ..cfg.encoder
    }
}

fn encode_opts(ecfg: &EncoderConfig, tcfg: &TrainConfig) -> EncodeOptions {
    EncodeOptions {
        max_len: ecfg.max_len,
        use_bridging: tcfg.use_bridging,
        use_bioembed: tcfg.use_bioembed,
    }
}

/// Trains one model. The table is only consulted with `use_bioembed`.
pub fn fit(
    split: &CorpusSplit,
    vocab: &Vocab,
    table: Option<&EmbeddingTable>,
    ecfg: &EncoderConfig,
    tcfg: &TrainConfig,
) -> anyhow::Result<TrainOutcome> {
    let table = if tcfg.use_bioembed { table } else { None };
    let opts = encode_opts(ecfg, tcfg);
    let tr = encode_records(&split.train, vocab, table, &opts)?;
    let dv = encode_records(&split.dev, vocab, table, &opts)?;
    info!("encoded train split: {:?}", encode_stats(&tr));
    let bio_dim = table.filter(|_| tcfg.use_bioembed).map(|t| t.dim());
    let init = ModelParams::init(ecfg, bio_dim, tcfg.seed);
    Ok(train(&tr, &dv, init, tcfg, ecfg)?)
}

pub fn score(
    records: &[biobridge::corpus::PIRecord],
    vocab: &Vocab,
    table: Option<&EmbeddingTable>,
    ckpt: &Checkpoint,
    threshold: f64,
) -> anyhow::Result<MetricsReport> {
    let table = if ckpt.train.use_bioembed { table } else { None };
    let ex = encode_records(records, vocab, table, &encode_opts(&ckpt.encoder, &ckpt.train))?;
    let preds = predict(&ex, &ckpt.params, &ckpt.encoder)?;
    Ok(evaluate(&preds, threshold))
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_dev_f1: f64,
    steps: usize,
    num_params: usize,
    embedding_table_grad_norm: f64,
    embedding_table_unchanged: Option<bool>,
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let table = if cfg.train.use_bioembed {
        Some(load_table(cfg)?)
    } else {
        None
    };
    let split = load_splits(cfg)?;
    let vocab = load_vocab(cfg)?;
    let mut rec = Recorder::new(cfg, "train");
    for p in split_paths(cfg) {
        rec.input(p);
    }
    rec.input(cfg.out("vocab.txt"));
    if let Some((_, p)) = &table {
        rec.input(p);
    }
    let before = table.as_ref().map(|(t, _)| t.to_text());
    let ecfg = encoder_for(cfg, &vocab);
    let outcome = fit(&split, &vocab, table.as_ref().map(|(t, _)| t), &ecfg, &cfg.train)?;
    let unchanged = table
        .as_ref()
        .zip(before)
        .map(|((t, _), b)| t.to_text() == b);

    let ckpt = Checkpoint {
        encoder: ecfg,
        train: cfg.train.clone(),
        params: outcome.params.clone(),
    };
    let cp = cfg.out("model.ckpt");
    save_checkpoint(&cp, &ckpt)?;
    rec.output(&cp);
    let hp = cfg.out("history.json");
    write_json(&hp, &outcome.history)?;
    rec.output(&hp);
    let sp = cfg.out("train_summary.json");
    write_json(
        &sp,
        &TrainSummary {
            best_epoch: outcome.best_epoch,
            best_dev_f1: outcome.best_dev_f1,
            steps: outcome.steps,
            num_params: outcome.params.num_params(),
            embedding_table_grad_norm: outcome.embedding_table_grad_norm,
            embedding_table_unchanged: unchanged,
        },
    )?;
    rec.output(&sp);
    info!(
        "train: best epoch {} with dev F1 {:.4}",
        outcome.best_epoch, outcome.best_dev_f1
    );
    rec.finish()?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, split_name: &str) -> anyhow::Result<()> {
    let cp = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("model.ckpt"));
    require_file("checkpoint", &cp)?;
    let idx = match split_name {
        "train" => 0,
        "dev" => 1,
        "test" => 2,
        other => return config_err(format!("split: unknown split `{other}`")),
    };
    let ckpt = load_checkpoint(&cp)?;
    let table = if ckpt.train.use_bioembed {
        Some(load_table(cfg)?)
    } else {
        None
    };
    let vocab = load_vocab(cfg)?;
    if vocab.len() != ckpt.encoder.vocab_size {
        return config_err(format!(
            "paths.out: vocabulary has {} tokens but the checkpoint expects {}",
            vocab.len(),
            ckpt.encoder.vocab_size
        ));
    }
    let split_path = split_paths(cfg)[idx].clone();
    require_file("paths.out", &split_path)?;
    let records = load_jsonl(&split_path)?;
    let mut rec = Recorder::new(cfg, "evaluate");
    rec.input(&cp);
    rec.input(&split_path);
    rec.input(cfg.out("vocab.txt"));
    if let Some((_, p)) = &table {
        rec.input(p);
    }
    let threshold = if cfg.metrics.threshold_from_train {
        let tp = split_paths(cfg)[0].clone();
        require_file("paths.out", &tp)?;
        rec.input(&tp);
        cfg.threshold(&load_jsonl(&tp)?)
    } else {
        cfg.metrics.threshold
    };
    let report = score(&records, &vocab, table.as_ref().map(|(t, _)| t), &ckpt, threshold)?;
    let name = if split_name == "test" {
        "metrics.json".to_string()
    } else {
        format!("metrics_{split_name}.json")
    };
    let mp = cfg.out(&name);
    write_json(&mp, &report)?;
    rec.output(&mp);
    print_report("encoder", &report);
    rec.finish()?;
    Ok(())
}

pub fn print_report(label: &str, r: &MetricsReport) {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{label}: F1 {:.4}  AUROC {}  AUPRC {}  Brier {:.4}  (n = {})",
        r.f1,
        f(r.auroc),
        f(r.auprc),
        r.brier,
        r.n
    );
}

pub fn baseline_metrics(cfg: &RunConfig, split: &CorpusSplit) -> anyhow::Result<MetricsReport> {
    let docs: Vec<&str> = split.train.iter().map(|r| r.text.as_str()).collect();
    let tfidf = fit_tfidf(&docs, cfg.baseline.tfidf)?;
    let x = tfidf.transform_all(&docs);
    let y: Vec<u8> = split.train.iter().map(|r| r.label).collect();
    let model = train_logreg(&x, &y, tfidf.n_features(), cfg.baseline.logreg)?;
    let test_docs: Vec<&str> = split.test.iter().map(|r| r.text.as_str()).collect();
    let probs = predict_logreg(&tfidf.transform_all(&test_docs), &model)?;
    let preds = PredictionSet::new(probs, split.test.iter().map(|r| r.label).collect())?;
    Ok(evaluate(&preds, cfg.threshold(&split.train)))
}

pub fn cmd_baseline(cfg: &RunConfig) -> anyhow::Result<()> {
    let split = load_splits(cfg)?;
    let mut rec = Recorder::new(cfg, "baseline");
    for p in split_paths(cfg) {
        rec.input(p);
    }
    let report = baseline_metrics(cfg, &split)?;
    let mp = cfg.out("baseline_metrics.json");
    write_json(&mp, &report)?;
    rec.output(&mp);
    print_report("tf-idf + logistic regression", &report);
    rec.finish()?;
    Ok(())
}

/// synth, preprocess, train-vocab, train, evaluate.
pub fn cmd_pipeline(cfg: &RunConfig) -> anyhow::Result<()> {
    synth(cfg)?;
    preprocess(cfg)?;
    train_vocab(cfg)?;
    cmd_train(cfg)?;
    cmd_evaluate(cfg, None, "test")
}
