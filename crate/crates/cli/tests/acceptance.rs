//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; the process fails if any does.
//!
//! The experiment criteria drive the real binary on the desk configuration in
//! `configs/desk.toml` (6000 notes, 4000/1000/1000, five seeds).

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use biobridge::bioembed::{extract_bio_features, fuse, map_features, reconstruct_words, EmbeddingTable, EnglishWordSpan, LinearMapper};
use biobridge::corpus::load_jsonl;
use biobridge::encoder::{embed_batch, embed_tokens, loss_and_grads, train, EncoderConfig, ModelParams, TrainConfig};
use biobridge::metrics::{auprc, auroc, brier, f1_at_threshold, PredictionSet};
use biobridge::pipeline::{encode_records, BioInput, EncodeOptions, EncodedExample};
use biobridge::preprocess::{decode_abbreviations, load_lexicon, normalize_spacing, AbbrevLexicon};
use biobridge::tokenizer::{
    insert_bridging_tokens, tokenize, train_vocab_from_texts, truncate_pad, Lang, TokenizedInput, Vocab, B_E, B_K,
    CLS, PAD, SEP,
};
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const BIN: &str = env!("CARGO_BIN_EXE_biobridge");

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> PathBuf {
    repo().join("configs/desk.toml")
}

fn run(out: &Path, extra: &[&str]) -> Result<(), String> {
    let mut cmd = Command::new(BIN);
    cmd.arg("--config").arg(desk_config()).arg("--out").arg(out).args(extra);
    cmd.env("RUST_LOG", "warn");
    let o = cmd.output().map_err(|e| format!("spawning {BIN}: {e}"))?;
    if !o.status.success() {
        return Err(format!(
            "`biobridge {}` exited with {}: {}",
            extra.join(" "),
            o.status,
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok(())
}

fn json(p: &Path) -> Result<Value, String> {
    let s = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&s).map_err(|e| format!("{}: {e}", p.display()))
}

fn bytes(p: &Path) -> Result<Vec<u8>, String> {
    fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

// ---------------------------------------------------------------- 1

fn random_langs(rng: &mut ChaCha8Rng) -> TokenizedInput {
    let n = rng.random_range(0..60);
    let mut t = TokenizedInput {
        ids: vec![CLS],
        tokens: vec!["[CLS]".into()],
        lang: vec![Lang::Cls],
        word_id: vec![-1],
        attn_mask: vec![1],
    };
    for i in 0..n {
        t.ids.push(6 + i as u32);
        t.tokens.push(format!("w{i}"));
        t.lang.push(if rng.random_bool(0.5) { Lang::Kor } else { Lang::Eng });
        t.word_id.push(i);
        t.attn_mask.push(1);
    }
    for (id, tok, l, m) in [(SEP, "[SEP]", Lang::Sep, 1)]
        .into_iter()
        .chain((0..rng.random_range(0..4)).map(|_| (PAD, "[PAD]", Lang::Pad, 0)))
    {
        t.ids.push(id);
        t.tokens.push(tok.into());
        t.lang.push(l);
        t.word_id.push(-1);
        t.attn_mask.push(m);
    }
    t
}

const KOR: [&str; 6] = ["열이", "있음", "기침", "구토", "복통", "내원함"];
const ENG: [&str; 8] = ["fever", "cough", "vomiting", "seizure", "rash", "dyspnea", "zqxv", "otalgia"];
const OTHER: [&str; 4] = ["39", ".", "3", "/"];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..16);
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => *KOR.choose(rng).unwrap(),
            1 => *ENG.choose(rng).unwrap(),
            _ => *OTHER.choose(rng).unwrap(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn small_vocab(rng: &mut ChaCha8Rng) -> Vocab {
    let corpus: Vec<String> = (0..50).map(|_| random_text(rng)).collect();
    train_vocab_from_texts(corpus.iter().map(String::as_str), 80, 0).unwrap()
}

fn bridging_violation(t: &TokenizedInput) -> Option<String> {
    let b = insert_bridging_tokens(t);
    let content: Vec<Lang> = t.lang.iter().copied().filter(|l| l.is_content()).collect();
    let runs = content.windows(2).filter(|w| w[0] != w[1]).count() + usize::from(!content.is_empty());
    if b.s != runs || b.seq.len() != t.len() + b.s {
        return Some(format!("count: n={} s={} runs={runs} len={}", t.len(), b.s, b.seq.len()));
    }
    let mut current = None;
    for i in 0..b.seq.len() {
        let l = b.seq.lang[i];
        if l == Lang::Seg {
            let want = if b.seq.ids[i] == B_K { Lang::Kor } else { Lang::Eng };
            if b.seq.lang.get(i + 1) != Some(&want) {
                return Some(format!("segment at {i} does not open a {want:?} run"));
            }
            current = Some(want);
        } else if l.is_content() && current != Some(l) {
            return Some(format!("run at {i} not preceded by its segment token"));
        }
    }
    let again = insert_bridging_tokens(&b.seq);
    if again.s != 0 || again.seq != b.seq {
        return Some("not idempotent".into());
    }
    let stripped: Vec<u32> = b.seq.ids.iter().copied().filter(|&i| i != B_K && i != B_E).collect();
    if stripped != t.ids {
        return Some("original tokens not preserved in order".into());
    }
    None
}

fn criterion_1() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab = small_vocab(&mut rng);
    for trial in 0..1000 {
        let t = if trial % 2 == 0 {
            random_langs(&mut rng)
        } else {
            tokenize(&random_text(&mut rng), &vocab)
        };
        if let Some(v) = bridging_violation(&t) {
            return Err(format!("trial {trial}: {v}"));
        }
    }
    let el = t0.elapsed();
    ensure!(el < Duration::from_secs(10), "took {el:?}");
    Ok(format!("1000 sequences, 0 violations, {:.2}s", el.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = small_vocab(&mut rng);
    let words: Vec<String> = ENG[..6].iter().map(|w| w.to_string()).collect();
    for trial in 0..500u64 {
        let heads = rng.random_range(1..4);
        let hidden = heads * rng.random_range(1..5);
        let bio_dim = rng.random_range(1..9);
        let cfg = EncoderConfig {
            hidden,
            layers: 1,
            heads,
            ffn: 4,
            dropout: 0.0,
            max_len: 64,
            vocab_size: vocab.len(),
        };
        let params = ModelParams::init(&cfg, Some(bio_dim), trial);
        let plain = tokenize(&random_text(&mut rng), &vocab);
        let n = plain.active_len();
        let e = embed_tokens(&plain.ids[..n], &params).map_err(|e| e.to_string())?;
        ensure!(e.dim() == (n, hidden), "trial {trial}: token embeddings {:?}", e.dim());

        let bridged = insert_bridging_tokens(&plain);
        let s = bridged.s;
        let eb = embed_tokens(&bridged.seq.ids, &params).map_err(|e| e.to_string())?;
        ensure!(eb.dim() == (n + s, hidden), "trial {trial}: bridged {:?}", eb.dim());

        let spans: Vec<EnglishWordSpan> = reconstruct_words(&bridged);
        let m = spans.len();
        let vecs = Array2::from_shape_fn((words.len(), bio_dim), |_| rng.random_range(-1.0..1.0));
        let table = EmbeddingTable::new(words.clone(), vecs).unwrap();
        let (raw, hits) = extract_bio_features(&spans, &table);
        ensure!(raw.dim() == (m, bio_dim), "trial {trial}: raw {:?}", raw.dim());

        let mut mapper = LinearMapper::zeros(bio_dim, hidden);
        mapper.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let mapped = map_features(&raw, &hits, &mapper).map_err(|e| e.to_string())?;
        ensure!(mapped.dim() == (m, hidden), "trial {trial}: mapped {:?}", mapped.dim());

        let (fused, _) = fuse(&eb, &mapped, &spans).map_err(|e| e.to_string())?;
        ensure!(fused.dim() == (n + s, hidden), "trial {trial}: fused {:?}", fused.dim());

        let a = truncate_pad(bridged, 40);
        let b = truncate_pad(insert_bridging_tokens(&tokenize(&random_text(&mut rng), &vocab)), 40);
        let batch = embed_batch(&[&a.seq.ids, &b.seq.ids], &params).map_err(|e| e.to_string())?;
        ensure!(batch.dim() == (2, 40, hidden), "trial {trial}: batch {:?}", batch.dim());
    }
    Ok("500 trials, 0 failures".into())
}

// ---------------------------------------------------------------- 3

fn criterion_3(run_a: &Path) -> Check {
    let summary = json(&run_a.join("train_summary.json"))?;
    ensure!(
        summary["embedding_table_unchanged"] == Value::Bool(true),
        "CLI run reports the table changed: {summary}"
    );
    ensure!(
        summary["embedding_table_grad_norm"].as_f64() == Some(0.0),
        "CLI grad norm {}",
        summary["embedding_table_grad_norm"]
    );
    let synth = json(&run_a.join("manifest_synth.json"))?;
    let trained = json(&run_a.join("manifest_train.json"))?;
    let key = run_a.join("embeddings.txt").display().to_string();
    ensure!(
        synth["outputs"][&key] == trained["inputs"][&key] && synth["outputs"][&key].is_string(),
        "table hash differs between synth and train manifests"
    );

    // and in process, on the same artifacts
    let path = run_a.join("embeddings.txt");
    let before = bytes(&path)?;
    let table = EmbeddingTable::load(&path).map_err(|e| e.to_string())?;
    ensure!(table.to_text().as_bytes() == before.as_slice(), "serialization does not round-trip");
    let vocab = Vocab::load(run_a.join("vocab.txt")).map_err(|e| e.to_string())?;
    let tr = load_jsonl(run_a.join("train.jsonl")).map_err(|e| e.to_string())?;
    let dv = load_jsonl(run_a.join("dev.jsonl")).map_err(|e| e.to_string())?;
    let ecfg = EncoderConfig {
        hidden: 32,
        layers: 1,
        heads: 2,
        ffn: 64,
        dropout: 0.1,
        max_len: 64,
        vocab_size: vocab.len(),
    };
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let opts = EncodeOptions {
        max_len: 64,
        use_bridging: true,
        use_bioembed: true,
    };
    let tr = encode_records(&tr, &vocab, Some(&table), &opts).map_err(|e| e.to_string())?;
    let dv = encode_records(&dv, &vocab, Some(&table), &opts).map_err(|e| e.to_string())?;
    let out = train(&tr, &dv, ModelParams::init(&ecfg, Some(table.dim()), 0), &tcfg, &ecfg)
        .map_err(|e| e.to_string())?;
    ensure!(table.to_text().as_bytes() == before.as_slice(), "table changed in memory");
    ensure!(bytes(&path)? == before, "table file changed");
    ensure!(out.embedding_table_grad_norm == 0.0, "grad norm {}", out.embedding_table_grad_norm);
    Ok(format!(
        "table byte-identical after {} epochs ({} steps), grad norm 0",
        tcfg.epochs, out.steps
    ))
}

// ---------------------------------------------------------------- 4

fn fd_params(cfg: &EncoderConfig) -> ModelParams {
    let mut p = ModelParams::init(cfg, Some(3), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.6..0.6) + if *v == 1.0 { 1.0 } else { 0.0 };
        }
    }
    p
}

fn fd_batch() -> Vec<EncodedExample> {
    let span = |w: &str, a, b| EnglishWordSpan {
        word: w.into(),
        token_start: a,
        token_end: b,
    };
    vec![
        EncodedExample {
            ids: vec![2, 4, 17, 33, 5, 40, 41, 3, 0, 0],
            attn_mask: vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
            s: 2,
            bio: Some(BioInput {
                spans: vec![span("fever", 5, 7)],
                raw: Array2::from_shape_vec((1, 3), vec![0.7, -1.2, 0.4]).unwrap(),
                hits: vec![true],
            }),
            label: 1,
        },
        EncodedExample {
            ids: vec![2, 5, 12, 13, 14, 4, 20, 3, 0, 0],
            attn_mask: vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
            s: 2,
            bio: Some(BioInput {
                spans: vec![span("xqz", 2, 3), span("cough", 3, 5)],
                raw: Array2::from_shape_vec((2, 3), vec![0.0, 0.0, 0.0, -0.3, 0.9, 1.5]).unwrap(),
                hits: vec![false, true],
            }),
            label: 0,
        },
    ]
}

fn criterion_4() -> Check {
    let t0 = Instant::now();
    let cfg = EncoderConfig {
        hidden: 8,
        layers: 1,
        heads: 1,
        ffn: 12,
        dropout: 0.1,
        max_len: 10,
        vocab_size: 50,
    };
    let params = fd_params(&cfg);
    let batch = fd_batch();
    let loss = |p: &ModelParams| loss_and_grads::<ChaCha8Rng>(&batch, p, &cfg, None).map(|r| r.0);
    let (_, grads) = loss_and_grads::<ChaCha8Rng>(&batch, &params, &cfg, None).map_err(|e| e.to_string())?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.name.to_string(), t.data.to_vec()))
        .collect();
    let eps = 1e-5;
    let mut probe = params.clone();
    let (mut worst, mut at, mut count) = (0.0f64, String::new(), 0usize);
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for k in 0..a.len() {
            let orig = probe.tensors_mut()[ti][k];
            probe.tensors_mut()[ti][k] = orig + eps;
            let up = loss(&probe).map_err(|e| e.to_string())?;
            probe.tensors_mut()[ti][k] = orig - eps;
            let down = loss(&probe).map_err(|e| e.to_string())?;
            probe.tensors_mut()[ti][k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (a[k] - fd).abs() / a[k].abs().max(fd.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                at = format!("{name}[{k}]");
            }
            count += 1;
        }
    }
    let el = t0.elapsed();
    ensure!(worst < 1e-4, "max relative error {worst:e} at {at}");
    ensure!(el < Duration::from_secs(120), "took {el:?}");
    Ok(format!(
        "{count} scalars over {} tensors, max rel err {worst:.2e}, {:.2}s",
        analytic.len(),
        el.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sets = 0;
    while sets < 200 {
        let n = rng.random_range(2..=50);
        let coarse = rng.random_bool(0.5);
        let p: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.random_range(0..5) as f64 / 4.0 } else { rng.random() })
            .collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        if !(y.contains(&0) && y.contains(&1)) {
            continue;
        }
        sets += 1;
        let set = PredictionSet::new(p.clone(), y.clone()).unwrap();
        let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
        for i in 0..n {
            if y[i] == 1 {
                pos += 1;
                for j in (0..n).filter(|&j| y[j] == 0) {
                    twice += if p[i] > p[j] { 2 } else { u64::from(p[i] == p[j]) };
                }
            } else {
                neg += 1;
            }
        }
        let brute = (twice as f64 * 0.5) / (pos as f64 * neg as f64);
        let got = auroc(&set).map_err(|e| e.to_string())?;
        ensure!(got == brute, "AUROC {got} vs brute force {brute} on {p:?} {y:?}");
        let ap = (0..n)
            .filter(|&i| y[i] == 1)
            .map(|i| {
                let above: Vec<usize> = (0..n).filter(|&j| p[j] >= p[i]).collect();
                above.iter().filter(|&&j| y[j] == 1).count() as f64 / above.len() as f64
            })
            .sum::<f64>()
            / pos as f64;
        let got = auprc(&set).map_err(|e| e.to_string())?;
        ensure!((got - ap).abs() < 1e-12, "AUPRC {got} vs brute force {ap}");
    }
    let s = PredictionSet::new(vec![0.7, 0.6, 0.4], vec![1, 0, 0]).unwrap();
    let (f1, c) = f1_at_threshold(&s, 0.5);
    ensure!((c.tp, c.fp, c.fn_) == (1, 1, 0) && (f1 - 2.0 / 3.0).abs() < 1e-15, "F1 example: {f1} {c:?}");
    let s = PredictionSet::new(vec![0.8, 0.3], vec![1, 0]).unwrap();
    ensure!((brier(&s) - 0.065).abs() < 1e-15, "Brier example: {}", brier(&s));
    let s = PredictionSet::new(vec![0.5, 0.5], vec![0, 1]).unwrap();
    ensure!(brier(&s) == 0.25, "Brier at 0.5");
    Ok("200 random sets exact; F1 and Brier examples match".into())
}

// ---------------------------------------------------------------- 6, 7, 8

fn auroc_of(row: &Value) -> Option<f64> {
    row["auroc"].as_f64()
}

fn criterion_6(ablation: &Value, took: Duration) -> Check {
    let mean = ablation["mean"].as_array().ok_or("no mean table")?;
    let base = mean.iter().find(|r| r["model"] == "Encoder").and_then(auroc_of).ok_or("no Encoder row")?;
    let full = mean.iter().find(|r| r["model"] == "BioBridge").and_then(auroc_of).ok_or("no BioBridge row")?;
    let gain = 100.0 * (full - base);
    let seeds = ablation["seeds"].as_array().map_or(0, Vec::len);
    ensure!(seeds == 5, "expected 5 seeds, got {seeds}");
    ensure!(gain >= 2.0, "gain {gain:.2} points (Encoder {base:.4}, BioBridge {full:.4})");
    ensure!(took < Duration::from_secs(15 * 60), "ablation took {took:?}");
    Ok(format!(
        "mean test AUROC {:.2} -> {:.2} (+{gain:.2} points) over {seeds} seeds, {:.0}s",
        100.0 * base,
        100.0 * full,
        took.as_secs_f64()
    ))
}

fn seed_row(ablation: &Value, seed: u64, model: &str) -> Result<Value, String> {
    ablation["per_seed"]
        .as_array()
        .and_then(|t| t.iter().find(|t| t["seed"] == seed))
        .and_then(|t| t["rows"].as_array())
        .and_then(|r| r.iter().find(|r| r["model"] == model))
        .map(|r| r["metrics"].clone())
        .ok_or_else(|| format!("no {model} row for seed {seed}"))
}

fn criterion_7(run_a: &Path, ablation: &Value, scratch: &Path) -> Check {
    let csv = fs::read_to_string(run_a.join("ablation.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure!(lines.first() == Some(&"Model,F1,AUROC,AUPRC,Brier"), "csv header {:?}", lines.first());
    ensure!(lines.len() == 5, "csv has {} rows", lines.len() - 1);
    for (line, want) in lines[1..].iter().zip(["Encoder", "w/ Bridging modality", "w/ Bio-embedding", "BioBridge"]) {
        ensure!(line.starts_with(&format!("{want},")), "row {line:?}");
    }
    let mean = ablation["mean"].as_array().ok_or("no mean table")?;
    for col in ["f1", "auroc", "auprc", "brier"] {
        let flagged = mean.iter().filter(|r| r["best"][col] == true).count();
        ensure!(flagged >= 1, "no best flag in column {col}");
    }

    // seed 0: the pipeline's own train + evaluate
    let own = json(&run_a.join("metrics.json"))?;
    let row = seed_row(ablation, 0, "BioBridge")?;
    ensure!(own == row, "seed 0: train+evaluate {own} vs ablation {row}");

    // seed 2: a fresh directory holding only the shared inputs
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt", "embeddings.txt"] {
        fs::copy(run_a.join(f), scratch.join(f)).map_err(|e| format!("{f}: {e}"))?;
    }
    run(scratch, &["--seed", "2", "train"])?;
    run(scratch, &["--seed", "2", "evaluate"])?;
    let fresh = json(&scratch.join("metrics.json"))?;
    let row = seed_row(ablation, 2, "BioBridge")?;
    ensure!(fresh == row, "seed 2: train+evaluate {fresh} vs ablation {row}");
    Ok("4-row table with best flags; seeds 0 and 2 reproduce the both-flags row exactly".into())
}

fn criterion_8(run_a: &Path, ablation: &Value) -> Check {
    let base = json(&run_a.join("baseline_metrics.json"))?;
    let b = auroc_of(&base).ok_or("baseline AUROC missing")?;
    let mean = ablation["mean"].as_array().ok_or("no mean table")?;
    let full = mean.iter().find(|r| r["model"] == "BioBridge").and_then(auroc_of).ok_or("no BioBridge row")?;
    ensure!(b > 0.55, "baseline AUROC {b:.4}");
    ensure!(full > b, "BioBridge {full:.4} does not beat the baseline {b:.4}");
    Ok(format!("TF-IDF+LR AUROC {b:.4} < BioBridge mean {full:.4}"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Check {
    let golden = repo().join("crates/core/tests/golden");
    let lex = load_lexicon(golden.join("two_entry_lexicon.tsv")).map_err(|e| e.to_string())?;
    let cases = fs::read_to_string(golden.join("preprocess_cases.tsv")).map_err(|e| e.to_string())?;
    let mut n = 0;
    for line in cases.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        ensure!(f.len() == 3, "bad golden line {line:?}");
        let d = decode_abbreviations(f[0], &lex);
        ensure!(d == f[1], "decode {:?}: {d:?}", f[0]);
        let s = normalize_spacing(&d);
        ensure!(s == f[2], "spacing {:?}: {s:?}", f[0]);
        n += 1;
    }
    let starter = AbbrevLexicon::starter();
    ensure!(
        decode_abbreviations("C/S/R", &starter) == "Cough/Sputum/Rhinorrhea"
            && decode_abbreviations("BT", &starter) == "Body Temperature",
        "starter lexicon lacks the two reference mappings"
    );
    Ok(format!("{n} golden cases"))
}

// ---------------------------------------------------------------- 10

fn criterion_10(a: &Path, b: &Path) -> Check {
    let files = [
        "corpus.jsonl",
        "train.jsonl",
        "dev.jsonl",
        "test.jsonl",
        "vocab.txt",
        "embeddings.txt",
        "model.ckpt",
        "history.json",
        "metrics.json",
    ];
    for f in files {
        ensure!(bytes(&a.join(f))? == bytes(&b.join(f))?, "{f} differs between runs");
    }
    let stats = json(&a.join("stats.json"))?;
    let sizes = (stats["train"].as_u64(), stats["dev"].as_u64(), stats["test"].as_u64());
    ensure!(sizes == (Some(4000), Some(1000), Some(1000)), "split sizes {sizes:?}");
    Ok(format!("{} artifacts byte-identical across two pipeline runs", files.len()))
}

// ----------------------------------------------------------------

fn report(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t0 = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t0.elapsed().as_secs_f64();
    match res {
        Ok(detail) => {
            println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(e) => {
            println!("criterion {n:>2} FAIL  {name}: {e} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    fs::create_dir_all(&c).unwrap();

    let pipelines = run(&a, &["pipeline"]).and_then(|_| run(&b, &["pipeline"]));
    let t0 = Instant::now();
    let ablation = pipelines
        .clone()
        .and_then(|_| run(&a, &["baseline"]))
        .and_then(|_| run(&a, &["ablate"]))
        .and_then(|_| json(&a.join("ablation.json")));
    let took = t0.elapsed();
    let needs_runs = |r: &Result<Value, String>| r.clone().map_err(|e| format!("setup failed: {e}"));

    let mut ok = true;
    ok &= report(1, "bridging invariants", criterion_1);
    ok &= report(2, "dimension contracts", criterion_2);
    ok &= report(3, "frozen medical embeddings", || {
        pipelines.clone()?;
        criterion_3(&a)
    });
    ok &= report(4, "gradient check", criterion_4);
    ok &= report(5, "metric oracles", criterion_5);
    ok &= report(6, "directional gain", || criterion_6(&needs_runs(&ablation)?, took));
    ok &= report(7, "ablation harness", || criterion_7(&a, &needs_runs(&ablation)?, &c));
    ok &= report(8, "baseline ordering", || criterion_8(&a, &needs_runs(&ablation)?));
    ok &= report(9, "preprocessing goldens", criterion_9);
    ok &= report(10, "determinism chain", || {
        pipelines.clone()?;
        criterion_10(&a, &b)
    });
    if !ok {
        std::process::exit(1);
    }
}
