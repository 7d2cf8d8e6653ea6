//! The 2x2 grid over {bridging, bio-embedding}: every leg trains on the same
//! split files with the same seeds and is scored on the same test split.

use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use anyhow::Context;
use biobridge::encoder::{Checkpoint, TrainConfig};
use biobridge::metrics::MetricsReport;
use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::commands::{encoder_for, fit, load_splits, load_table, load_vocab, score, split_paths};
use crate::config::RunConfig;
use crate::manifest::{write_json, Recorder};

pub const LEGS: [(&str, bool, bool); 4] = [
    ("Encoder", false, false),
    ("w/ Bridging modality", true, false),
    ("w/ Bio-embedding", false, true),
    ("BioBridge", true, true),
];

pub const CSV_HEADER: &str = "Model,F1,AUROC,AUPRC,Brier";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BestFlags {
    pub f1: bool,
    pub auroc: bool,
    pub auprc: bool,
    pub brier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegResult {
    pub model: String,
    pub use_bridging: bool,
    pub use_bioembed: bool,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub best_epoch: Option<usize>,
    pub seconds: f64,
    pub best: BestFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTable {
    pub seed: u64,
    pub rows: Vec<LegResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub model: String,
    pub use_bridging: bool,
    pub use_bioembed: bool,
    /// Seeds that finished for this leg.
    pub seeds: usize,
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub brier: Option<f64>,
    pub best: BestFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedTable>,
    pub mean: Vec<MeanRow>,
    pub complete: bool,
}

/// Flags the best value in each column (largest, smallest for Brier).
/// Ties are all flagged.
fn mark_best(values: &[[Option<f64>; 4]]) -> Vec<BestFlags> {
    let mut out = vec![BestFlags::default(); values.len()];
    for col in 0..4 {
        let lower_is_better = col == 3;
        let best = values
            .iter()
            .filter_map(|r| r[col])
            .fold(None, |acc: Option<f64>, v| match acc {
                None => Some(v),
                Some(a) if (lower_is_better && v < a) || (!lower_is_better && v > a) => Some(v),
                keep => keep,
            });
        for (i, r) in values.iter().enumerate() {
            let hit = best.is_some() && r[col] == best;
            match col {
                0 => out[i].f1 = hit,
                1 => out[i].auroc = hit,
                2 => out[i].auprc = hit,
                _ => out[i].brier = hit,
            }
        }
    }
    out
}

fn columns(m: &MetricsReport) -> [Option<f64>; 4] {
    [Some(m.f1), m.auroc, m.auprc, Some(m.brier)]
}

fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.collect::<Option<Vec<f64>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(seeds: Vec<u64>, mut per_seed: Vec<SeedTable>) -> AblationReport {
    for t in &mut per_seed {
        let vals: Vec<[Option<f64>; 4]> = t
            .rows
            .iter()
            .map(|r| r.metrics.as_ref().map_or([None; 4], columns))
            .collect();
        for (row, b) in t.rows.iter_mut().zip(mark_best(&vals)) {
            row.best = b;
        }
    }
    let mut mean_rows: Vec<MeanRow> = LEGS
        .iter()
        .enumerate()
        .map(|(li, &(name, br, bio))| {
            let done: Vec<&MetricsReport> = per_seed
                .iter()
                .filter_map(|t| t.rows.get(li).and_then(|r| r.metrics.as_ref()))
                .collect();
            let col = |c: usize| mean(done.iter().map(|m| columns(m)[c]));
            MeanRow {
                model: name.to_string(),
                use_bridging: br,
                use_bioembed: bio,
                seeds: done.len(),
                f1: col(0),
                auroc: col(1),
                auprc: col(2),
                brier: col(3),
                best: BestFlags::default(),
            }
        })
        .collect();
    let vals: Vec<[Option<f64>; 4]> = mean_rows
        .iter()
        .map(|r| [r.f1, r.auroc, r.auprc, r.brier])
        .collect();
    for (row, b) in mean_rows.iter_mut().zip(mark_best(&vals)) {
        row.best = b;
    }
    let complete = per_seed
        .iter()
        .all(|t| t.rows.iter().all(|r| r.metrics.is_some()));
    AblationReport {
        seeds,
        per_seed,
        mean: mean_rows,
        complete,
    }
}

fn pct(v: Option<f64>, best: bool) -> String {
    match v {
        Some(x) if best => format!("{:.2}*", 100.0 * x),
        Some(x) => format!("{:.2}", 100.0 * x),
        None => "n/a".into(),
    }
}

fn csv_rows(rows: impl Iterator<Item = (String, [Option<f64>; 4], BestFlags)>) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for (name, v, b) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{}",
            pct(v[0], b.f1),
            pct(v[1], b.auroc),
            pct(v[2], b.auprc),
            pct(v[3], b.brier)
        );
    }
    s
}

/// Scores in percent like the usual ablation tables; `*` marks the column best.
pub fn mean_csv(r: &AblationReport) -> String {
    csv_rows(
        r.mean
            .iter()
            .map(|m| (m.model.clone(), [m.f1, m.auroc, m.auprc, m.brier], m.best)),
    )
}

pub fn seed_csv(t: &SeedTable) -> String {
    csv_rows(t.rows.iter().map(|row| {
        let v = row.metrics.as_ref().map_or([None; 4], columns);
        (row.model.clone(), v, row.best)
    }))
}

pub fn cmd_ablate(cfg: &RunConfig) -> anyhow::Result<bool> {
    let split = load_splits(cfg)?;
    let vocab = load_vocab(cfg)?;
    let table = load_table(cfg)?;
    let ecfg = encoder_for(cfg, &vocab);
    let mut rec = Recorder::new(cfg, "ablate");
    for p in split_paths(cfg) {
        rec.input(p);
    }
    rec.input(cfg.out("vocab.txt"));
    rec.input(&table.1);

    let mut per_seed = Vec::new();
    for &seed in &cfg.ablation.seeds {
        let mut rows = Vec::new();
        for &(name, br, bio) in &LEGS {
            let tcfg = TrainConfig {
                seed,
                use_bridging: br,
                use_bioembed: bio,
                ..cfg.train.clone()
            };
            let t0 = Instant::now();
            let res = fit(&split, &vocab, Some(&table.0), &ecfg, &tcfg).and_then(|out| {
                let ckpt = Checkpoint {
                    encoder: ecfg,
                    train: tcfg.clone(),
                    params: out.params,
                };
                let m = score(&split.test, &vocab, Some(&table.0), &ckpt, cfg.threshold(&split.train))?;
                Ok((m, out.best_epoch))
            });
            let seconds = t0.elapsed().as_secs_f64();
            let row = match res {
                Ok((m, ep)) => {
                    info!("ablate seed {seed} {name}: AUROC {:?} in {seconds:.1}s", m.auroc);
                    LegResult {
                        model: name.into(),
                        use_bridging: br,
                        use_bioembed: bio,
                        metrics: Some(m),
                        error: None,
                        best_epoch: Some(ep),
                        seconds,
                        best: BestFlags::default(),
                    }
                }
                Err(e) => {
                    error!("ablate seed {seed} {name} failed: {e:#}");
                    LegResult {
                        model: name.into(),
                        use_bridging: br,
                        use_bioembed: bio,
                        metrics: None,
                        error: Some(format!("{e:#}")),
                        best_epoch: None,
                        seconds,
                        best: BestFlags::default(),
                    }
                }
            };
            rows.push(row);
        }
        per_seed.push(SeedTable { seed, rows });
    }
    let report = summarize(cfg.ablation.seeds.clone(), per_seed);

    let jp = cfg.out("ablation.json");
    write_json(&jp, &report)?;
    rec.output(&jp);
    let cp = cfg.out("ablation.csv");
    fs::write(&cp, mean_csv(&report)).with_context(|| format!("writing {}", cp.display()))?;
    rec.output(&cp);
    for t in &report.per_seed {
        let p = cfg.out(&format!("ablation_seed{}.csv", t.seed));
        fs::write(&p, seed_csv(t)).with_context(|| format!("writing {}", p.display()))?;
        rec.output(&p);
    }
    print!("{}", mean_csv(&report));
    rec.finish()?;
    Ok(report.complete)
}

#[cfg(test)]
mod tests {
    use super::*;
    use biobridge::metrics::{evaluate, PredictionSet};

    fn report(probs: Vec<f64>) -> MetricsReport {
        let preds = PredictionSet::new(probs, vec![1, 0, 1, 0]).unwrap();
        evaluate(&preds, 0.5)
    }

    fn leg(i: usize, m: Option<MetricsReport>) -> LegResult {
        LegResult {
            model: LEGS[i].0.into(),
            use_bridging: LEGS[i].1,
            use_bioembed: LEGS[i].2,
            error: m.is_none().then(|| "boom".into()),
            metrics: m,
            best_epoch: None,
            seconds: 0.0,
            best: BestFlags::default(),
        }
    }

    #[test]
    fn means_are_recomputable_from_seed_tables() {
        let seeds = vec![1, 2, 3];
        let tables: Vec<SeedTable> = seeds
            .iter()
            .map(|&s| SeedTable {
                seed: s,
                rows: (0..4)
                    .map(|i| {
                        let shift = 0.05 * i as f64 + 0.01 * s as f64;
                        leg(i, Some(report(vec![0.6 + shift, 0.4, 0.55, 0.45 - shift])))
                    })
                    .collect(),
            })
            .collect();
        let r = summarize(seeds, tables);
        assert!(r.complete);
        for (li, row) in r.mean.iter().enumerate() {
            let brier: f64 = r.per_seed.iter().map(|t| t.rows[li].metrics.as_ref().unwrap().brier).sum::<f64>() / 3.0;
            assert_eq!(row.brier, Some(brier));
            assert_eq!(row.seeds, 3);
        }
        assert!(r.mean[3].best.brier);
        assert!(!r.mean[0].best.brier);
        let csv = mean_csv(&r);
        assert!(csv.starts_with("Model,F1,AUROC,AUPRC,Brier\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn failed_leg_is_marked_and_excluded() {
        let t = SeedTable {
            seed: 0,
            rows: vec![
                leg(0, Some(report(vec![0.9, 0.1, 0.8, 0.2]))),
                leg(1, None),
                leg(2, Some(report(vec![0.6, 0.4, 0.6, 0.4]))),
                leg(3, Some(report(vec![0.9, 0.1, 0.8, 0.2]))),
            ],
        };
        let r = summarize(vec![0], vec![t]);
        assert!(!r.complete);
        assert_eq!(r.mean[1].seeds, 0);
        assert_eq!(r.mean[1].auroc, None);
        // ties share the flag
        assert!(r.per_seed[0].rows[0].best.brier && r.per_seed[0].rows[3].best.brier);
        assert!(seed_csv(&r.per_seed[0]).contains("w/ Bridging modality,n/a"));
    }
}
