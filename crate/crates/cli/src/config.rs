use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use biobridge::baseline::{LogRegConfig, TfidfConfig};
use biobridge::corpus::{PIRecord, SynthConfig, DEFAULT_SPLIT_RATIOS};
use biobridge::encoder::{EncoderConfig, TrainConfig};
use biobridge::metrics::{prevalence_threshold, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};

/// A bad config value or missing input; the binary exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: PathBuf,
    /// Raw corpus; defaults to `<out>/corpus.jsonl`.
    pub corpus: Option<PathBuf>,
    /// Abbreviation lexicon TSV; defaults to the bundled one.
    pub lexicon: Option<PathBuf>,
    /// Medical embedding table; defaults to `<out>/embeddings.txt`.
    pub embeddings: Option<PathBuf>,
    /// Text for vocabulary training; defaults to `<out>/tokenizer_text.txt`,
    /// then to the training split.
    pub tokenizer_text: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("runs/default"),
            corpus: None,
            lexicon: None,
            embeddings: None,
            tokenizer_text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    /// Cut each label separately so the splits share the class balance.
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let (a, b, c) = DEFAULT_SPLIT_RATIOS;
        SplitConfig {
            ratios: [a, b, c],
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { size: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BioembedConfig {
    /// Width of the synthetic table written by `synth`.
    pub dim: usize,
}

impl Default for BioembedConfig {
    fn default() -> Self {
        BioembedConfig { dim: 32 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub tfidf: TfidfConfig,
    pub logreg: LogRegConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub threshold: f64,
    /// Use the training split's positive share instead of `threshold`.
    pub threshold_from_train: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            threshold: DEFAULT_THRESHOLD,
            threshold_from_train: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Everything a command needs. `seed` drives the generator, the split, and
/// training; the per-section seeds are overwritten with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub vocab: VocabConfig,
    pub bioembed: BioembedConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub metrics: MetricsConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            vocab: VocabConfig::default(),
            bioembed: BioembedConfig::default(),
            encoder: EncoderConfig {
                hidden: 32,
                layers: 1,
                heads: 2,
                ffn: 64,
                dropout: 0.1,
                max_len: 64,
                vocab_size: 2000,
            },
            train: TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            baseline: BaselineConfig::default(),
            metrics: MetricsConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                let bad = |e: &dyn fmt::Display| ConfigError(format!("{}: {e}", p.display()));
                let file: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
                // Partial sections fall back to these defaults, not the library's.
                let mut merged = toml::Table::try_from(RunConfig::default()).map_err(|e| bad(&e))?;
                merge(&mut merged, file);
                merged.try_into::<RunConfig>().map_err(|e| bad(&e))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(o) = &ov.out {
            cfg.paths.out = o.clone();
        }
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let [a, b, c] = self.split.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return config_err("split.ratios must be positive and sum to 1");
        }
        if self.vocab.size < biobridge::tokenizer::SPECIAL_TOKENS.len() + 1 {
            return config_err("vocab.size is smaller than the special tokens");
        }
        if self.bioembed.dim == 0 {
            return config_err("bioembed.dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.metrics.threshold) {
            return config_err("metrics.threshold must lie in [0, 1]");
        }
        if self.ablation.seeds.is_empty() {
            return config_err("ablation.seeds must not be empty");
        }
        self.synth.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.encoder.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.paths.corpus.clone().unwrap_or_else(|| self.out("corpus.jsonl"))
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.split.ratios;
        (a, b, c)
    }

    /// Decision threshold for scoring, given the training split.
    pub fn threshold(&self, train: &[PIRecord]) -> f64 {
        if self.metrics.threshold_from_train {
            let y: Vec<u8> = train.iter().map(|r| r.label).collect();
            prevalence_threshold(&y)
        } else {
            self.metrics.threshold
        }
    }

    /// The embedding table to use, or a config error naming the field.
    pub fn embeddings_path(&self) -> anyhow::Result<PathBuf> {
        let p = self
            .paths
            .embeddings
            .clone()
            .unwrap_or_else(|| self.out("embeddings.txt"));
        if !p.is_file() {
            return config_err(format!(
                "paths.embeddings: table `{}` not found (required when train.use_bioembed = true)",
                p.display()
            ));
        }
        Ok(p)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A required input file, reported against the config field it came from.
pub fn require_file(field: &str, path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        config_err(format!("{field}: `{}` not found", path.display()))
    }
}
