//! Plain-text configuration: `key = value` lines with `#` comments.
//! Relative paths are resolved against the config file's directory, and
//! every key can be overridden by the matching command-line flag.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use couplet_core::cell::CellKind;
use couplet_core::rerank::RankWeights;

/// Every recognized configuration key with its default; used by `--help`
/// and by key validation.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("vocab", "path to the vocabulary table (default data/vocab.tsv)"),
    ("lm_checkpoint", "antecedent model checkpoint (default models/lm.ckpt)"),
    ("s2s_checkpoint", "subsequent model checkpoint (default models/s2s.ckpt)"),
    ("head_table", "head-character posterior table (default models/heads.tsv)"),
    ("tones", "tone lexicon (default data/tones.tsv)"),
    ("sentiment", "sentiment lexicon (default data/sentiment.tsv)"),
    ("log", "generation log, one JSON object per line (default generations.jsonl)"),
    ("corpus", "training corpus, antecedent<TAB>subsequent per line"),
    ("min_freq", "vocabulary frequency cutoff (default 10)"),
    ("val_n", "validation pairs (default: corpus-size scaled)"),
    ("test_n", "test pairs (default: corpus-size scaled)"),
    ("split_seed", "seed for the train/val/test split (default 1)"),
    ("lm_cell", "lstm | rnn (default lstm)"),
    ("lm_layers", "antecedent model layers (default 2)"),
    ("lm_hidden", "antecedent model hidden units (default 64)"),
    ("lm_embedding", "antecedent model embedding size (default 32)"),
    ("min_len", "minimum clause length (default 5)"),
    ("max_len", "maximum clause length (default 12)"),
    ("s2s_cell", "lstm | rnn (default lstm)"),
    ("s2s_layers", "subsequent model layers (default 2)"),
    ("s2s_hidden", "subsequent model hidden units (default 64)"),
    ("s2s_embedding", "subsequent model embedding size (default 32)"),
    ("s2s_attn", "attention dimension (default 64)"),
    ("batch_size", "training mini-batch size (default 128)"),
    ("lr", "Adam learning rate (default 0.001)"),
    ("epochs", "training epochs (default 10)"),
    ("clip_norm", "global gradient-norm cap (default 5)"),
    ("lm_beam_width", "beam width for antecedent decoding (default 8)"),
    ("lm_clusters", "k-means clusters for antecedent decoding (default 4)"),
    ("s2s_beam_width", "beam width for subsequent decoding (default 8)"),
    ("s2s_clusters", "k-means clusters for subsequent decoding (default 4)"),
    ("ngram_block", "blocked repeated n-gram order (default 2)"),
    ("t_max", "decode step cap for raw decodes (default 16)"),
    ("length_normalize", "rank hypotheses by length-normalized logprob (default false)"),
    ("antecedent_candidates", "antecedents entering the pool (default 4)"),
    ("subsequent_candidates", "subsequents per antecedent (default 4)"),
    ("w_length", "re-rank weight for the length score (default 0.25)"),
    ("w_repetition", "re-rank weight for the repetition score (default 0.25)"),
    ("w_tone", "re-rank weight for the tone score (default 0.25)"),
    ("w_sentiment", "re-rank weight for the sentiment score (default 0.25)"),
    ("alpha", "head-posterior smoothing (default 1.0)"),
    ("seed", "seed for training, splits and decoding (default 42)"),
];

/// One-line-per-key help text for `--help`.
pub fn config_key_help() -> String {
    let mut out = String::from("Config file keys (key = value, # comments):\n");
    for (key, doc) in CONFIG_KEYS {
        out.push_str(&format!("  {key:<24} {doc}\n"));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct AppConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl AppConfig {
    pub fn empty() -> AppConfig {
        AppConfig { values: BTreeMap::new(), base_dir: PathBuf::from(".") }
    }

    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = AppConfig::parse(&text)?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<AppConfig> {
        let mut values = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got `{raw}`", ln + 1);
            };
            let key = key.trim();
            let value = value.trim();
            if !CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
                bail!("config line {}: unknown key `{key}`", ln + 1);
            }
            values.insert(key.to_string(), value.to_string());
        }
        Ok(AppConfig { values, base_dir: PathBuf::from(".") })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn path(&self, key: &str, default: &str) -> PathBuf {
        let raw = self.get(key).unwrap_or(default);
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|raw| {
            let p = PathBuf::from(raw);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().with_context(|| format!("config key `{key}`: bad count `{v}`")),
        }
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => Ok(Some(
                v.parse().with_context(|| format!("config key `{key}`: bad count `{v}`"))?,
            )),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().with_context(|| format!("config key `{key}`: bad integer `{v}`")),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().with_context(|| format!("config key `{key}`: bad number `{v}`")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => bail!("config key `{key}`: bad boolean `{v}`"),
        }
    }

    pub fn cell_or(&self, key: &str, default: CellKind) -> Result<CellKind> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                CellKind::parse(v).with_context(|| format!("config key `{key}`: unknown cell `{v}`"))
            }
        }
    }

    pub fn weights(&self) -> Result<RankWeights> {
        Ok(RankWeights {
            length: self.f64_or("w_length", 0.25)?,
            repetition: self.f64_or("w_repetition", 0.25)?,
            tone: self.f64_or("w_tone", 0.25)?,
            sentiment: self.f64_or("w_sentiment", 0.25)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = AppConfig::parse("# comment\nseed = 7\n\nlr = 0.01 # inline\n").unwrap();
        assert_eq!(cfg.u64_or("seed", 0).unwrap(), 7);
        assert_eq!(cfg.f64_or("lr", 0.0).unwrap(), 0.01);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(AppConfig::parse("no_such_key = 1\n").is_err());
    }

    #[test]
    fn missing_equals_is_rejected() {
        assert!(AppConfig::parse("just a line\n").is_err());
    }

    #[test]
    fn defaults_apply_when_absent() {
        let cfg = AppConfig::empty();
        assert_eq!(cfg.usize_or("batch_size", 128).unwrap(), 128);
        assert_eq!(cfg.path("vocab", "data/vocab.tsv"), PathBuf::from("./data/vocab.tsv"));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.conf");
        std::fs::write(&path, "vocab = v.tsv\n").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.path("vocab", "x"), dir.path().join("v.tsv"));
    }

    #[test]
    fn weights_parse() {
        let cfg = AppConfig::parse("w_tone = 2.0\n").unwrap();
        let w = cfg.weights().unwrap();
        assert_eq!(w.tone, 2.0);
        assert_eq!(w.length, 0.25);
    }
}
