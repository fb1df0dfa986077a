//! The composed three-stage pipeline: head selection, antecedent decoding,
//! subsequent decoding, and re-ranking, plus the append-only generation log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use couplet_core::beam::BeamConfig;
use couplet_core::checkpoint::{checkpoint_fingerprint, load_checkpoint};
use couplet_core::heads::{select_heads, select_heads_sampled, HeadPosterior, HeadSelection};
use couplet_core::lm::LmModel;
use couplet_core::params::ParamSet;
use couplet_core::rerank::{rerank, Candidate, RankWeights, ScoredCouplet, SentimentLexicon, ToneLexicon};
use couplet_core::rng::RngState;
use couplet_core::s2s::S2sModel;
use couplet_core::vocab::Vocab;

use crate::config::AppConfig;

pub struct Pipeline {
    pub vocab: Vocab,
    pub lm: LmModel,
    pub lm_params: ParamSet,
    pub s2s: S2sModel,
    pub s2s_params: ParamSet,
    pub posterior: HeadPosterior,
    pub tones: ToneLexicon,
    pub sentiment: SentimentLexicon,
    pub weights: RankWeights,
    pub lm_beam: BeamConfig,
    pub s2s_beam: BeamConfig,
    /// Antecedent candidates entering the pool and subsequents per antecedent.
    pub antecedent_candidates: usize,
    pub subsequent_candidates: usize,
    pub seed: u64,
    pub lm_fingerprint: String,
    pub s2s_fingerprint: String,
    log: Mutex<LogSink>,
}

struct LogSink {
    path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresDto {
    pub length: f64,
    pub repetition: f64,
    pub tone: f64,
    pub sentiment: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupletDto {
    pub antecedent: String,
    pub subsequent: String,
    pub logprob: f64,
    pub scores: ScoresDto,
}

impl CoupletDto {
    pub fn from_scored(s: &ScoredCouplet) -> CoupletDto {
        CoupletDto {
            antecedent: s.candidate.antecedent.clone(),
            subsequent: s.candidate.subsequent.clone(),
            logprob: s.candidate.logprob,
            scores: ScoresDto {
                length: s.scores.length,
                repetition: s.scores.repetition,
                tone: s.scores.tone,
                sentiment: s.scores.sentiment,
                total: s.total,
            },
        }
    }
}

/// One line of the generation log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub ts: u64,
    pub input: String,
    pub heads: [String; 2],
    pub best: CoupletDto,
    pub pool: Vec<CoupletDto>,
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub heads: HeadSelection,
    pub best: ScoredCouplet,
    pub pool: Vec<ScoredCouplet>,
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

impl Pipeline {
    /// Load every artifact referenced by the config; any missing file is an
    /// error naming it.
    pub fn load(cfg: &AppConfig) -> Result<Pipeline> {
        let vocab_path = cfg.path("vocab", "data/vocab.tsv");
        let lm_path = cfg.path("lm_checkpoint", "models/lm.ckpt");
        let s2s_path = cfg.path("s2s_checkpoint", "models/s2s.ckpt");
        let heads_path = cfg.path("head_table", "models/heads.tsv");
        let tones_path = cfg.path("tones", "data/tones.tsv");
        let senti_path = cfg.path("sentiment", "data/sentiment.tsv");
        require(&vocab_path, "vocabulary")?;
        require(&lm_path, "antecedent checkpoint")?;
        require(&s2s_path, "subsequent checkpoint")?;
        require(&heads_path, "head table")?;
        require(&tones_path, "tone lexicon")?;
        require(&senti_path, "sentiment lexicon")?;

        let vocab = Vocab::load(&vocab_path)?;
        let lm_params = load_checkpoint(&lm_path)?;
        let s2s_params = load_checkpoint(&s2s_path)?;
        let min_len = cfg.usize_or("min_len", 5)?;
        let max_len = cfg.usize_or("max_len", 12)?;
        let lm = LmModel::from_params(&lm_params, min_len, max_len)?;
        let s2s = S2sModel::from_params(&s2s_params)?;
        if lm.vocab_size != vocab.size() || s2s.vocab_size != vocab.size() {
            bail!(
                "vocabulary ({} entries) disagrees with checkpoints (lm {}, s2s {})",
                vocab.size(),
                lm.vocab_size,
                s2s.vocab_size
            );
        }
        let posterior = HeadPosterior::load(&heads_path)?;
        let tones = ToneLexicon::load(&tones_path)?;
        let sentiment = SentimentLexicon::load(&senti_path)?;
        let weights = cfg.weights()?;
        weights.validate()?;

        let seed = cfg.u64_or("seed", 42)?;
        let ngram = cfg.usize_or("ngram_block", 2)?;
        let t_max = cfg.usize_or("t_max", 16)?;
        let length_normalize = cfg.bool_or("length_normalize", false)?;
        let lm_beam = BeamConfig {
            beam_width: cfg.usize_or("lm_beam_width", 8)?,
            clusters: cfg.usize_or("lm_clusters", 4)?,
            t_max,
            ngram_block: ngram,
            seed,
            length_normalize,
        };
        lm_beam.validate()?;
        let s2s_beam = BeamConfig {
            beam_width: cfg.usize_or("s2s_beam_width", 8)?,
            clusters: cfg.usize_or("s2s_clusters", 4)?,
            t_max,
            ngram_block: ngram,
            seed: seed ^ 0x517c_c1b7_2722_0a95,
            length_normalize,
        };
        s2s_beam.validate()?;

        let lm_fingerprint = checkpoint_fingerprint(&lm_params)?;
        let s2s_fingerprint = checkpoint_fingerprint(&s2s_params)?;

        Ok(Pipeline {
            vocab,
            lm,
            lm_params,
            s2s,
            s2s_params,
            posterior,
            tones,
            sentiment,
            weights,
            lm_beam,
            s2s_beam,
            antecedent_candidates: cfg.usize_or("antecedent_candidates", 4)?,
            subsequent_candidates: cfg.usize_or("subsequent_candidates", 4)?,
            seed,
            lm_fingerprint,
            s2s_fingerprint,
            log: Mutex::new(LogSink { path: cfg.path("log", "generations.jsonl") }),
        })
    }

    /// Full three-stage generation for a 4-character input. Appends one
    /// record to the generation log.
    pub fn run_generate(&self, input: &str, sample: bool) -> Result<GenerationOutput> {
        let heads = if sample {
            let mut rng = RngState::new(self.seed);
            select_heads_sampled(input, &self.posterior, &self.vocab, &mut rng)
        } else {
            select_heads(input, &self.posterior, &self.vocab)
        }
        .map_err(|e| anyhow!("head selection: {e}"))?;

        let ranked = self.pool_for_heads(heads.k1_id, heads.k2_id).map_err(|e| anyhow!("{e}"))?;
        let output = GenerationOutput { heads, best: ranked[0].clone(), pool: ranked };
        self.append_log(input, &output)?;
        Ok(output)
    }

    /// Generate and rank the candidate pool for already-chosen head tokens.
    /// Stage failures carry the stage name in the message.
    pub fn pool_for_heads(
        &self,
        k1_id: usize,
        k2_id: usize,
    ) -> couplet_core::Result<Vec<ScoredCouplet>> {
        use couplet_core::CoupletError;
        fn stage(name: &'static str) -> impl Fn(CoupletError) -> CoupletError {
            move |e| CoupletError::Decode(format!("{name}: {e}"))
        }

        let antecedents = self
            .lm
            .generate_antecedent(&self.lm_params, &self.vocab, k1_id, &self.lm_beam)
            .map_err(stage("antecedent generation"))?;

        let mut pool: Vec<Candidate> = Vec::new();
        for ant in antecedents.iter().take(self.antecedent_candidates) {
            let subsequents = self
                .s2s
                .generate_subsequent(
                    &self.s2s_params,
                    &self.vocab,
                    ant.content(),
                    k2_id,
                    &self.s2s_beam,
                )
                .map_err(stage("subsequent generation"))?;
            for sub in subsequents.iter().take(self.subsequent_candidates) {
                pool.push(Candidate {
                    antecedent: self.vocab.decode(ant.content()),
                    subsequent: self.vocab.decode(sub.content()),
                    logprob: ant.logprob + sub.logprob,
                });
            }
        }
        if pool.is_empty() {
            return Err(CoupletError::Decode("re-ranking: empty candidate pool".into()));
        }
        rerank(&pool, &self.weights, &self.tones, &self.sentiment).map_err(stage("re-ranking"))
    }

    /// Best couplet for explicit head characters; no log entry. Used by the
    /// evaluation harness, which regenerates each test pair from its heads.
    pub fn couplet_for_heads(&self, k1: char, k2: char) -> couplet_core::Result<(String, String)> {
        use couplet_core::CoupletError;
        let k1_id = self
            .vocab
            .id_of(k1)
            .ok_or_else(|| CoupletError::Argument(format!("head `{k1}` not in vocabulary")))?;
        let k2_id = self
            .vocab
            .id_of(k2)
            .ok_or_else(|| CoupletError::Argument(format!("head `{k2}` not in vocabulary")))?;
        let ranked = self.pool_for_heads(k1_id, k2_id)?;
        let best = &ranked[0].candidate;
        Ok((best.antecedent.clone(), best.subsequent.clone()))
    }

    fn append_log(&self, input: &str, out: &GenerationOutput) -> Result<()> {
        let record = GenerationRecord {
            ts: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            input: input.trim().to_string(),
            heads: [out.heads.k1.to_string(), out.heads.k2.to_string()],
            best: CoupletDto::from_scored(&out.best),
            pool: out.pool.iter().map(CoupletDto::from_scored).collect(),
        };
        let sink = self.log.lock().expect("log mutex poisoned");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&sink.path)
            .with_context(|| format!("cannot open generation log {}", sink.path.display()))?;
        let line = serde_json::to_string(&record)?;
        writeln!(file, "{line}")?;
        Ok(())
    }
}
