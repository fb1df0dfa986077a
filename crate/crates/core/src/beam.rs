//! Cluster-based beam search.
//!
//! Ordinary beam search keeps the globally best partial sequences, which
//! tend to be near-duplicates. Here, each step's extended candidate pool is
//! clustered by k-means over the candidates' mean token embeddings, and the
//! survivor budget is spent per cluster (top `BW/K` of each), so distinct
//! "directions" survive side by side. Candidates with a repeated n-gram or
//! an `<unk>` token are dropped as they appear.

use std::cmp::Ordering;

use crate::error::{CoupletError, Result};
use crate::kmeans::kmeans;
use crate::rng::RngState;
use crate::tensor::Tensor2D;
use crate::vocab::TokenId;

/// Next-token distribution source driving a decode. States are cheap to
/// clone and advancing is pure, so hypotheses can fan out freely.
pub trait Scorer {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Consume the initial token prefix; returns the resulting state and
    /// the log-probability distribution over the next token.
    fn begin(&self, prefix: &[TokenId]) -> (Self::State, Vec<f64>);

    /// Feed one more token; returns the successor state and the
    /// distribution over the token after it.
    fn advance(&self, state: &Self::State, tok: TokenId) -> (Self::State, Vec<f64>);
}

/// Adapter turning a pure `prefix -> log-probs` function into a scorer.
pub struct FnScorer<F> {
    pub vocab: usize,
    pub f: F,
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> Scorer for FnScorer<F> {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn begin(&self, prefix: &[TokenId]) -> (Self::State, Vec<f64>) {
        (prefix.to_vec(), (self.f)(prefix))
    }

    fn advance(&self, state: &Self::State, tok: TokenId) -> (Self::State, Vec<f64>) {
        let mut next = state.clone();
        next.push(tok);
        let dist = (self.f)(&next);
        (next, dist)
    }
}

#[derive(Debug, Clone)]
pub struct BeamConfig {
    /// Beam width: survivors kept per step and completed hypotheses wanted.
    pub beam_width: usize,
    /// k-means cluster count; must divide `beam_width`.
    pub clusters: usize,
    /// Hard cap on extension rounds.
    pub t_max: usize,
    /// Order of the repeated-n-gram filter.
    pub ngram_block: usize,
    /// Seed for the per-step clustering.
    pub seed: u64,
    /// Rank final results by `logprob / content_len` instead of raw logprob.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 8,
            clusters: 4,
            t_max: 16,
            ngram_block: 2,
            seed: 0,
            length_normalize: false,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(CoupletError::Argument("beam width must be at least 1".into()));
        }
        if self.clusters < 1 || self.clusters > self.beam_width {
            return Err(CoupletError::Argument(format!(
                "cluster count must be in [1, beam width], got {}",
                self.clusters
            )));
        }
        if !self.beam_width.is_multiple_of(self.clusters) {
            return Err(CoupletError::Argument(format!(
                "beam width {} must be a multiple of cluster count {}",
                self.beam_width, self.clusters
            )));
        }
        if self.t_max < 1 {
            return Err(CoupletError::Argument("t_max must be at least 1".into()));
        }
        if self.ngram_block < 2 {
            return Err(CoupletError::Argument("n-gram block order must be at least 2".into()));
        }
        Ok(())
    }
}

/// What the decode is asked to produce: the fixed opening tokens, content
/// length bounds (`<eos>` excluded, opening included), and the two reserved
/// ids. `<eos>` is masked while a hypothesis is shorter than `min_len` and
/// forced once it reaches `max_len`.
#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub init: Vec<TokenId>,
    pub min_len: usize,
    pub max_len: usize,
    pub eos: TokenId,
    pub unk: TokenId,
}

/// A partial or complete decode.
#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub state: S,
    /// Cached log-prob distribution over the next token (empty once complete).
    dist: Vec<f64>,
    /// Arithmetic mean of the embeddings of `tokens`; the clustering feature.
    pub mean_emb: Vec<f64>,
    pub complete: bool,
}

/// A finished decode: tokens end with `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Completed {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
}

impl Completed {
    /// Tokens without the trailing `<eos>`.
    pub fn content(&self) -> &[TokenId] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

fn mean_emb_update(mean: &[f64], count: usize, emb: &[f64]) -> Vec<f64> {
    let next = count as f64 + 1.0;
    mean.iter().zip(emb.iter()).map(|(m, e)| (m * count as f64 + e) / next).collect()
}

fn check_distribution(dist: &[f64], vocab: usize) -> Result<()> {
    if dist.len() != vocab {
        return Err(CoupletError::Numeric(format!(
            "scorer produced {} log-probs for a vocabulary of {vocab}",
            dist.len()
        )));
    }
    let mut sum = 0.0;
    for &lp in dist {
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(CoupletError::Numeric("scorer produced NaN or +inf log-prob".into()));
        }
        sum += lp.exp();
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CoupletError::Numeric(format!(
            "scorer log-probs sum to {sum}, not a distribution"
        )));
    }
    Ok(())
}

fn hyp_order<S>(a: &Hypothesis<S>, b: &Hypothesis<S>) -> Ordering {
    b.logprob
        .partial_cmp(&a.logprob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Extend every live hypothesis by its `2 * beam_width` best next tokens
/// under the request's `<eos>` masking/forcing. Children keep the parent's
/// logprob plus the chosen token's log-probability; masked or
/// zero-probability tokens are never materialized.
pub fn extend<S: Scorer>(
    live: &[Hypothesis<S::State>],
    scorer: &S,
    cfg: &BeamConfig,
    req: &DecodeRequest,
) -> Result<Vec<Hypothesis<S::State>>> {
    let mut pool = Vec::new();
    let top_n = 2 * cfg.beam_width;
    for hyp in live {
        debug_assert!(!hyp.complete, "extend expects incomplete hypotheses");
        let content_len = hyp.tokens.len();
        let mut order: Vec<TokenId> = Vec::with_capacity(hyp.dist.len());
        if content_len >= req.max_len {
            order.push(req.eos);
        } else {
            for tok in 0..hyp.dist.len() {
                if tok == req.eos && content_len < req.min_len {
                    continue;
                }
                if hyp.dist[tok] != f64::NEG_INFINITY {
                    order.push(tok);
                }
            }
            order.sort_by(|&x, &y| {
                hyp.dist[y].partial_cmp(&hyp.dist[x]).unwrap_or(Ordering::Equal).then(x.cmp(&y))
            });
            order.truncate(top_n);
        }
        for tok in order {
            let lp = hyp.dist[tok];
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let mut tokens = hyp.tokens.clone();
            tokens.push(tok);
            if tok == req.eos {
                pool.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + lp,
                    state: hyp.state.clone(),
                    dist: Vec::new(),
                    mean_emb: hyp.mean_emb.clone(), // updated by the caller, which owns the table
                    complete: true,
                });
            } else {
                let (state, dist) = scorer.advance(&hyp.state, tok);
                check_distribution(&dist, scorer.vocab_size())?;
                pool.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + lp,
                    state,
                    dist,
                    mean_emb: hyp.mean_emb.clone(),
                    complete: false,
                });
            }
        }
    }
    Ok(pool)
}

/// Drop candidates whose freshly appended n-gram already occurs earlier in
/// their own token sequence, and candidates containing `<unk>`.
pub fn prune_invalid<S>(
    pool: Vec<Hypothesis<S>>,
    ngram: usize,
    unk: TokenId,
) -> Vec<Hypothesis<S>> {
    pool.into_iter()
        .filter(|hyp| {
            if hyp.tokens.contains(&unk) {
                return false;
            }
            let len = hyp.tokens.len();
            if len < ngram + 1 {
                return true;
            }
            let last = &hyp.tokens[len - ngram..];
            !hyp.tokens[..len - 1].windows(ngram).any(|w| w == last)
        })
        .collect()
}

/// Run the full cluster-based beam search and return every completed
/// hypothesis, best first. `emb` is the embedding table used for the
/// clustering feature (one row per token id).
pub fn cbs_decode<S: Scorer>(
    scorer: &S,
    emb: &Tensor2D,
    req: &DecodeRequest,
    cfg: &BeamConfig,
) -> Result<Vec<Completed>> {
    cfg.validate()?;
    if req.init.is_empty() {
        return Err(CoupletError::Argument("decode needs a nonempty initial prefix".into()));
    }
    if req.min_len < 1 || req.min_len > req.max_len || req.init.len() > req.max_len {
        return Err(CoupletError::Argument(format!(
            "inconsistent length bounds: init {}, min {}, max {}",
            req.init.len(),
            req.min_len,
            req.max_len
        )));
    }
    if emb.rows() < scorer.vocab_size() {
        return Err(CoupletError::Shape {
            op: "cbs_decode".into(),
            detail: format!(
                "embedding table has {} rows for a vocabulary of {}",
                emb.rows(),
                scorer.vocab_size()
            ),
        });
    }

    let (state, dist) = scorer.begin(&req.init);
    check_distribution(&dist, scorer.vocab_size())?;
    let mut mean = vec![0.0; emb.cols()];
    for (i, &tok) in req.init.iter().enumerate() {
        mean = mean_emb_update(&mean, i, emb.row(tok));
    }
    let mut live = vec![Hypothesis {
        tokens: req.init.clone(),
        logprob: 0.0,
        state,
        dist,
        mean_emb: mean,
        complete: false,
    }];
    let mut done: Vec<Hypothesis<S::State>> = Vec::new();
    let rng = RngState::new(cfg.seed);
    let per_cluster = cfg.beam_width / cfg.clusters;

    for step in 1..=cfg.t_max {
        if done.len() >= cfg.beam_width || live.is_empty() {
            break;
        }
        let mut pool = extend(&live, scorer, cfg, req)?;
        for hyp in pool.iter_mut() {
            let appended = *hyp.tokens.last().unwrap();
            hyp.mean_emb = mean_emb_update(&hyp.mean_emb, hyp.tokens.len() - 1, emb.row(appended));
        }
        let pool = prune_invalid(pool, cfg.ngram_block, req.unk);
        if pool.is_empty() {
            break;
        }

        let points: Vec<Vec<f64>> = pool.iter().map(|h| h.mean_emb.clone()).collect();
        let assignment = kmeans(&points, cfg.clusters, rng.fork(step as u64).seed());
        let n_clusters = assignment.iter().copied().max().unwrap_or(0) + 1;

        let mut clusters: Vec<Vec<Hypothesis<S::State>>> = (0..n_clusters).map(|_| Vec::new()).collect();
        for (hyp, c) in pool.into_iter().zip(assignment) {
            clusters[c].push(hyp);
        }
        live = Vec::new();
        for members in clusters.iter_mut() {
            members.sort_by(hyp_order);
            for hyp in members.drain(..).take(per_cluster) {
                if hyp.complete {
                    done.push(hyp);
                } else {
                    live.push(hyp);
                }
            }
        }
        live.sort_by(hyp_order);
    }

    if done.is_empty() {
        return Err(CoupletError::Decode(format!(
            "no complete hypothesis within {} steps (beam width {})",
            cfg.t_max, cfg.beam_width
        )));
    }
    if cfg.length_normalize {
        done.sort_by(|a, b| {
            let na = a.logprob / (a.tokens.len() - 1) as f64;
            let nb = b.logprob / (b.tokens.len() - 1) as f64;
            nb.partial_cmp(&na).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens))
        });
    } else {
        done.sort_by(hyp_order);
    }
    Ok(done.into_iter().map(|h| Completed { tokens: h.tokens, logprob: h.logprob }).collect())
}
