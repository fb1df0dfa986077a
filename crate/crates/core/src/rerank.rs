//! Rule-based scoring and ranking of candidate couplets.
//!
//! Each candidate receives four component scores in `[0, 1]`:
//!
//! - length: 1 when the two clauses have equal length, else 0;
//! - repetition: `1 - violations / |S1|` clamped to `[0, 1]`, where a
//!   violation is a same-position character match across clauses or an
//!   extra occurrence of a character inside one clause (graded, so a
//!   near-miss still outranks a gross violator);
//! - tone: 1 when the two ending characters have known opposed tones
//!   (either order), 0 when known and equal, 0.5 when either is unknown;
//! - sentiment: mean character polarity over both clauses mapped from
//!   `[-1, 1]` to `[0, 1]`.
//!
//! The total is the weighted sum of the four; the pool is ordered by total,
//! ties broken by generator log-probability and then lexicographically.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CoupletError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tone {
    Level,
    Oblique,
}

/// Character -> level/oblique table. Absent characters read as unknown.
#[derive(Debug, Clone, Default)]
pub struct ToneLexicon {
    map: HashMap<char, Tone>,
}

impl ToneLexicon {
    pub fn lookup(&self, ch: char) -> Option<Tone> {
        self.map.get(&ch).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, ch: char, tone: Tone) {
        self.map.insert(ch, tone);
    }

    /// Parse `char<TAB>L` / `char<TAB>O` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<ToneLexicon> {
        let mut map = HashMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| CoupletError::Format { line: ln + 1, msg: msg.into() };
            if f.len() != 2 {
                return Err(bad("expected `char<TAB>L|O`"));
            }
            let mut cs = f[0].chars();
            let ch = cs.next().ok_or_else(|| bad("empty character"))?;
            if cs.next().is_some() {
                return Err(bad("not a single character"));
            }
            let tone = match f[1] {
                "L" => Tone::Level,
                "O" => Tone::Oblique,
                other => return Err(bad(&format!("unknown tone class `{other}`"))),
            };
            map.insert(ch, tone);
        }
        Ok(ToneLexicon { map })
    }

    pub fn load(path: &Path) -> Result<ToneLexicon> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoupletError::Io(format!("cannot read tone lexicon {}: {e}", path.display())))?;
        ToneLexicon::from_text(&text)
    }
}

/// Character -> polarity (+1/-1) table. Absent characters are neutral.
#[derive(Debug, Clone, Default)]
pub struct SentimentLexicon {
    map: HashMap<char, i8>,
}

impl SentimentLexicon {
    pub fn polarity(&self, ch: char) -> i8 {
        self.map.get(&ch).copied().unwrap_or(0)
    }

    pub fn insert(&mut self, ch: char, polarity: i8) {
        debug_assert!(polarity == 1 || polarity == -1);
        self.map.insert(ch, polarity);
    }

    /// Parse `char<TAB>+1` / `char<TAB>-1` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<SentimentLexicon> {
        let mut map = HashMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| CoupletError::Format { line: ln + 1, msg: msg.into() };
            if f.len() != 2 {
                return Err(bad("expected `char<TAB>+1|-1`"));
            }
            let mut cs = f[0].chars();
            let ch = cs.next().ok_or_else(|| bad("empty character"))?;
            if cs.next().is_some() {
                return Err(bad("not a single character"));
            }
            let polarity = match f[1] {
                "+1" | "1" => 1i8,
                "-1" => -1i8,
                other => return Err(bad(&format!("unknown polarity `{other}`"))),
            };
            map.insert(ch, polarity);
        }
        Ok(SentimentLexicon { map })
    }

    pub fn load(path: &Path) -> Result<SentimentLexicon> {
        let text = fs::read_to_string(path).map_err(|e| {
            CoupletError::Io(format!("cannot read sentiment lexicon {}: {e}", path.display()))
        })?;
        SentimentLexicon::from_text(&text)
    }
}

/// Non-negative weights for the four component scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankWeights {
    pub length: f64,
    pub repetition: f64,
    pub tone: f64,
    pub sentiment: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        RankWeights { length: 0.25, repetition: 0.25, tone: 0.25, sentiment: 0.25 }
    }
}

impl RankWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.length, self.repetition, self.tone, self.sentiment];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(CoupletError::Argument("rank weights must be non-negative".into()));
        }
        if ws.iter().sum::<f64>() <= 0.0 {
            return Err(CoupletError::Argument("rank weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// A generated couplet candidate entering the re-ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub antecedent: String,
    pub subsequent: String,
    /// Combined generator log-probability, used only to break ties.
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentScores {
    pub length: f64,
    pub repetition: f64,
    pub tone: f64,
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCouplet {
    pub candidate: Candidate,
    pub scores: ComponentScores,
    pub total: f64,
}

/// Compute the four component scores for one candidate.
pub fn score_components(
    candidate: &Candidate,
    tones: &ToneLexicon,
    sentiment: &SentimentLexicon,
) -> Result<ComponentScores> {
    let a: Vec<char> = candidate.antecedent.chars().collect();
    let s: Vec<char> = candidate.subsequent.chars().collect();
    if a.is_empty() || s.is_empty() {
        return Err(CoupletError::Argument("cannot score an empty clause".into()));
    }

    let length = if a.len() == s.len() { 1.0 } else { 0.0 };

    let mut violations = 0usize;
    for i in 0..a.len().min(s.len()) {
        if a[i] == s[i] {
            violations += 1;
        }
    }
    for clause in [&a, &s] {
        let mut counts: HashMap<char, usize> = HashMap::new();
        for &ch in clause.iter() {
            *counts.entry(ch).or_insert(0) += 1;
        }
        violations += counts.values().map(|&n| n - 1).sum::<usize>();
    }
    let repetition = (1.0 - violations as f64 / a.len() as f64).clamp(0.0, 1.0);

    let tone = match (tones.lookup(*a.last().unwrap()), tones.lookup(*s.last().unwrap())) {
        (Some(x), Some(y)) if x != y => 1.0,
        (Some(_), Some(_)) => 0.0,
        _ => 0.5,
    };

    let polarity_sum: i64 = a.iter().chain(s.iter()).map(|&ch| sentiment.polarity(ch) as i64).sum();
    let mean = polarity_sum as f64 / (a.len() + s.len()) as f64;
    let sent = (1.0 + mean) / 2.0;

    Ok(ComponentScores { length, repetition, tone, sentiment: sent })
}

/// Weighted sum of the component scores.
pub fn total_score(scores: &ComponentScores, weights: &RankWeights) -> f64 {
    weights.length * scores.length
        + weights.repetition * scores.repetition
        + weights.tone * scores.tone
        + weights.sentiment * scores.sentiment
}

/// Score and order a candidate pool, best couplet first.
pub fn rerank(
    pool: &[Candidate],
    weights: &RankWeights,
    tones: &ToneLexicon,
    sentiment: &SentimentLexicon,
) -> Result<Vec<ScoredCouplet>> {
    if pool.is_empty() {
        return Err(CoupletError::Argument("cannot rank an empty candidate pool".into()));
    }
    weights.validate()?;
    let mut scored: Vec<ScoredCouplet> = pool
        .iter()
        .map(|c| {
            let scores = score_components(c, tones, sentiment)?;
            Ok(ScoredCouplet { total: total_score(&scores, weights), scores, candidate: c.clone() })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|x, y| {
        y.total
            .partial_cmp(&x.total)
            .unwrap_or(Ordering::Equal)
            .then_with(|| y.candidate.logprob.partial_cmp(&x.candidate.logprob).unwrap_or(Ordering::Equal))
            .then_with(|| x.candidate.antecedent.cmp(&y.candidate.antecedent))
            .then_with(|| x.candidate.subsequent.cmp(&y.candidate.subsequent))
    });
    Ok(scored)
}
