//! Selecting the two acrostic head characters from a 4-character user
//! input.
//!
//! For each corpus character we estimate the posterior probability that it
//! opens an antecedent clause, `p = (head_count + a) / (total_count + 2a)`
//! with additive smoothing `a` (the unsmoothed ratio is undefined for
//! unseen characters, which instead get `p = 0` and can never be chosen).
//! The two highest-posterior input characters become the clause heads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CoupletError, Result};
use crate::rng::RngState;
use crate::vocab::{TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadStat {
    pub p: f64,
    pub head_count: u64,
    pub total_count: u64,
}

#[derive(Debug, Clone)]
pub struct HeadPosterior {
    entries: BTreeMap<char, HeadStat>,
    pub alpha: f64,
}

impl HeadPosterior {
    /// Fit from `collect_head_stats` output.
    pub fn fit(stats: &BTreeMap<char, (u64, u64)>, alpha: f64) -> Result<HeadPosterior> {
        if alpha < 0.0 {
            return Err(CoupletError::Argument(format!("smoothing must be non-negative, got {alpha}")));
        }
        let entries = stats
            .iter()
            .map(|(&ch, &(total, head))| {
                let p = (head as f64 + alpha) / (total as f64 + 2.0 * alpha);
                (ch, HeadStat { p, head_count: head, total_count: total })
            })
            .collect();
        Ok(HeadPosterior { entries, alpha })
    }

    /// Posterior for a character; zero for characters absent from the corpus.
    pub fn p(&self, ch: char) -> f64 {
        self.entries.get(&ch).map(|e| e.p).unwrap_or(0.0)
    }

    pub fn stat(&self, ch: char) -> Option<HeadStat> {
        self.entries.get(&ch).copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (ch, e) in &self.entries {
            out.push_str(&format!("{ch}\t{}\t{}\t{}\n", e.p, e.head_count, e.total_count));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())
            .map_err(|e| CoupletError::Io(format!("cannot write head table {}: {e}", path.display())))
    }

    pub fn from_text(text: &str) -> Result<HeadPosterior> {
        let mut entries = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(CoupletError::Format {
                    line: ln + 1,
                    msg: "expected `char<TAB>p<TAB>head<TAB>total`".into(),
                });
            }
            let ch = {
                let mut cs = f[0].chars();
                let ch = cs.next().ok_or(CoupletError::Format { line: ln + 1, msg: "empty char".into() })?;
                if cs.next().is_some() {
                    return Err(CoupletError::Format { line: ln + 1, msg: "not a single character".into() });
                }
                ch
            };
            let p: f64 =
                f[1].parse().map_err(|_| CoupletError::Format { line: ln + 1, msg: "bad p".into() })?;
            let head: u64 =
                f[2].parse().map_err(|_| CoupletError::Format { line: ln + 1, msg: "bad head count".into() })?;
            let total: u64 =
                f[3].parse().map_err(|_| CoupletError::Format { line: ln + 1, msg: "bad total count".into() })?;
            entries.insert(ch, HeadStat { p, head_count: head, total_count: total });
        }
        Ok(HeadPosterior { entries, alpha: f64::NAN })
    }

    pub fn load(path: &Path) -> Result<HeadPosterior> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoupletError::Io(format!("cannot read head table {}: {e}", path.display())))?;
        HeadPosterior::from_text(&text)
    }
}

/// The chosen clause heads. `degenerate` flags the case where no two
/// distinct usable characters existed and one character heads both clauses.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSelection {
    pub k1: char,
    pub k2: char,
    pub k1_id: TokenId,
    pub k2_id: TokenId,
    pub degenerate: bool,
}

struct RankedHead {
    ch: char,
    id: TokenId,
    p: f64,
    freq: u64,
    pos: usize,
}

fn usable_ranked(input: &str, posterior: &HeadPosterior, vocab: &Vocab) -> Result<Vec<RankedHead>> {
    let chars: Vec<char> = input.trim().chars().collect();
    if chars.len() != 4 {
        return Err(CoupletError::Argument(format!(
            "input must be exactly 4 characters, got {} in `{}`",
            chars.len(),
            input.trim()
        )));
    }
    let mut usable: Vec<RankedHead> = Vec::new();
    for (pos, &ch) in chars.iter().enumerate() {
        if let Some(id) = vocab.id_of(ch) {
            usable.push(RankedHead { ch, id, p: posterior.p(ch), freq: vocab.freq_of_id(id), pos });
        }
    }
    if usable.len() < 2 {
        return Err(CoupletError::Selection(format!(
            "need at least 2 vocabulary characters in the input, found {}",
            usable.len()
        )));
    }
    // posterior desc, corpus frequency desc, input order
    usable.sort_by(|a, b| {
        b.p.partial_cmp(&a.p).unwrap().then(b.freq.cmp(&a.freq)).then(a.pos.cmp(&b.pos))
    });
    Ok(usable)
}

/// Deterministic top-2 selection: the highest-posterior character heads the
/// antecedent, the runner-up (preferring a distinct character) heads the
/// subsequent clause.
pub fn select_heads(input: &str, posterior: &HeadPosterior, vocab: &Vocab) -> Result<HeadSelection> {
    let usable = usable_ranked(input, posterior, vocab)?;
    let (k1, k1_id) = (usable[0].ch, usable[0].id);
    let second = usable[1..].iter().find(|c| c.ch != k1);
    let (k2, k2_id, degenerate) = match second {
        Some(c) => (c.ch, c.id, false),
        None => (k1, k1_id, true),
    };
    Ok(HeadSelection { k1, k2, k1_id, k2_id, degenerate })
}

/// Posterior-weighted sampling variant (two draws without replacement over
/// distinct characters). Falls back to the deterministic rule when every
/// usable character has zero posterior.
pub fn select_heads_sampled(
    input: &str,
    posterior: &HeadPosterior,
    vocab: &Vocab,
    rng: &mut RngState,
) -> Result<HeadSelection> {
    let usable = usable_ranked(input, posterior, vocab)?;
    let mut distinct: Vec<(char, TokenId, f64)> = Vec::new();
    for c in &usable {
        if !distinct.iter().any(|d| d.0 == c.ch) {
            distinct.push((c.ch, c.id, c.p));
        }
    }
    let total: f64 = distinct.iter().map(|d| d.2).sum();
    if distinct.len() < 2 || total <= 0.0 {
        return select_heads(input, posterior, vocab);
    }
    let mut draw = |pool: &[(char, TokenId, f64)]| -> usize {
        let sum: f64 = pool.iter().map(|d| d.2).sum();
        if sum <= 0.0 {
            return 0;
        }
        let mut target = rng.next_f64() * sum;
        for (i, d) in pool.iter().enumerate() {
            if target < d.2 {
                return i;
            }
            target -= d.2;
        }
        pool.len() - 1
    };
    let first = draw(&distinct);
    let (k1, k1_id, _) = distinct.remove(first);
    let second = draw(&distinct);
    let (k2, k2_id, _) = distinct[second];
    Ok(HeadSelection { k1, k2, k1_id, k2_id, degenerate: false })
}
