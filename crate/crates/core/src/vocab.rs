//! Character vocabulary with reserved `<unk>` / `<eos>` symbols.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::RawCouplet;
use crate::error::{CoupletError, Result};

pub type TokenId = usize;

pub const UNK_SYMBOL: &str = "<unk>";
pub const EOS_SYMBOL: &str = "<eos>";

/// Bijection between kept characters and dense ids, plus the two reserved
/// symbols appended after the characters. Ids are assigned by descending
/// corpus frequency, ties broken by code point, so the same corpus always
/// produces the same vocabulary.
#[derive(Debug, Clone)]
pub struct Vocab {
    id_to_char: Vec<char>,
    char_to_id: HashMap<char, TokenId>,
    freq: Vec<u64>,
    unk_id: TokenId,
    eos_id: TokenId,
}

impl Vocab {
    /// Count characters over both clauses and keep those with frequency at
    /// least `min_freq`.
    pub fn build(corpus: &[RawCouplet], min_freq: u64) -> Result<Vocab> {
        if corpus.is_empty() {
            return Err(CoupletError::Argument("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<char, u64> = HashMap::new();
        for pair in corpus {
            for &ch in pair.antecedent.iter().chain(pair.subsequent.iter()) {
                *counts.entry(ch).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(char, u64)> =
            counts.into_iter().filter(|&(_, n)| n >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut id_to_char = Vec::with_capacity(kept.len());
        let mut freq = Vec::with_capacity(kept.len() + 2);
        let mut char_to_id = HashMap::with_capacity(kept.len());
        for (i, (ch, n)) in kept.iter().enumerate() {
            id_to_char.push(*ch);
            freq.push(*n);
            char_to_id.insert(*ch, i);
        }
        let unk_id = id_to_char.len();
        let eos_id = unk_id + 1;
        freq.push(0);
        freq.push(0);
        Ok(Vocab { id_to_char, char_to_id, freq, unk_id, eos_id })
    }

    /// Total id count, reserved symbols included.
    pub fn size(&self) -> usize {
        self.id_to_char.len() + 2
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn id_of(&self, ch: char) -> Option<TokenId> {
        self.char_to_id.get(&ch).copied()
    }

    pub fn contains(&self, ch: char) -> bool {
        self.char_to_id.contains_key(&ch)
    }

    pub fn freq_of_id(&self, id: TokenId) -> u64 {
        self.freq[id]
    }

    pub fn char_of(&self, id: TokenId) -> Option<char> {
        self.id_to_char.get(id).copied()
    }

    /// Printable form of an id; reserved ids render as their symbols.
    pub fn display(&self, id: TokenId) -> String {
        if id == self.unk_id {
            UNK_SYMBOL.to_string()
        } else if id == self.eos_id {
            EOS_SYMBOL.to_string()
        } else {
            self.id_to_char[id].to_string()
        }
    }

    /// Encode characters to ids; unknown characters map to `<unk>`.
    pub fn encode(&self, text: &[char]) -> Vec<TokenId> {
        text.iter().map(|ch| self.id_of(*ch).unwrap_or(self.unk_id)).collect()
    }

    pub fn encode_str(&self, text: &str) -> Vec<TokenId> {
        let chars: Vec<char> = text.chars().collect();
        self.encode(&chars)
    }

    /// Decode ids back to text; reserved ids render as their symbols.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.display(id)).collect()
    }

    /// Serialize as `char<TAB>id<TAB>freq` lines, reserved symbols last.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, ch) in self.id_to_char.iter().enumerate() {
            out.push_str(&format!("{ch}\t{id}\t{}\n", self.freq[id]));
        }
        out.push_str(&format!("{UNK_SYMBOL}\t{}\t0\n", self.unk_id));
        out.push_str(&format!("{EOS_SYMBOL}\t{}\t0\n", self.eos_id));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())
            .map_err(|e| CoupletError::Io(format!("cannot write vocab {}: {e}", path.display())))
    }

    pub fn from_text(text: &str) -> Result<Vocab> {
        let mut id_to_char = Vec::new();
        let mut char_to_id = HashMap::new();
        let mut freq = Vec::new();
        let mut unk_id = None;
        let mut eos_id = None;
        for (ln, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CoupletError::Format {
                    line: ln + 1,
                    msg: format!("expected `char<TAB>id<TAB>freq`, got `{line}`"),
                });
            }
            let id: usize = fields[1]
                .parse()
                .map_err(|_| CoupletError::Format { line: ln + 1, msg: "bad id".into() })?;
            let n: u64 = fields[2]
                .parse()
                .map_err(|_| CoupletError::Format { line: ln + 1, msg: "bad frequency".into() })?;
            if id != freq.len() {
                return Err(CoupletError::Format {
                    line: ln + 1,
                    msg: format!("ids must be dense and ordered, got {id}"),
                });
            }
            match fields[0] {
                UNK_SYMBOL => unk_id = Some(id),
                EOS_SYMBOL => eos_id = Some(id),
                s => {
                    let mut chars = s.chars();
                    let ch = chars.next().ok_or(CoupletError::Format {
                        line: ln + 1,
                        msg: "empty character field".into(),
                    })?;
                    if chars.next().is_some() {
                        return Err(CoupletError::Format {
                            line: ln + 1,
                            msg: format!("`{s}` is not a single character"),
                        });
                    }
                    char_to_id.insert(ch, id);
                    id_to_char.push(ch);
                }
            }
            freq.push(n);
        }
        match (unk_id, eos_id) {
            (Some(u), Some(e)) if u == id_to_char.len() && e == u + 1 => {
                Ok(Vocab { id_to_char, char_to_id, freq, unk_id: u, eos_id: e })
            }
            _ => Err(CoupletError::Format {
                line: 0,
                msg: "vocab must end with <unk> then <eos>".into(),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoupletError::Io(format!("cannot read vocab {}: {e}", path.display())))?;
        Vocab::from_text(&text)
    }
}
