//! Token vocabularies. Source vocabularies carry a blank at id 0 followed by a
//! contiguous content block, so the alignment head can emit over the prefix
//! `0..=n_content` with no index remapping; bookkeeping symbols sit at the
//! tail. Target vocabularies have no blank.

use crate::error::{LutError, Result};
use std::fs;
use std::path::Path;

pub const BLANK_TOK: &str = "<blk>";
pub const PAD_TOK: &str = "<pad>";
pub const SOS_TOK: &str = "<sos>";
pub const EOS_TOK: &str = "<eos>";
pub const UNK_TOK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    pub blank: Option<usize>,
    pub pad: usize,
    pub sos: usize,
    pub eos: usize,
    pub unk: usize,
    /// First content id; content ids are contiguous.
    pub content_start: usize,
    pub n_content: usize,
}

impl Vocab {
    /// Source-side vocabulary: `<blk> s0 .. s{n-1} <pad> <sos> <eos> <unk>`.
    pub fn source(n_content: usize) -> Self {
        let mut tokens = vec![BLANK_TOK.to_string()];
        tokens.extend((0..n_content).map(|i| format!("s{i}")));
        tokens.extend([PAD_TOK, SOS_TOK, EOS_TOK, UNK_TOK].map(String::from));
        Vocab {
            tokens,
            blank: Some(0),
            pad: n_content + 1,
            sos: n_content + 2,
            eos: n_content + 3,
            unk: n_content + 4,
            content_start: 1,
            n_content,
        }
    }

    /// Target-side vocabulary: `<pad> <sos> <eos> <unk> t0 .. t{n-1}`.
    pub fn target(n_content: usize) -> Self {
        let mut tokens = [PAD_TOK, SOS_TOK, EOS_TOK, UNK_TOK]
            .map(String::from)
            .to_vec();
        tokens.extend((0..n_content).map(|i| format!("t{i}")));
        Vocab {
            tokens,
            blank: None,
            pad: 0,
            sos: 1,
            eos: 2,
            unk: 3,
            content_start: 4,
            n_content,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Width of the frame-level emission head: blank plus the content block.
    pub fn ctc_width(&self) -> Result<usize> {
        match self.blank {
            Some(0) => Ok(1 + self.n_content),
            _ => Err(LutError::Config("ctc head needs a source vocab with blank at id 0".into())),
        }
    }

    pub fn content_id(&self, index: usize) -> usize {
        debug_assert!(index < self.n_content);
        self.content_start + index
    }

    pub fn content_index(&self, id: usize) -> Option<usize> {
        (id >= self.content_start && id < self.content_start + self.n_content)
            .then(|| id - self.content_start)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Map a token to its id, falling back to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(self.unk)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Token ids the translation decoder may emit: everything except pad and
    /// sos, in ascending id order.
    pub fn decode_candidates(&self) -> Vec<usize> {
        (0..self.size())
            .filter(|&i| i != self.pad && i != self.sos && Some(i) != self.blank)
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let find = |tok: &str| {
            tokens
                .iter()
                .position(|t| t == tok)
                .ok_or_else(|| LutError::Corrupt {
                    kind: "vocab",
                    detail: format!("missing reserved token {tok}"),
                })
        };
        let blank = tokens.iter().position(|t| t == BLANK_TOK);
        if let Some(b) = blank {
            if b != 0 {
                return Err(LutError::Corrupt {
                    kind: "vocab",
                    detail: format!("{BLANK_TOK} must be id 0, found at {b}"),
                });
            }
        }
        let pad = find(PAD_TOK)?;
        let sos = find(SOS_TOK)?;
        let eos = find(EOS_TOK)?;
        let unk = find(UNK_TOK)?;
        let reserved = [Some(pad), Some(sos), Some(eos), Some(unk), blank];
        let content: Vec<usize> = (0..tokens.len())
            .filter(|i| !reserved.contains(&Some(*i)))
            .collect();
        let content_start = content.first().copied().unwrap_or(tokens.len());
        if content
            .iter()
            .enumerate()
            .any(|(k, &id)| id != content_start + k)
        {
            return Err(LutError::Corrupt {
                kind: "vocab",
                detail: "content token ids are not contiguous".into(),
            });
        }
        Ok(Vocab {
            tokens,
            blank,
            pad,
            sos,
            eos,
            unk,
            content_start,
            n_content: content.len(),
        })
    }
}
