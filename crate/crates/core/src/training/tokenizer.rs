use std::collections::HashMap;
use std::sync::RwLock;

use super::TrainingError;
use crate::decision::SILENT_TOKEN;

pub type TokenId = u32;

/// A token with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub start: usize,
    pub end: usize,
}

/// Text to token ids and back. Implementations must render the silent token
/// as exactly one token.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, TrainingError>;
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, TrainingError>;
    fn silent_token_id(&self) -> TokenId;
}

/// Whitespace and punctuation splitter.
///
/// Runs of alphanumeric characters form one token; every other
/// non-whitespace character is its own token. Ids are FNV-1a hashes of the
/// token text, so they are stable across processes and thread orderings.
#[derive(Debug, Default)]
pub struct BasicTokenizer {
    vocab: RwLock<HashMap<TokenId, String>>,
}

fn fnv1a(s: &str) -> TokenId {
    let mut h: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

impl BasicTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Spans only, without interning.
    pub fn spans(text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut word: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                word.get_or_insert(i);
                continue;
            }
            if let Some(start) = word.take() {
                spans.push((start, i));
            }
            if !c.is_whitespace() {
                spans.push((i, i + c.len_utf8()));
            }
        }
        if let Some(start) = word {
            spans.push((start, text.len()));
        }
        spans
    }

    fn intern(&self, piece: &str) -> Result<TokenId, TrainingError> {
        let id = fnv1a(piece);
        if let Some(existing) = self.vocab.read().expect("vocab lock").get(&id) {
            if existing != piece {
                return Err(TrainingError::Tokenization(format!("id collision between {existing:?} and {piece:?}")));
            }
            return Ok(id);
        }
        self.vocab.write().expect("vocab lock").insert(id, piece.to_string());
        Ok(id)
    }
}

impl Tokenizer for BasicTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, TrainingError> {
        Self::spans(text)
            .into_iter()
            .map(|(start, end)| Ok(Token { id: self.intern(&text[start..end])?, start, end }))
            .collect()
    }

    /// Tokens joined by single spaces.
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, TrainingError> {
        let vocab = self.vocab.read().expect("vocab lock");
        let pieces = ids
            .iter()
            .map(|id| vocab.get(id).map(String::as_str).ok_or(TrainingError::UnknownToken(*id)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(pieces.join(" "))
    }

    fn silent_token_id(&self) -> TokenId {
        fnv1a(SILENT_TOKEN)
    }
}
