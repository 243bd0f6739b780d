//! Hashing-trick tokenizer.
//!
//! Text is split into maximal runs of alphanumeric characters (anything else,
//! whitespace or punctuation, is a boundary), optionally lowercased, and each
//! token is mapped to a bucket with 64-bit FNV-1a over its UTF-8 bytes modulo
//! `vocab_buckets`.

use serde::{Deserialize, Serialize};

use super::CorpusError;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const DEFAULT_VOCAB_BUCKETS: usize = 1 << 16;
pub const DEFAULT_QUERY_MAX_LEN: usize = 64;
pub const DEFAULT_DOC_MAX_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_buckets: usize,
    pub query_max_len: usize,
    pub doc_max_len: usize,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_buckets: DEFAULT_VOCAB_BUCKETS,
            query_max_len: DEFAULT_QUERY_MAX_LEN,
            doc_max_len: DEFAULT_DOC_MAX_LEN,
            lowercase: true,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.vocab_buckets < 2 || self.vocab_buckets > u32::MAX as usize {
            return Err(CorpusError::Config(format!(
                "vocab_buckets must be in [2, 2^32), got {}",
                self.vocab_buckets
            )));
        }
        if self.query_max_len == 0 || self.doc_max_len == 0 {
            return Err(CorpusError::Config("maximum lengths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_len(&self, role: Role) -> usize {
        match role {
            Role::Query => self.query_max_len,
            Role::Document => self.doc_max_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Document,
}

/// Hashed token ids of one text, truncated to the role's maximum length.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
    original_length: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, original_length: usize) -> Self {
        debug_assert!(ids.len() <= original_length);
        Self { ids, original_length }
    }

    /// Sequence with no tokens; used for flagged empty documents.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn is_truncated(&self) -> bool {
        self.original_length > self.ids.len()
    }
}

/// 64-bit FNV-1a hash of `token`, reduced to `[0, buckets)`.
pub fn hash_token(token: &str, buckets: usize) -> u32 {
    let mut hash = FNV_OFFSET;
    for byte in token.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    (hash % buckets as u64) as u32
}

/// Splits on whitespace and punctuation; returns the surface tokens.
pub fn split_tokens(text: &str, lowercase: bool) -> Vec<String> {
    let source = if lowercase { text.to_lowercase() } else { text.to_owned() };
    source
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn tokenize(text: &str, role: Role, config: &TokenizerConfig) -> Result<TokenSequence, CorpusError> {
    config.validate()?;
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let tokens = split_tokens(text, config.lowercase);
    if tokens.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let original_length = tokens.len();
    let ids = tokens
        .iter()
        .take(config.max_len(role))
        .map(|t| hash_token(t, config.vocab_buckets))
        .collect();
    Ok(TokenSequence::new(ids, original_length))
}
