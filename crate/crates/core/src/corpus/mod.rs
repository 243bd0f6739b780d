//! Documents, queries, relevance judgments and their tokenized forms.

mod synthetic;
mod tokenize;
mod tsv;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synthetic::{generate_synthetic_corpus, SyntheticConfig};
pub use tokenize::{
    hash_token, split_tokens, tokenize, Role, TokenSequence, TokenizerConfig, DEFAULT_DOC_MAX_LEN,
    DEFAULT_QUERY_MAX_LEN, DEFAULT_VOCAB_BUCKETS,
};
pub use tsv::{
    load_dir, load_tsv_corpus, write_dir, write_tsv_corpus, CorpusPaths, DOCS_FILE, DEV_QRELS_FILE,
    DEV_QUERIES_FILE, TOKEN_CACHE_FILE, TRAIN_QRELS_FILE, TRAIN_QUERIES_FILE,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}:{line}: {message}", file.display())]
    Parse { file: PathBuf, line: usize, message: String },
    #[error("{}: {}", file.display(), format_dangling(dangling))]
    Integrity { file: PathBuf, dangling: Vec<DanglingRef> },
    #[error("empty input text")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("field of {id:?} cannot be written as TSV: {reason}")]
    Unwritable { id: String, reason: &'static str },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn format_dangling(refs: &[DanglingRef]) -> String {
    let parts: Vec<String> = refs.iter().map(ToString::to_string).collect();
    format!("dangling qrels references: {}", parts.join(", "))
}

/// A qrels row whose query or document is missing from the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DanglingRef {
    pub line: usize,
    pub query_id: String,
    pub doc_id: String,
}

impl fmt::Display for DanglingRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: ({:?}, {:?})", self.line, self.query_id, self.doc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub url: String,
    pub title: String,
    pub body: String,
}

impl Document {
    /// Text fed to the encoder: title and body joined by one space.
    pub fn encoding_text(&self) -> String {
        match (self.title.is_empty(), self.body.is_empty()) {
            (true, _) => self.body.clone(),
            (false, true) => self.title.clone(),
            (false, false) => format!("{} {}", self.title, self.body),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Dev];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

/// Relevance judgments keyed by topic, then candidate.
///
/// For document retrieval topics are queries and candidates are documents;
/// [`Qrels::transposed`] gives the judgments of the query-retrieval task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    by_topic: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment; fails if the pair is already present.
    pub fn insert(&mut self, topic: &str, candidate: &str, relevance: u32) -> Result<(), CorpusError> {
        let row = self.by_topic.entry(topic.to_owned()).or_default();
        if row.contains_key(candidate) {
            return Err(CorpusError::Duplicate {
                kind: "qrels pair",
                id: format!("{topic}/{candidate}"),
            });
        }
        row.insert(candidate.to_owned(), relevance);
        Ok(())
    }

    pub fn relevance(&self, topic: &str, candidate: &str) -> u32 {
        self.by_topic
            .get(topic)
            .and_then(|row| row.get(candidate))
            .copied()
            .unwrap_or(0)
    }

    /// All judged candidates of a topic, including relevance-0 rows.
    pub fn judgments(&self, topic: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_topic.get(topic)
    }

    /// Candidates with relevance at least 1.
    pub fn positives<'a>(&'a self, topic: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.by_topic
            .get(topic)
            .into_iter()
            .flat_map(|row| row.iter())
            .filter(|(_, &rel)| rel >= 1)
            .map(|(c, _)| c.as_str())
    }

    pub fn has_positive(&self, topic: &str) -> bool {
        self.positives(topic).next().is_some()
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.by_topic.keys().map(String::as_str)
    }

    /// Every `(topic, candidate, relevance)` triple in sorted order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.by_topic
            .iter()
            .flat_map(|(t, row)| row.iter().map(move |(c, &r)| (t.as_str(), c.as_str(), r)))
    }

    pub fn len(&self) -> usize {
        self.by_topic.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Swaps the roles of topic and candidate.
    pub fn transposed(&self) -> Qrels {
        let mut out = Qrels::new();
        for (t, c, r) in self.entries() {
            out.by_topic
                .entry(c.to_owned())
                .or_default()
                .insert(t.to_owned(), r);
        }
        out
    }
}

/// An ingested corpus: documents, per-split queries and qrels, and the
/// tokenized sequences of every document and query.
#[derive(Debug, Clone)]
pub struct Corpus {
    tokenizer: TokenizerConfig,
    documents: Vec<Document>,
    doc_tokens: Vec<TokenSequence>,
    doc_index: HashMap<String, usize>,
    queries: BTreeMap<Split, SplitData>,
}

#[derive(Debug, Clone, Default)]
struct SplitData {
    queries: Vec<Query>,
    tokens: Vec<TokenSequence>,
    index: HashMap<String, usize>,
    qrels: Qrels,
}

impl Corpus {
    /// Validates every invariant and tokenizes all texts.
    ///
    /// `qrels_lines` carries the source line of each qrels entry (if known) so
    /// dangling references can be reported against the input file.
    pub fn new(
        tokenizer: TokenizerConfig,
        documents: Vec<Document>,
        train: (Vec<Query>, Qrels),
        dev: (Vec<Query>, Qrels),
    ) -> Result<Self, CorpusError> {
        Self::build(tokenizer, documents, [train, dev], [None, None])
    }

    pub(crate) fn build(
        tokenizer: TokenizerConfig,
        documents: Vec<Document>,
        splits: [(Vec<Query>, Qrels); 2],
        sources: [Option<(PathBuf, HashMap<(String, String), usize>)>; 2],
    ) -> Result<Self, CorpusError> {
        tokenizer.validate()?;
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if d.doc_id.is_empty() {
                return Err(CorpusError::Config(format!("document #{i} has an empty id")));
            }
            if doc_index.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::Duplicate { kind: "document", id: d.doc_id.clone() });
            }
        }
        let doc_tokens = documents
            .iter()
            .map(|d| match tokenize(&d.encoding_text(), Role::Document, &tokenizer) {
                Ok(seq) => Ok(seq),
                Err(CorpusError::EmptyInput) => Ok(TokenSequence::empty()),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut queries = BTreeMap::new();
        for ((split, (qs, qrels)), source) in Split::ALL.into_iter().zip(splits).zip(sources) {
            let mut index = HashMap::with_capacity(qs.len());
            let mut tokens = Vec::with_capacity(qs.len());
            for (i, q) in qs.iter().enumerate() {
                if q.query_id.is_empty() {
                    return Err(CorpusError::Config(format!(
                        "{} query #{i} has an empty id",
                        split.name()
                    )));
                }
                if index.insert(q.query_id.clone(), i).is_some() {
                    return Err(CorpusError::Duplicate { kind: "query", id: q.query_id.clone() });
                }
                let seq = tokenize(&q.text, Role::Query, &tokenizer).map_err(|e| match e {
                    CorpusError::EmptyInput => CorpusError::Config(format!(
                        "{} query {:?} has no tokens",
                        split.name(),
                        q.query_id
                    )),
                    other => other,
                })?;
                tokens.push(seq);
            }
            let mut dangling = Vec::new();
            for (t, c, _) in qrels.entries() {
                if !index.contains_key(t) || !doc_index.contains_key(c) {
                    let line = source
                        .as_ref()
                        .and_then(|(_, lines)| lines.get(&(t.to_owned(), c.to_owned())).copied())
                        .unwrap_or(0);
                    dangling.push(DanglingRef { line, query_id: t.to_owned(), doc_id: c.to_owned() });
                }
            }
            if !dangling.is_empty() {
                dangling.sort_by_key(|d| d.line);
                let file = source
                    .map(|(p, _)| p)
                    .unwrap_or_else(|| PathBuf::from(format!("<{} qrels>", split.name())));
                return Err(CorpusError::Integrity { file, dangling });
            }
            queries.insert(split, SplitData { queries: qs, tokens, index, qrels });
        }

        Ok(Self { tokenizer, documents, doc_tokens, doc_index, queries })
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn doc_position(&self, doc_id: &str) -> Option<usize> {
        self.doc_index.get(doc_id).copied()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_position(doc_id).map(|i| &self.documents[i])
    }

    pub fn doc_tokens(&self, doc_id: &str) -> Option<&TokenSequence> {
        self.doc_position(doc_id).map(|i| &self.doc_tokens[i])
    }

    pub fn doc_tokens_at(&self, position: usize) -> &TokenSequence {
        &self.doc_tokens[position]
    }

    /// Documents whose title and body produce no tokens.
    pub fn is_empty_doc(&self, doc_id: &str) -> bool {
        self.doc_tokens(doc_id).is_some_and(TokenSequence::is_empty)
    }

    pub fn empty_doc_ids(&self) -> Vec<&str> {
        self.documents
            .iter()
            .zip(&self.doc_tokens)
            .filter(|(_, t)| t.is_empty())
            .map(|(d, _)| d.doc_id.as_str())
            .collect()
    }

    /// Documents that can be encoded, in corpus order.
    pub fn encodable_docs(&self) -> impl Iterator<Item = (&Document, &TokenSequence)> {
        self.documents.iter().zip(&self.doc_tokens).filter(|(_, t)| !t.is_empty())
    }

    pub fn queries(&self, split: Split) -> &[Query] {
        &self.queries[&split].queries
    }

    pub fn query_tokens(&self, split: Split, query_id: &str) -> Option<&TokenSequence> {
        let data = &self.queries[&split];
        data.index.get(query_id).map(|&i| &data.tokens[i])
    }

    pub fn query_tokens_at(&self, split: Split, position: usize) -> &TokenSequence {
        &self.queries[&split].tokens[position]
    }

    pub fn query(&self, split: Split, query_id: &str) -> Option<&Query> {
        let data = &self.queries[&split];
        data.index.get(query_id).map(|&i| &data.queries[i])
    }

    pub fn qrels(&self, split: Split) -> &Qrels {
        &self.queries[&split].qrels
    }

    /// Positive `(query, document)` pairs of a split usable for training:
    /// relevance ≥ 1 and the document is not empty.
    pub fn positive_pairs(&self, split: Split) -> Vec<(&str, &str)> {
        self.qrels(split)
            .entries()
            .filter(|&(_, d, r)| r >= 1 && !self.is_empty_doc(d))
            .map(|(q, d, _)| (q, d))
            .collect()
    }
}
