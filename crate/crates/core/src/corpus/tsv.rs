//! MS MARCO style TSV files.
//!
//! * documents: `doc_id<TAB>url<TAB>title<TAB>body`
//! * queries:   `query_id<TAB>text`
//! * qrels:     `query_id 0 doc_id relevance` (space or tab separated)

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, Qrels, Query, Split, TokenizerConfig};

pub const DOCS_FILE: &str = "docs.tsv";
pub const TRAIN_QUERIES_FILE: &str = "train_queries.tsv";
pub const DEV_QUERIES_FILE: &str = "dev_queries.tsv";
pub const TRAIN_QRELS_FILE: &str = "train_qrels.txt";
pub const DEV_QRELS_FILE: &str = "dev_qrels.txt";
pub const TOKEN_CACHE_FILE: &str = "tokens.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub documents: PathBuf,
    pub train_queries: PathBuf,
    pub dev_queries: PathBuf,
    pub train_qrels: PathBuf,
    pub dev_qrels: PathBuf,
}

impl CorpusPaths {
    /// The fixed file layout used by [`write_dir`] and [`load_dir`].
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            documents: dir.join(DOCS_FILE),
            train_queries: dir.join(TRAIN_QUERIES_FILE),
            dev_queries: dir.join(DEV_QUERIES_FILE),
            train_qrels: dir.join(TRAIN_QRELS_FILE),
            dev_qrels: dir.join(DEV_QRELS_FILE),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_owned(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse { file: path.to_owned(), line, message: message.into() }
}

/// Non-blank lines with their 1-based line numbers, `\r` stripped.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let mut line = line.map_err(io_err(path))?;
        if line.ends_with('\r') {
            line.pop();
        }
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub(crate) fn read_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(path, n, format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            if fields[0].is_empty() {
                return Err(parse_err(path, n, "empty document id"));
            }
            Ok(Document {
                doc_id: fields[0].to_owned(),
                url: fields[1].to_owned(),
                title: fields[2].to_owned(),
                body: fields[3].to_owned(),
            })
        })
        .collect()
}

pub(crate) fn read_queries(path: &Path) -> Result<Vec<Query>, CorpusError> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(parse_err(path, n, format!("expected 2 tab-separated fields, found {}", fields.len())));
            }
            if fields[0].is_empty() {
                return Err(parse_err(path, n, "empty query id"));
            }
            if fields[1].trim().is_empty() {
                return Err(parse_err(path, n, "empty query text"));
            }
            Ok(Query { query_id: fields[0].to_owned(), text: fields[1].to_owned() })
        })
        .collect()
}

/// Parses a qrels file, returning the judgments and the source line of each pair.
pub(crate) fn read_qrels(path: &Path) -> Result<(Qrels, HashMap<(String, String), usize>), CorpusError> {
    let mut qrels = Qrels::new();
    let mut lines = HashMap::new();
    for (n, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 fields, found {}", fields.len())));
        }
        if fields[1] != "0" && fields[1] != "Q0" {
            return Err(parse_err(path, n, format!("second field must be 0, found {:?}", fields[1])));
        }
        let relevance: u32 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("relevance must be a non-negative integer, found {:?}", fields[3])))?;
        qrels
            .insert(fields[0], fields[2], relevance)
            .map_err(|_| parse_err(path, n, format!("duplicate pair ({}, {})", fields[0], fields[2])))?;
        lines.insert((fields[0].to_owned(), fields[2].to_owned()), n);
    }
    Ok((qrels, lines))
}

pub fn load_tsv_corpus(paths: &CorpusPaths, tokenizer: TokenizerConfig) -> Result<Corpus, CorpusError> {
    let documents = read_documents(&paths.documents)?;
    let train_queries = read_queries(&paths.train_queries)?;
    let dev_queries = read_queries(&paths.dev_queries)?;
    let (train_qrels, train_lines) = read_qrels(&paths.train_qrels)?;
    let (dev_qrels, dev_lines) = read_qrels(&paths.dev_qrels)?;
    Corpus::build(
        tokenizer,
        documents,
        [(train_queries, train_qrels), (dev_queries, dev_qrels)],
        [
            Some((paths.train_qrels.clone(), train_lines)),
            Some((paths.dev_qrels.clone(), dev_lines)),
        ],
    )
}

fn check_field(id: &str, value: &str) -> Result<(), CorpusError> {
    if value.contains('\t') {
        return Err(CorpusError::Unwritable { id: id.to_owned(), reason: "contains a tab" });
    }
    if value.contains('\n') || value.contains('\r') {
        return Err(CorpusError::Unwritable { id: id.to_owned(), reason: "contains a line break" });
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_tsv_corpus(corpus: &Corpus, paths: &CorpusPaths) -> Result<(), CorpusError> {
    for d in corpus.documents() {
        for field in [&d.doc_id, &d.url, &d.title, &d.body] {
            check_field(&d.doc_id, field)?;
        }
    }
    for split in Split::ALL {
        for q in corpus.queries(split) {
            check_field(&q.query_id, &q.query_id)?;
            check_field(&q.query_id, &q.text)?;
        }
    }
    write_file(&paths.documents, |w| {
        for d in corpus.documents() {
            writeln!(w, "{}\t{}\t{}\t{}", d.doc_id, d.url, d.title, d.body)?;
        }
        Ok(())
    })?;
    for (split, qpath, rpath) in [
        (Split::Train, &paths.train_queries, &paths.train_qrels),
        (Split::Dev, &paths.dev_queries, &paths.dev_qrels),
    ] {
        write_file(qpath, |w| {
            for q in corpus.queries(split) {
                writeln!(w, "{}\t{}", q.query_id, q.text)?;
            }
            Ok(())
        })?;
        write_file(rpath, |w| {
            for (q, d, r) in corpus.qrels(split).entries() {
                writeln!(w, "{q} 0 {d} {r}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Token ids of every text, keyed by id, plus the tokenizer that produced them.
#[derive(Debug, Serialize, Deserialize)]
struct TokenCache {
    tokenizer: TokenizerConfig,
    empty_documents: Vec<String>,
    documents: BTreeMap<String, Vec<u32>>,
    train_queries: BTreeMap<String, Vec<u32>>,
    dev_queries: BTreeMap<String, Vec<u32>>,
}

/// Writes the TSV files under their fixed names plus the token cache.
pub fn write_dir(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_tsv_corpus(corpus, &CorpusPaths::in_dir(dir))?;
    let split_tokens = |split| {
        corpus
            .queries(split)
            .iter()
            .enumerate()
            .map(|(i, q)| (q.query_id.clone(), corpus.query_tokens_at(split, i).ids().to_vec()))
            .collect()
    };
    let cache = TokenCache {
        tokenizer: *corpus.tokenizer(),
        empty_documents: corpus.empty_doc_ids().into_iter().map(str::to_owned).collect(),
        documents: corpus
            .documents()
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), corpus.doc_tokens_at(i).ids().to_vec()))
            .collect(),
        train_queries: split_tokens(Split::Train),
        dev_queries: split_tokens(Split::Dev),
    };
    let path = dir.join(TOKEN_CACHE_FILE);
    write_file(&path, |w| serde_json::to_writer(w, &cache).map_err(std::io::Error::other))
}

/// Loads a directory written by [`write_dir`].
///
/// The tokenizer configuration is taken from the token cache when present,
/// otherwise `fallback` is used. Cached ids must agree with re-tokenization.
pub fn load_dir(dir: &Path, fallback: TokenizerConfig) -> Result<Corpus, CorpusError> {
    let cache_path = dir.join(TOKEN_CACHE_FILE);
    let cache: Option<TokenCache> = if cache_path.exists() {
        let text = fs::read_to_string(&cache_path).map_err(io_err(&cache_path))?;
        Some(serde_json::from_str(&text).map_err(|e| parse_err(&cache_path, e.line(), e.to_string()))?)
    } else {
        None
    };
    let tokenizer = cache.as_ref().map_or(fallback, |c| c.tokenizer);
    let corpus = load_tsv_corpus(&CorpusPaths::in_dir(dir), tokenizer)?;
    if let Some(cache) = cache {
        let stale = |what: &str| CorpusError::Config(format!("token cache disagrees with {what}; re-run ingest"));
        for (i, d) in corpus.documents().iter().enumerate() {
            if cache.documents.get(&d.doc_id).map(Vec::as_slice) != Some(corpus.doc_tokens_at(i).ids()) {
                return Err(stale(DOCS_FILE));
            }
        }
        for (split, cached) in [(Split::Train, &cache.train_queries), (Split::Dev, &cache.dev_queries)] {
            for (i, q) in corpus.queries(split).iter().enumerate() {
                if cached.get(&q.query_id).map(Vec::as_slice) != Some(corpus.query_tokens_at(split, i).ids()) {
                    return Err(stale(split.name()));
                }
            }
        }
    }
    Ok(corpus)
}
