//! Topic-clustered synthetic corpora for desk-scale experiments.
//!
//! Each topic owns `vocab_per_topic` concepts. A concept has two surface
//! forms: a document-side word `t{topic}w{concept}` and a query-side word
//! `t{topic}q{concept}`. The two vocabularies never overlap, so an untrained
//! encoder has no lexical shortcut and ranks at chance; the model must learn
//! which query words go with which documents.
//!
//! Every document draws a small set of key concepts from its topic. Queries
//! come in pairs aimed at the same document: the first of a pair goes to the
//! train split and the second to dev, each phrased with an independently
//! sampled subset of the target's key concepts. With `noise_rate > 0`, body
//! words are replaced by document words of another topic.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, Qrels, Query, TokenizerConfig};

const BODY_LEN: usize = 32;
const TITLE_LEN: usize = 3;
const KEY_CONCEPTS: usize = 5;
const QUERY_LEN: usize = 4;
const KEY_SHARE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    pub queries_per_topic: usize,
    pub vocab_per_topic: usize,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_topics: 16,
            docs_per_topic: 8,
            queries_per_topic: 4,
            vocab_per_topic: 20,
            noise_rate: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let counts = [
            ("n_topics", self.n_topics),
            ("docs_per_topic", self.docs_per_topic),
            ("queries_per_topic", self.queries_per_topic),
            ("vocab_per_topic", self.vocab_per_topic),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CorpusError::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(CorpusError::Config(format!("noise_rate must be in [0, 1), got {}", self.noise_rate)));
        }
        Ok(())
    }
}

fn doc_word(topic: usize, concept: usize) -> String {
    format!("t{topic}w{concept}")
}

fn query_word(topic: usize, concept: usize) -> String {
    format!("t{topic}q{concept}")
}

fn off_topic_word(rng: &mut ChaCha8Rng, topic: usize, cfg: &SyntheticConfig) -> String {
    let concept = rng.gen_range(0..cfg.vocab_per_topic);
    if cfg.n_topics == 1 {
        return format!("bg{concept}");
    }
    let mut other = rng.gen_range(0..cfg.n_topics - 1);
    if other >= topic {
        other += 1;
    }
    doc_word(other, concept)
}

pub fn generate_synthetic_corpus(cfg: &SyntheticConfig, tokenizer: TokenizerConfig) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_keys = KEY_CONCEPTS.min(cfg.vocab_per_topic);
    let query_len = QUERY_LEN.min(n_keys);

    let mut documents = Vec::with_capacity(cfg.n_topics * cfg.docs_per_topic);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut train_qrels = Qrels::new();
    let mut dev_qrels = Qrels::new();
    let mut next_query = 0usize;

    for topic in 0..cfg.n_topics {
        let first_doc = documents.len();
        let mut keys_of = Vec::with_capacity(cfg.docs_per_topic);
        for _ in 0..cfg.docs_per_topic {
            let keys: Vec<usize> = sample(&mut rng, cfg.vocab_per_topic, n_keys).into_vec();
            let title: Vec<String> = (0..TITLE_LEN)
                .map(|_| doc_word(topic, keys[rng.gen_range(0..keys.len())]))
                .collect();
            let body: Vec<String> = (0..BODY_LEN)
                .map(|_| {
                    let concept = if rng.gen_bool(KEY_SHARE) {
                        keys[rng.gen_range(0..keys.len())]
                    } else {
                        rng.gen_range(0..cfg.vocab_per_topic)
                    };
                    if cfg.noise_rate > 0.0 && rng.gen_bool(cfg.noise_rate) {
                        off_topic_word(&mut rng, topic, cfg)
                    } else {
                        doc_word(topic, concept)
                    }
                })
                .collect();
            let doc_id = format!("D{:05}", documents.len());
            documents.push(Document {
                url: format!("http://synthetic.local/{doc_id}"),
                doc_id,
                title: title.join(" "),
                body: body.join(" "),
            });
            keys_of.push(keys);
        }

        let n_targets = cfg.queries_per_topic.div_ceil(2);
        let order: Vec<usize> = sample(&mut rng, cfg.docs_per_topic, n_targets.min(cfg.docs_per_topic)).into_vec();
        for j in 0..cfg.queries_per_topic {
            let local = order[(j / 2) % order.len()];
            let keys = &keys_of[local];
            let words: Vec<String> = sample(&mut rng, keys.len(), query_len)
                .into_iter()
                .map(|k| query_word(topic, keys[k]))
                .collect();
            let query_id = format!("Q{next_query:05}");
            next_query += 1;
            let doc_id = &documents[first_doc + local].doc_id;
            let (queries, qrels) = if j % 2 == 0 { (&mut train, &mut train_qrels) } else { (&mut dev, &mut dev_qrels) };
            qrels.insert(&query_id, doc_id, 1)?;
            queries.push(Query { query_id, text: words.join(" ") });
        }
    }

    Corpus::new(tokenizer, documents, (train, train_qrels), (dev, dev_qrels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_tokens, write_dir, Split};

    fn small(noise_rate: f64) -> SyntheticConfig {
        SyntheticConfig {
            n_topics: 2,
            docs_per_topic: 3,
            queries_per_topic: 2,
            vocab_per_topic: 20,
            noise_rate,
            seed: 7,
        }
    }

    #[test]
    fn counts() {
        let c = generate_synthetic_corpus(&small(0.0), TokenizerConfig::default()).unwrap();
        assert_eq!(c.documents().len(), 6);
        let n_queries = c.queries(Split::Train).len() + c.queries(Split::Dev).len();
        assert_eq!(n_queries, 4);
        assert_eq!(c.qrels(Split::Train).len() + c.qrels(Split::Dev).len(), 4);
        // exactly one positive per query
        for split in Split::ALL {
            for q in c.queries(split) {
                assert_eq!(c.qrels(split).positives(&q.query_id).count(), 1);
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let c = generate_synthetic_corpus(&small(0.3), TokenizerConfig::default()).unwrap();
            write_dir(&c, dir).unwrap();
        }
        for name in ["docs.tsv", "train_queries.tsv", "dev_queries.tsv", "train_qrels.txt", "dev_qrels.txt"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    fn off_topic_tokens(c: &Corpus, cfg: &SyntheticConfig) -> usize {
        c.documents()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let own = format!("t{}w", i / cfg.docs_per_topic);
                split_tokens(&d.encoding_text(), true)
                    .into_iter()
                    .filter(|t| !t.starts_with(&own))
                    .count()
            })
            .sum()
    }

    #[test]
    fn noise_injects_off_topic_words() {
        let clean = small(0.0);
        let noisy = small(0.5);
        let c0 = generate_synthetic_corpus(&clean, TokenizerConfig::default()).unwrap();
        let c1 = generate_synthetic_corpus(&noisy, TokenizerConfig::default()).unwrap();
        assert_eq!(off_topic_tokens(&c0, &clean), 0);
        assert!(off_topic_tokens(&c1, &noisy) >= 1);
    }

    #[test]
    fn query_and_document_vocabularies_are_disjoint() {
        let c = generate_synthetic_corpus(&small(0.0), TokenizerConfig::default()).unwrap();
        for split in Split::ALL {
            for q in c.queries(split) {
                assert!(split_tokens(&q.text, true).iter().all(|t| t.contains('q')));
            }
        }
        for d in c.documents() {
            assert!(split_tokens(&d.encoding_text(), true).iter().all(|t| t.contains('w')));
        }
    }

    #[test]
    fn paired_queries_share_a_target() {
        let cfg = SyntheticConfig { queries_per_topic: 4, ..small(0.1) };
        let c = generate_synthetic_corpus(&cfg, TokenizerConfig::default()).unwrap();
        let train = c.queries(Split::Train);
        let dev = c.queries(Split::Dev);
        assert_eq!(train.len(), dev.len());
        for (t, d) in train.iter().zip(dev) {
            let a: Vec<_> = c.qrels(Split::Train).positives(&t.query_id).collect();
            let b: Vec<_> = c.qrels(Split::Dev).positives(&d.query_id).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SyntheticConfig { n_topics: 0, ..small(0.0) };
        assert!(generate_synthetic_corpus(&bad, TokenizerConfig::default()).is_err());
        let bad = SyntheticConfig { noise_rate: 1.0, ..small(0.0) };
        assert!(generate_synthetic_corpus(&bad, TokenizerConfig::default()).is_err());
    }
}
