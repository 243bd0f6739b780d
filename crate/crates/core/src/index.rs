//! Exact maximum-inner-product search over immutable embedding snapshots.
//!
//! Results are ordered by score descending, ties broken by ascending id, so
//! every search has exactly one correct answer.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::{check_unit, UnitEmbedding};
use crate::scalar::{dot, Scalar};

const INDEX_MAGIC: &[u8; 8] = b"DANCEIX\0";
const INDEX_VERSION: u32 = 1;

pub const DEFAULT_POOL_SIZE: usize = 200;
pub const DEFAULT_NEGATIVES: usize = 8;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate id {0:?} in index")]
    DuplicateId(String),
    #[error("{ids} ids but {rows} embeddings")]
    LengthMismatch { ids: usize, rows: usize },
    #[error("dimension mismatch: index has {expected}, probe has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("row {id:?} is not unit-norm")]
    NotUnit { id: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid sampling request: {0}")]
    Sampling(String),
    #[error("no negative candidates outside the positive set")]
    NoNegatives,
    #[error("probe {position}: {source}")]
    Probe {
        position: usize,
        #[source]
        source: Box<IndexError>,
    },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<T> {
    pub id: String,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<T> {
    pub hits: Vec<Hit<T>>,
    pub k_requested: usize,
}

impl<T> SearchResult<T> {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }
}

/// An immutable snapshot of `id → unit embedding` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex<T> {
    ids: Vec<String>,
    dim: usize,
    data: Vec<T>,
    build_step: u64,
}

/// Score order: higher score first, then ascending id.
fn rank_order<T: Scalar>(a: (T, &str), b: (T, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

pub fn build_index<T: Scalar>(ids: Vec<String>, embeddings: &[UnitEmbedding<T>], build_step: u64) -> Result<FlatIndex<T>, IndexError> {
    if ids.len() != embeddings.len() {
        return Err(IndexError::LengthMismatch { ids: ids.len(), rows: embeddings.len() });
    }
    let dim = embeddings.first().map_or(0, UnitEmbedding::dim);
    let mut seen = HashSet::with_capacity(ids.len());
    let mut data = Vec::with_capacity(ids.len() * dim);
    for (id, e) in ids.iter().zip(embeddings) {
        if !seen.insert(id.as_str()) {
            return Err(IndexError::DuplicateId(id.clone()));
        }
        if e.dim() != dim {
            return Err(IndexError::Dimension { expected: dim, got: e.dim() });
        }
        check_unit(e.as_slice()).map_err(|_| IndexError::NotUnit { id: id.clone() })?;
        data.extend_from_slice(e.as_slice());
    }
    Ok(FlatIndex { ids, dim, data, build_step })
}

impl<T: Scalar> FlatIndex<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn build_step(&self) -> u64 {
        self.build_step
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row of `id`; linear lookup, intended for tests and diagnostics.
    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.ids.iter().position(|x| x == id).map(|i| self.row(i))
    }

    /// The `k` best rows for `probe` not in `exclude`.
    pub fn search(&self, probe: &UnitEmbedding<T>, k: usize, exclude: &HashSet<String>) -> Result<SearchResult<T>, IndexError> {
        self.search_slice(probe.as_slice(), k, exclude)
    }

    pub(crate) fn search_slice(&self, probe: &[T], k: usize, exclude: &HashSet<String>) -> Result<SearchResult<T>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if !self.is_empty() && probe.len() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, got: probe.len() });
        }
        let mut scored: Vec<(T, usize)> = (0..self.len())
            .filter(|&i| !exclude.contains(&self.ids[i]))
            .map(|i| (dot(self.row(i), probe), i))
            .collect();
        let cmp = |a: &(T, usize), b: &(T, usize)| rank_order((a.0, &self.ids[a.1]), (b.0, &self.ids[b.1]));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(SearchResult {
            hits: scored.into_iter().map(|(score, i)| Hit { id: self.ids[i].clone(), score }).collect(),
            k_requested: k,
        })
    }

    /// [`search`](Self::search) for each probe, evaluated in parallel.
    pub fn batch_search(
        &self,
        probes: &[UnitEmbedding<T>],
        k: usize,
        exclusions: &[HashSet<String>],
    ) -> Result<Vec<SearchResult<T>>, IndexError> {
        if exclusions.len() != probes.len() && !exclusions.is_empty() {
            return Err(IndexError::LengthMismatch { ids: exclusions.len(), rows: probes.len() });
        }
        let none = HashSet::new();
        probes
            .par_iter()
            .enumerate()
            .map(|(position, p)| {
                let ex = exclusions.get(position).unwrap_or(&none);
                self.search(p, k, ex).map_err(|e| IndexError::Probe { position, source: Box::new(e) })
            })
            .collect()
    }

    /// Mines negatives near `probe`: takes the top `pool_size` rows outside
    /// `positive_ids` and draws `n_neg` of them uniformly without replacement.
    ///
    /// The result keeps the pool's rank order. When the pool holds fewer than
    /// `n_neg` rows, all of them are returned.
    pub fn sample_negatives<R: Rng + ?Sized>(
        &self,
        probe: &UnitEmbedding<T>,
        positive_ids: &HashSet<String>,
        n_neg: usize,
        pool_size: usize,
        rng: &mut R,
    ) -> Result<Vec<String>, IndexError> {
        if n_neg == 0 || pool_size < n_neg {
            return Err(IndexError::Sampling(format!("need 1 <= n_neg <= pool_size, got n_neg={n_neg} pool_size={pool_size}")));
        }
        let pool = self.search(probe, pool_size, positive_ids)?;
        if pool.hits.is_empty() {
            return Err(IndexError::NoNegatives);
        }
        if pool.hits.len() <= n_neg {
            return Ok(pool.hits.into_iter().map(|h| h.id).collect());
        }
        let mut picked = sample(rng, pool.hits.len(), n_neg).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| pool.hits[i].id.clone()).collect())
    }

    /// Writes the snapshot: magic, version, scalar tag, build step, shape,
    /// length-prefixed UTF-8 ids, then row-major little-endian f64 values.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf = Vec::with_capacity(32 + self.data.len() * 8);
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.build_step.to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Reads a snapshot written by [`save`](Self::save), re-validating every row.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(8)? != INDEX_MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(IndexError::Corrupt(format!("unsupported version {version}")));
        }
        let build_step = r.u64()?;
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?).map_err(|e| IndexError::Corrupt(e.to_string()))?;
            ids.push(id.to_owned());
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<T> = (0..dim).map(|_| r.f64().map(T::of)).collect::<Result<_, _>>()?;
            rows.push(UnitEmbedding::new_unchecked(row));
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Corrupt("trailing bytes".into()));
        }
        let index = build_index(ids, &rows, build_step)?;
        if n > 0 && index.dim != dim {
            return Err(IndexError::Corrupt("dimension header disagrees with rows".into()));
        }
        Ok(index)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| IndexError::Corrupt("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Map from id to row position, for callers doing many lookups.
pub fn position_map<T>(index: &FlatIndex<T>) -> HashMap<&str, usize> {
    index.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}
