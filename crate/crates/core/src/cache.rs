//! Label-position logits for the labeling sentences, computed once and
//! persisted so that label search is pure arithmetic.
//!
//! File layout: the 8-byte magic `LFLOGITS`, a little-endian `u64` header
//! length, a JSON header, then `rows * cols` little-endian `f64` values in
//! row-major order. The header records the format version, both fingerprints,
//! the dimensions, the sentence indices and a SHA-256 of the value bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::PromptTemplate;
use crate::gateway::{score_label_position, CandidateVocabulary, LogitProvider};
use crate::util::{parallel_map, sha256_hex};

pub const CACHE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LFLOGITS";

#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    sentence_index: Vec<usize>,
    vocab_fingerprint: String,
    template_fingerprint: String,
}

impl LogitMatrix {
    pub fn new(
        values: Vec<f64>,
        cols: usize,
        sentence_index: Vec<usize>,
        vocab_fingerprint: impl Into<String>,
        template_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let rows = sentence_index.len();
        if cols == 0 || rows == 0 || values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "logit matrix has {} values for {rows}x{cols}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite logit at row {} column {}",
                i / cols,
                i % cols
            )));
        }
        Ok(LogitMatrix {
            values,
            rows,
            cols,
            sentence_index,
            vocab_fingerprint: vocab_fingerprint.into(),
            template_fingerprint: template_fingerprint.into(),
        })
    }

    /// Convenience constructor from nested rows; sentence indices are `0..rows`.
    pub fn from_rows(rows: &[Vec<f64>], vocab_fingerprint: &str) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged logit rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(
            values,
            cols,
            (0..rows.len()).collect(),
            vocab_fingerprint,
            "",
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sentence_index(&self) -> &[usize] {
        &self.sentence_index
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn template_fingerprint(&self) -> &str {
        &self.template_fingerprint
    }

    /// The first `k` rows.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.rows {
            return Err(Error::SampleSize {
                requested: k,
                available: self.rows,
            });
        }
        Self::new(
            self.values[..k * self.cols].to_vec(),
            self.cols,
            self.sentence_index[..k].to_vec(),
            self.vocab_fingerprint.clone(),
            self.template_fingerprint.clone(),
        )
    }
}

/// Scores every vocabulary token after the zero-shot prompt of each sentence.
/// Rows follow `indices`; calls run concurrently up to the provider's limit.
pub fn build_logit_matrix<P: LogitProvider + ?Sized>(
    provider: &P,
    ds: &Dataset,
    indices: &[usize],
    template: &PromptTemplate,
    vocab: &CandidateVocabulary,
) -> Result<LogitMatrix> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no sentences to score".into()));
    }
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary(vocab.boundary_marker().to_string()));
    }
    let sentences = ds.sentences();
    if let Some(&bad) = indices.iter().find(|&&i| i >= sentences.len()) {
        return Err(Error::InvalidArgument(format!(
            "sentence index {bad} out of range"
        )));
    }
    let workers = provider.capabilities().max_concurrency;
    let rows = parallel_map(indices, workers, |row, &i| {
        let prompt = template.render_query(&sentences[i].text);
        score_label_position(provider, &prompt, vocab.tokens()).map_err(|e| Error::Row {
            row,
            cause: Box::new(e),
        })
    })?;
    LogitMatrix::new(
        rows.into_iter().flatten().collect(),
        vocab.len(),
        indices.to_vec(),
        vocab.fingerprint(),
        template.fingerprint(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    version: u32,
    vocab_fingerprint: String,
    template_fingerprint: String,
    rows: usize,
    cols: usize,
    sentence_index: Vec<usize>,
    checksum: String,
}

/// `<run_dir>/caches/<vocab_fp>-<template_fp>-K<k>.bin`
pub fn cache_path(run_dir: &Path, vocab_fp: &str, template_fp: &str, k: usize) -> PathBuf {
    run_dir
        .join("caches")
        .join(format!("{vocab_fp}-{template_fp}-K{k}.bin"))
}

pub fn encode_cache(m: &LogitMatrix) -> Vec<u8> {
    let body: Vec<u8> = m.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = CacheHeader {
        version: CACHE_VERSION,
        vocab_fingerprint: m.vocab_fingerprint.clone(),
        template_fingerprint: m.template_fingerprint.clone(),
        rows: m.rows,
        cols: m.cols,
        sentence_index: m.sentence_index.clone(),
        checksum: sha256_hex(&body),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<LogitMatrix> {
    let corrupt = |m: &str| Error::CorruptCache(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: CacheHeader = serde_json::from_slice(&bytes[16..hend])
        .map_err(|e| Error::CorruptCache(format!("bad header: {e}")))?;
    if header.version != CACHE_VERSION {
        return Err(Error::CacheVersion {
            expected: CACHE_VERSION,
            found: header.version,
        });
    }
    let body = &bytes[hend..];
    if header.rows != header.sentence_index.len() || body.len() != header.rows * header.cols * 8 {
        return Err(corrupt("dimensions do not match payload"));
    }
    if sha256_hex(body) != header.checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LogitMatrix::new(
        values,
        header.cols,
        header.sentence_index,
        header.vocab_fingerprint,
        header.template_fingerprint,
    )
}

pub fn save_cache(m: &LogitMatrix, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, encode_cache(m)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a cache without checking what it was computed for.
pub fn read_cache(path: &Path) -> Result<LogitMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

/// Loads a cache and refuses it unless both fingerprints match.
pub fn load_cache(path: &Path, vocab_fp: &str, template_fp: &str) -> Result<LogitMatrix> {
    let m = read_cache(path)?;
    if m.vocab_fingerprint != vocab_fp {
        return Err(Error::FingerprintMismatch {
            what: "vocabulary",
            expected: vocab_fp.to_string(),
            found: m.vocab_fingerprint,
        });
    }
    if m.template_fingerprint != template_fp {
        return Err(Error::FingerprintMismatch {
            what: "template",
            expected: template_fp.to_string(),
            found: m.template_fingerprint,
        });
    }
    Ok(m)
}
