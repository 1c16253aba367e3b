//! On-disk formats: JSON-Lines pools, embeddings, scores, and training
//! tuples, plus the loss-history CSV.
//!
//! Readers are strict about structure (missing fields, id resolution,
//! dimension consistency) and report the offending line. Writers emit one
//! JSON object per line with stable field order, so identical inputs
//! produce byte-identical files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{EmbeddingMatrix, KernelError, SubsetIndex};
use crate::objective::{EpochStats, ObjectiveError, TrainingExample};
use crate::pipeline::{CandidatePool, PipelineError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Invalid {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("tuple {query_id}: {reason}")]
    Resolution { query_id: String, reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, IoError>;

// ───────────────────────── record types ─────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolRecord {
    pub query_id: String,
    /// In retriever rank order.
    pub candidates: Vec<CandidateRecord>,
    pub gold_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_count: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleRecord {
    pub query_id: String,
    pub pool_ids: Vec<String>,
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
}

/// An embeddings file in memory: row-per-id matrix plus the id → row map.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub matrix: EmbeddingMatrix,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

// ───────────────────────── generic JSONL plumbing ─────────────────────────

fn open_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Parse every non-blank line of a JSON-Lines file, tagging failures with
/// their 1-based line number.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| open_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| open_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| IoError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

/// Write one JSON object per line. Field order follows the struct, so the
/// output is deterministic.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| open_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| IoError::Parse {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| open_err(path, e))?;
    }
    w.flush().map_err(|e| open_err(path, e))
}

// ───────────────────────── pools ─────────────────────────

fn pool_from_record(record: PoolRecord, path: &Path, line: usize, d: &mut Option<usize>) -> Result<CandidatePool> {
    let invalid = |reason: String| IoError::Invalid {
        path: path.display().to_string(),
        line,
        reason,
    };
    if record.candidates.is_empty() {
        return Err(invalid(format!("pool {} has no candidates", record.query_id)));
    }
    let dim = record.candidates[0].vector.len();
    match d {
        Some(expect) if *expect != dim => {
            return Err(invalid(format!(
                "vector dimension {dim} differs from {expect} used earlier in the file"
            )));
        }
        Some(_) => {}
        None => *d = Some(dim),
    }
    let n = record.candidates.len();
    let mut rows = Array2::zeros((n, dim));
    let mut ids = Vec::with_capacity(n);
    let mut scores = Vec::new();
    for (i, c) in record.candidates.iter().enumerate() {
        if c.vector.len() != dim {
            return Err(invalid(format!(
                "candidate {} has dimension {}, pool uses {dim}",
                c.id,
                c.vector.len()
            )));
        }
        for (j, &v) in c.vector.iter().enumerate() {
            rows[[i, j]] = v;
        }
        ids.push(c.id.clone());
        if let Some(s) = c.score {
            scores.push(s);
        }
    }
    let scores = match scores.len() {
        0 => None,
        len if len == n => Some(scores),
        len => {
            return Err(invalid(format!(
                "{len} of {n} candidates carry scores; scores must be all-or-none"
            )));
        }
    };
    let mut gold = Vec::with_capacity(record.gold_ids.len());
    for gid in &record.gold_ids {
        let idx = ids
            .iter()
            .position(|id| id == gid)
            .ok_or_else(|| invalid(format!("gold id {gid:?} is not among the candidates")))?;
        gold.push(idx);
    }
    let embeddings = EmbeddingMatrix::new(rows)?;
    Ok(CandidatePool::new(
        record.query_id,
        ids,
        embeddings,
        scores,
        SubsetIndex::new(gold)?,
        record.hop_count,
    )?)
}

/// Read a pool file into validated [`CandidatePool`]s. Every pool in the
/// file must share one embedding dimension.
pub fn read_pools(path: &Path) -> Result<Vec<CandidatePool>> {
    let records: Vec<(usize, PoolRecord)> = read_jsonl(path)?;
    let mut d = None;
    records
        .into_iter()
        .map(|(line, r)| pool_from_record(r, path, line, &mut d))
        .collect()
}

/// Convert a pool back to its file record (inverse of [`read_pools`]).
pub fn pool_to_record(pool: &CandidatePool) -> PoolRecord {
    let candidates = (0..pool.len())
        .map(|i| CandidateRecord {
            id: pool.ids[i].clone(),
            vector: pool.embeddings.row(i).to_vec(),
            score: pool.scores.as_ref().map(|s| s[i]),
        })
        .collect();
    PoolRecord {
        query_id: pool.query_id.clone(),
        candidates,
        gold_ids: pool.gold.as_slice().iter().map(|&g| pool.ids[g].clone()).collect(),
        hop_count: pool.hop_count,
    }
}

pub fn write_pools(path: &Path, pools: &[CandidatePool]) -> Result<()> {
    let records: Vec<PoolRecord> = pools.iter().map(pool_to_record).collect();
    write_jsonl(path, &records)
}

// ───────────────────────── embeddings and scores ─────────────────────────

/// Read an embeddings file. Ids must be unique and all vectors must share
/// one dimension.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let records: Vec<(usize, EmbeddingRecord)> = read_jsonl(path)?;
    let invalid = |line: usize, reason: String| IoError::Invalid {
        path: path.display().to_string(),
        line,
        reason,
    };
    if records.is_empty() {
        return Err(invalid(0, "embeddings file is empty".into()));
    }
    let dim = records[0].1.vector.len();
    let n = records.len();
    let mut rows = Array2::zeros((n, dim));
    let mut ids = Vec::with_capacity(n);
    let mut index = HashMap::with_capacity(n);
    for (row, (line, r)) in records.into_iter().enumerate() {
        if r.vector.len() != dim {
            return Err(invalid(
                line,
                format!("vector dimension {} differs from {dim}", r.vector.len()),
            ));
        }
        if index.insert(r.id.clone(), row).is_some() {
            return Err(invalid(line, format!("duplicate embedding id {:?}", r.id)));
        }
        for (j, &v) in r.vector.iter().enumerate() {
            rows[[row, j]] = v;
        }
        ids.push(r.id);
    }
    Ok(EmbeddingTable {
        ids,
        matrix: EmbeddingMatrix::new(rows)?,
        index,
    })
}

pub fn write_embeddings(path: &Path, items: &[(String, Vec<f64>)]) -> Result<()> {
    let records: Vec<EmbeddingRecord> = items
        .iter()
        .map(|(id, v)| EmbeddingRecord {
            id: id.clone(),
            vector: v.clone(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Read a scores file into an id → score map; duplicate ids are rejected.
pub fn read_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let records: Vec<(usize, ScoreRecord)> = read_jsonl(path)?;
    let mut out = HashMap::with_capacity(records.len());
    for (line, r) in records {
        if out.insert(r.id.clone(), r.score).is_some() {
            return Err(IoError::Invalid {
                path: path.display().to_string(),
                line,
                reason: format!("duplicate score id {:?}", r.id),
            });
        }
    }
    Ok(out)
}

// ───────────────────────── training tuples ─────────────────────────

pub fn read_tuples(path: &Path) -> Result<Vec<TupleRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_tuples(path: &Path, tuples: &[TupleRecord]) -> Result<()> {
    write_jsonl(path, tuples)
}

/// Build the tuple record for a pool whose negative ids are known.
pub fn tuple_record(pool: &CandidatePool, negatives: &SubsetIndex) -> TupleRecord {
    TupleRecord {
        query_id: pool.query_id.clone(),
        pool_ids: pool.ids.clone(),
        positive_ids: pool.gold.as_slice().iter().map(|&i| pool.ids[i].clone()).collect(),
        negative_ids: negatives.as_slice().iter().map(|&i| pool.ids[i].clone()).collect(),
    }
}

/// Resolve tuples against an embeddings table into training examples.
///
/// Each tuple's pool becomes a fresh matrix of the referenced rows;
/// positive and negative ids are mapped to pool-relative indices. Unknown
/// ids, duplicate pool entries, and ids outside the pool are errors.
pub fn examples_from_tuples(
    tuples: &[TupleRecord],
    table: &EmbeddingTable,
) -> Result<Vec<TrainingExample>> {
    let d = table.matrix.dim();
    let mut out = Vec::with_capacity(tuples.len());
    for t in tuples {
        let fail = |reason: String| IoError::Resolution {
            query_id: t.query_id.clone(),
            reason,
        };
        if t.pool_ids.is_empty() {
            return Err(fail("pool_ids is empty".into()));
        }
        let mut rows = Array2::zeros((t.pool_ids.len(), d));
        let mut local: HashMap<&str, usize> = HashMap::with_capacity(t.pool_ids.len());
        for (i, id) in t.pool_ids.iter().enumerate() {
            let row = table
                .row_of(id)
                .ok_or_else(|| fail(format!("pool id {id:?} not in embeddings file")))?;
            if local.insert(id.as_str(), i).is_some() {
                return Err(fail(format!("duplicate pool id {id:?}")));
            }
            rows.row_mut(i).assign(&table.matrix.row(row));
        }
        let resolve = |ids: &[String], role: &str| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    local
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| fail(format!("{role} id {id:?} not in pool_ids")))
                })
                .collect()
        };
        let positives = resolve(&t.positive_ids, "positive")?;
        let negatives = resolve(&t.negative_ids, "negative")?;
        out.push(TrainingExample::new(
            t.query_id.clone(),
            EmbeddingMatrix::new(rows)?,
            SubsetIndex::new(positives)?,
            SubsetIndex::new(negatives)?,
        )?);
    }
    Ok(out)
}

// ───────────────────────── loss history CSV ─────────────────────────

/// `epoch,mean_loss,skipped_examples` — one row per epoch after a header.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let file = File::create(path).map_err(|e| open_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |s: String| -> Result<()> {
        w.write_all(s.as_bytes()).map_err(|e| open_err(path, e))
    };
    emit("epoch,mean_loss,skipped_examples\n".into())?;
    for row in history {
        emit(format!("{},{},{}\n", row.epoch, row.mean_loss, row.skipped))?;
    }
    w.flush().map_err(|e| open_err(path, e))
}

// ───────────────────────── tests ─────────────────────────
