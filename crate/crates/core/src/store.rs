//! Per-modality embedding storage with exact cosine search.
//!
//! Records are unit-normalized once, at ingestion, so similarity is a plain
//! dot product at query time. A [`StoreBuilder`] is the single writer; once
//! [`StoreBuilder::build`] returns, the [`EmbeddingStore`] is immutable and can
//! be shared freely between reader threads.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::modality::Modality;

/// Norms at or below this are treated as zero vectors.
pub const MIN_NORM: f64 = 1e-8;

/// One embedding as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub scene_id: String,
    pub modality: Modality,
    #[serde(default)]
    pub segment_index: u32,
    pub dim: usize,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(scene_id: impl Into<String>, modality: Modality, segment_index: u32, vector: Vec<f64>) -> Self {
        Self {
            scene_id: scene_id.into(),
            modality,
            segment_index,
            dim: vector.len(),
            vector,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            scene_id: self.scene_id.clone(),
            modality: self.modality,
            segment_index: self.segment_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub scene_id: String,
    pub modality: Modality,
    pub segment_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    ZeroVector,
    NonFinite,
    DimensionMismatch { expected: usize, found: usize },
    DimFieldMismatch { declared: usize, actual: usize },
    Duplicate,
    SegmentIndex { segment_index: u32 },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::ZeroVector => f.write_str("zero vector"),
            RejectReason::NonFinite => f.write_str("non-finite component"),
            RejectReason::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            RejectReason::DimFieldMismatch { declared, actual } => {
                write!(f, "dim field {declared} does not match vector length {actual}")
            }
            RejectReason::Duplicate => f.write_str("duplicate key"),
            RejectReason::SegmentIndex { segment_index } => write!(
                f,
                "segment_index {segment_index} not allowed for a single-record modality"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub key: RecordKey,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub accepted: BTreeMap<Modality, usize>,
    pub dims: BTreeMap<Modality, usize>,
    pub rejected: Vec<Rejection>,
}

impl BuildReport {
    pub fn total_accepted(&self) -> usize {
        self.accepted.values().sum()
    }
}

/// L2-normalizes `v`, failing on non-finite input or a norm of at most [`MIN_NORM`].
pub fn normalize(v: &[f64]) -> std::result::Result<Vec<f64>, RejectReason> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RejectReason::NonFinite);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= MIN_NORM {
        return Err(RejectReason::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Cosine similarity of two unit vectors: their dot product, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-writer accumulator for an [`EmbeddingStore`].
#[derive(Debug, Default)]
pub struct StoreBuilder {
    dims: BTreeMap<Modality, usize>,
    pinned_dims: bool,
    seen: HashSet<RecordKey>,
    accepted: Vec<(RecordKey, Vec<f64>)>,
    rejected: Vec<Rejection>,
}

impl StoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pins the dimension of each listed modality up front. Unlisted
    /// modalities take the dimension of their first accepted record.
    pub fn with_dims(dims: BTreeMap<Modality, usize>) -> Self {
        Self {
            dims,
            pinned_dims: true,
            ..Self::default()
        }
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> std::result::Result<(), RejectReason> {
        let key = record.key();
        match self.check(&record) {
            Ok(unit) => {
                self.dims.entry(record.modality).or_insert(unit.len());
                self.seen.insert(key.clone());
                self.accepted.push((key, unit));
                Ok(())
            }
            Err(reason) => {
                self.rejected.push(Rejection {
                    key,
                    reason: reason.clone(),
                });
                Err(reason)
            }
        }
    }

    fn check(&self, record: &EmbeddingRecord) -> std::result::Result<Vec<f64>, RejectReason> {
        if record.dim != record.vector.len() {
            return Err(RejectReason::DimFieldMismatch {
                declared: record.dim,
                actual: record.vector.len(),
            });
        }
        if let Some(&expected) = self.dims.get(&record.modality) {
            if expected != record.vector.len() {
                return Err(RejectReason::DimensionMismatch {
                    expected,
                    found: record.vector.len(),
                });
            }
        }
        if !record.modality.is_segmented() && record.segment_index != 0 {
            return Err(RejectReason::SegmentIndex {
                segment_index: record.segment_index,
            });
        }
        let unit = normalize(&record.vector)?;
        if self.seen.contains(&record.key()) {
            return Err(RejectReason::Duplicate);
        }
        Ok(unit)
    }

    /// Seals the store. Records are laid out in key order so two builds from
    /// the same record set are identical regardless of input order.
    pub fn build(self) -> (EmbeddingStore, BuildReport) {
        let mut per_modality: BTreeMap<Modality, Vec<(RecordKey, Vec<f64>)>> = BTreeMap::new();
        for (key, v) in self.accepted {
            per_modality.entry(key.modality).or_default().push((key, v));
        }

        let mut report = BuildReport {
            rejected: self.rejected,
            ..BuildReport::default()
        };
        let mut indices = BTreeMap::new();
        let mut scenes = BTreeSet::new();
        for (modality, mut rows) in per_modality {
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            let dim = self.dims[&modality];
            let mut index = ModalityIndex {
                dim,
                keys: Vec::with_capacity(rows.len()),
                data: Vec::with_capacity(rows.len() * dim),
            };
            for (key, v) in rows {
                scenes.insert(key.scene_id.clone());
                index.keys.push((key.scene_id, key.segment_index));
                index.data.extend_from_slice(&v);
            }
            report.accepted.insert(modality, index.keys.len());
            indices.insert(modality, index);
        }
        report.dims = if self.pinned_dims {
            self.dims
        } else {
            indices.iter().map(|(m, i)| (*m, i.dim)).collect()
        };

        let version = content_hash(&indices);
        (
            EmbeddingStore {
                indices,
                scenes,
                version,
            },
            report,
        )
    }
}

/// Builds a sealed store from a record stream, rejecting (and reporting)
/// malformed, duplicate, and zero records.
pub fn ingest_embeddings<I>(records: I, expected_dims: Option<BTreeMap<Modality, usize>>) -> (EmbeddingStore, BuildReport)
where
    I: IntoIterator<Item = EmbeddingRecord>,
{
    let mut builder = match expected_dims {
        Some(dims) => StoreBuilder::with_dims(dims),
        None => StoreBuilder::new(),
    };
    for record in records {
        let _ = builder.push(record);
    }
    builder.build()
}

#[derive(Debug, Clone)]
struct ModalityIndex {
    dim: usize,
    keys: Vec<(String, u32)>,
    /// Row-major, `keys.len() * dim` values.
    data: Vec<f64>,
}

impl ModalityIndex {
    fn rows(&self) -> impl Iterator<Item = (&(String, u32), &[f64])> {
        self.keys.iter().zip(self.data.chunks_exact(self.dim.max(1)))
    }
}

/// One search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub scene_id: String,
    pub segment_index: u32,
    pub similarity: f64,
}

/// Orders hits by descending similarity, then ascending (scene_id, segment_index).
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.scene_id.cmp(&b.scene_id))
        .then_with(|| a.segment_index.cmp(&b.segment_index))
}

/// Sealed, read-only multimodal embedding database.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    indices: BTreeMap<Modality, ModalityIndex>,
    scenes: BTreeSet<String>,
    version: String,
}

impl EmbeddingStore {
    pub fn dim(&self, modality: Modality) -> Option<usize> {
        self.indices.get(&modality).map(|i| i.dim)
    }

    pub fn len(&self, modality: Modality) -> usize {
        self.indices.get(&modality).map_or(0, |i| i.keys.len())
    }

    pub fn is_empty(&self) -> bool {
        self.indices.values().all(|i| i.keys.is_empty())
    }

    pub fn scenes(&self) -> &BTreeSet<String> {
        &self.scenes
    }

    pub fn contains_scene(&self, scene_id: &str) -> bool {
        self.scenes.contains(scene_id)
    }

    /// Hex digest of the stored contents; changes whenever any vector does.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn vector(&self, scene_id: &str, modality: Modality, segment_index: u32) -> Option<&[f64]> {
        let index = self.indices.get(&modality)?;
        let pos = index
            .keys
            .binary_search_by(|(s, seg)| (s.as_str(), *seg).cmp(&(scene_id, segment_index)))
            .ok()?;
        Some(&index.data[pos * index.dim..(pos + 1) * index.dim])
    }

    /// All stored (unit) records of one modality in key order.
    pub fn records(&self, modality: Modality) -> impl Iterator<Item = (&str, u32, &[f64])> {
        self.indices
            .get(&modality)
            .into_iter()
            .flat_map(|i| i.rows().map(|((s, seg), v)| (s.as_str(), *seg, v)))
    }

    /// Exhaustive cosine search over one modality. Every stored record
    /// appears exactly once in the output.
    pub fn search_modality(&self, query: &[f64], modality: Modality) -> Result<Vec<Hit>> {
        let mut hits = self.scan(query, modality)?;
        hits.sort_by(hit_order);
        Ok(hits)
    }

    /// Unsorted similarity of `query` against every record of `modality`.
    pub(crate) fn scan(&self, query: &[f64], modality: Modality) -> Result<Vec<Hit>> {
        let Some(index) = self.indices.get(&modality) else {
            return Ok(Vec::new());
        };
        if query.len() != index.dim {
            return Err(Error::DimensionMismatch {
                expected: index.dim,
                found: query.len(),
            });
        }
        Ok(index
            .rows()
            .map(|((scene_id, seg), v)| Hit {
                scene_id: scene_id.clone(),
                segment_index: *seg,
                similarity: dot(query, v).clamp(-1.0, 1.0),
            })
            .collect())
    }

    /// Stored records in canonical order, ready to be written back out.
    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        Modality::ALL
            .iter()
            .flat_map(|&m| {
                self.records(m)
                    .map(move |(s, seg, v)| EmbeddingRecord::new(s, m, seg, v.to_vec()))
            })
            .collect()
    }

    pub fn load_jsonl(path: &Path) -> Result<(EmbeddingStore, BuildReport)> {
        let records: Vec<EmbeddingRecord> = jsonl::read(path)?;
        Ok(ingest_embeddings(records, None))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.to_records())
    }
}

fn content_hash(indices: &BTreeMap<Modality, ModalityIndex>) -> String {
    let mut h = Sha256::new();
    for (m, index) in indices {
        h.update(m.as_str().as_bytes());
        h.update((index.dim as u64).to_le_bytes());
        for ((scene, seg), v) in index.rows() {
            h.update(scene.as_bytes());
            h.update([0]);
            h.update(seg.to_le_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
    }
    hex::encode(&h.finalize()[..8])
}
