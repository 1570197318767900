//! Turns scene boundaries and timed encoder features into scene records and
//! embedding records.
//!
//! Video features are bucketed into fixed-length segments and mean-pooled per
//! segment; audio chunk features are mean-pooled over the whole scene. Pooled
//! vectors are L2-normalized at pooling time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::SafetyTags;
use crate::modality::Modality;
use crate::store::{self, EmbeddingRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBoundary {
    pub content_id: String,
    pub scene_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl SceneBoundary {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite()) {
            return Err(Error::invalid(format!("scene {}: non-finite bounds", self.scene_id)));
        }
        if self.end_s <= self.start_s {
            return Err(Error::invalid(format!(
                "scene {}: end_s {} must exceed start_s {}",
                self.scene_id, self.end_s, self.start_s
            )));
        }
        Ok(())
    }
}

/// Checks every boundary and that the scenes of each content are disjoint.
/// Input order does not matter.
pub fn validate_boundaries(boundaries: &[SceneBoundary]) -> Result<()> {
    let mut by_content: BTreeMap<&str, Vec<&SceneBoundary>> = BTreeMap::new();
    let mut ids = std::collections::HashSet::new();
    for b in boundaries {
        b.validate()?;
        if !ids.insert(b.scene_id.as_str()) {
            return Err(Error::invalid(format!("duplicate scene_id {}", b.scene_id)));
        }
        by_content.entry(&b.content_id).or_default().push(b);
    }
    for (content, mut scenes) in by_content {
        scenes.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for pair in scenes.windows(2) {
            if pair[1].start_s < pair[0].end_s {
                return Err(Error::invalid(format!(
                    "content {content}: scenes {} and {} overlap",
                    pair[0].scene_id, pair[1].scene_id
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Frame,
    AudioChunk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedFeature {
    pub scene_id: String,
    pub stream: Stream,
    /// Seconds from the start of the scene.
    pub time_s: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanParams {
    pub video_segment_len_s: f64,
    pub audio_chunk_len_s: f64,
    /// Informational: frame sampling happens upstream, features carry time stamps.
    pub frame_stride: u32,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            video_segment_len_s: 15.0,
            audio_chunk_len_s: 5.0,
            frame_stride: 10,
        }
    }
}

/// Half-open `[start_s, end_s)` interval in scene-relative seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationPlan {
    pub params: PlanParams,
    pub duration_s: f64,
    pub segments: Vec<Interval>,
}

impl SegmentationPlan {
    /// Index of the segment covering `t`, if any.
    pub fn segment_of(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0 && t < self.duration_s) {
            return None;
        }
        let idx = (t / self.params.video_segment_len_s).floor() as usize;
        Some(idx.min(self.segments.len() - 1))
    }
}

/// Tiles `[0, duration_s)` with contiguous intervals of `len_s`; the last may be partial.
pub fn tile(duration_s: f64, len_s: f64) -> Result<Vec<Interval>> {
    if duration_s <= 0.0 || !duration_s.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    if len_s <= 0.0 || !len_s.is_finite() {
        return Err(Error::invalid(format!("interval length must be positive, got {len_s}")));
    }
    // relative slack so that 45 / 15 does not yield a sliver fourth interval
    let count = ((duration_s / len_s) - 1e-9).ceil().max(1.0) as usize;
    Ok((0..count)
        .map(|k| Interval {
            start_s: k as f64 * len_s,
            end_s: ((k + 1) as f64 * len_s).min(duration_s),
        })
        .collect())
}

pub fn segment_schedule(duration_s: f64, params: PlanParams) -> Result<SegmentationPlan> {
    Ok(SegmentationPlan {
        params,
        duration_s,
        segments: tile(duration_s, params.video_segment_len_s)?,
    })
}

/// Audio chunk intervals for a scene of `duration_s`.
pub fn audio_chunks(duration_s: f64, params: PlanParams) -> Result<Vec<Interval>> {
    tile(duration_s, params.audio_chunk_len_s)
}

/// Component-wise mean of `features`, L2-normalized.
pub fn mean_pool<V: AsRef<[f64]>>(features: &[V]) -> Result<Vec<f64>> {
    let first = features.first().ok_or(Error::Empty("no features to pool"))?;
    let dim = first.as_ref().len();
    let mut sum = vec![0.0; dim];
    for f in features {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
        for (acc, x) in sum.iter_mut().zip(f) {
            *acc += x;
        }
    }
    let n = features.len() as f64;
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    store::normalize(&mean).map_err(|reason| Error::invalid(format!("pooled vector rejected: {reason}")))
}

/// Pools the frame features of one segment into the segment embedding.
pub fn pool_frame_features<V: AsRef<[f64]>>(features: &[V]) -> Result<Vec<f64>> {
    mean_pool(features)
}

/// Pools every audio chunk of a scene into one embedding; `None` when the
/// scene has no audio chunks.
pub fn pool_audio_features<V: AsRef<[f64]>>(chunks: &[V]) -> Result<Option<Vec<f64>>> {
    if chunks.is_empty() {
        return Ok(None);
    }
    mean_pool(chunks).map(Some)
}

/// Buckets frame features by segment and pools each non-empty segment.
/// Returns one embedding per non-empty segment, in plan order.
pub fn pool_video_segments(plan: &SegmentationPlan, frames: &[&TimedFeature]) -> Result<Vec<Vec<f64>>> {
    let mut buckets: Vec<Vec<&[f64]>> = vec![Vec::new(); plan.segments.len()];
    for f in frames {
        let idx = plan.segment_of(f.time_s).ok_or_else(|| {
            Error::invalid(format!(
                "scene {}: frame at {}s outside [0, {})",
                f.scene_id, f.time_s, plan.duration_s
            ))
        })?;
        buckets[idx].push(&f.vector);
    }
    buckets
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| pool_frame_features(b))
        .collect()
}

/// A retrievable unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub content_id: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetyTags>,
    #[serde(default)]
    pub metadata_sentence: String,
}

impl From<&SceneBoundary> for SceneRecord {
    fn from(b: &SceneBoundary) -> Self {
        Self {
            scene_id: b.scene_id.clone(),
            content_id: b.content_id.clone(),
            start_s: b.start_s,
            end_s: b.end_s,
            safety: None,
            metadata_sentence: String::new(),
        }
    }
}

/// Already-pooled inputs for one scene.
#[derive(Debug, Clone, Default)]
pub struct SceneEmbeddings {
    pub video_segments: Vec<Vec<f64>>,
    pub audio: Option<Vec<f64>>,
    pub caption: Option<Vec<f64>>,
    pub metadata: Option<Vec<f64>>,
    pub safety: Option<SafetyTags>,
    pub metadata_sentence: Option<String>,
}

impl SceneEmbeddings {
    fn modality_count(&self) -> usize {
        usize::from(!self.video_segments.is_empty())
            + usize::from(self.audio.is_some())
            + usize::from(self.caption.is_some())
            + usize::from(self.metadata.is_some())
    }
}

pub fn assemble_scene(boundary: &SceneBoundary, inputs: SceneEmbeddings) -> Result<(SceneRecord, Vec<EmbeddingRecord>)> {
    boundary.validate()?;
    if inputs.modality_count() == 0 {
        return Err(Error::invalid(format!(
            "scene {}: no modality present",
            boundary.scene_id
        )));
    }
    let id = &boundary.scene_id;
    let mut records: Vec<EmbeddingRecord> = inputs
        .video_segments
        .into_iter()
        .enumerate()
        .map(|(k, v)| EmbeddingRecord::new(id.clone(), Modality::Video, k as u32, v))
        .collect();
    for (modality, v) in [
        (Modality::Audio, inputs.audio),
        (Modality::Caption, inputs.caption),
        (Modality::Metadata, inputs.metadata),
    ] {
        if let Some(v) = v {
            records.push(EmbeddingRecord::new(id.clone(), modality, 0, v));
        }
    }
    let mut scene = SceneRecord::from(boundary);
    scene.safety = inputs.safety;
    scene.metadata_sentence = inputs.metadata_sentence.unwrap_or_default();
    Ok((scene, records))
}

/// Extra per-scene inputs that do not come from timed features.
#[derive(Debug, Clone, Default)]
pub struct SceneExtras {
    pub text_embeddings: Vec<EmbeddingRecord>,
    pub metadata: BTreeMap<String, (String, SafetyTags)>,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub scenes: Vec<SceneRecord>,
    pub records: Vec<EmbeddingRecord>,
    /// Scenes dropped because no modality was available.
    pub skipped: Vec<String>,
}

/// Runs segmentation, pooling, and assembly over a whole content batch.
/// Output is ordered by (content_id, start_s).
pub fn run_pipeline(
    boundaries: &[SceneBoundary],
    features: &[TimedFeature],
    extras: &SceneExtras,
    params: PlanParams,
) -> Result<PipelineOutput> {
    validate_boundaries(boundaries)?;

    let mut frames: BTreeMap<&str, Vec<&TimedFeature>> = BTreeMap::new();
    let mut chunks: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for f in features {
        match f.stream {
            Stream::Frame => frames.entry(&f.scene_id).or_default().push(f),
            Stream::AudioChunk => chunks.entry(&f.scene_id).or_default().push(&f.vector),
        }
    }
    let known: std::collections::HashSet<&str> = boundaries.iter().map(|b| b.scene_id.as_str()).collect();
    if let Some(f) = features.iter().find(|f| !known.contains(f.scene_id.as_str())) {
        return Err(Error::UnknownScene(f.scene_id.clone()));
    }

    let mut text: BTreeMap<(&str, Modality), &[f64]> = BTreeMap::new();
    for r in &extras.text_embeddings {
        if !matches!(r.modality, Modality::Caption | Modality::Metadata) {
            return Err(Error::invalid(format!(
                "scene {}: {} records are produced by pooling, not supplied directly",
                r.scene_id, r.modality
            )));
        }
        text.insert((&r.scene_id, r.modality), &r.vector);
    }

    let mut ordered: Vec<&SceneBoundary> = boundaries.iter().collect();
    ordered.sort_by(|a, b| {
        a.content_id
            .cmp(&b.content_id)
            .then(a.start_s.total_cmp(&b.start_s))
    });

    let mut out = PipelineOutput::default();
    for b in ordered {
        let id = b.scene_id.as_str();
        let plan = segment_schedule(b.duration(), params)?;
        let video_segments = match frames.get(id) {
            Some(fs) => pool_video_segments(&plan, fs)?,
            None => Vec::new(),
        };
        let audio = match chunks.get(id) {
            Some(cs) => pool_audio_features(cs)?,
            None => None,
        };
        let (sentence, safety) = match extras.metadata.get(id) {
            Some((s, t)) => (Some(s.clone()), Some(t.clone())),
            None => (None, None),
        };
        let inputs = SceneEmbeddings {
            video_segments,
            audio,
            caption: text.get(&(id, Modality::Caption)).map(|v| v.to_vec()),
            metadata: text.get(&(id, Modality::Metadata)).map(|v| v.to_vec()),
            safety,
            metadata_sentence: sentence,
        };
        if inputs.modality_count() == 0 {
            out.skipped.push(id.to_string());
            continue;
        }
        let (scene, records) = assemble_scene(b, inputs)?;
        out.scenes.push(scene);
        out.records.extend(records);
    }
    Ok(out)
}
