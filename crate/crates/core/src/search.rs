//! Multimodal late-fusion search.
//!
//! Each modality is scored independently against the sealed store. Raw
//! cosine scores are standardized within their modality (population z-score,
//! then multiplied by the modality weight), gated on the *raw* score against
//! a per-modality threshold, and merged by taking the per-scene maximum.
//! The merged ranking is truncated to `top_k` and passed through the
//! brand-safety filter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::{Emotion, SafetyTags};
use crate::modality::Modality;
use crate::store::{self, EmbeddingStore};

/// Standard deviations at or below this normalize every score to zero.
pub const MIN_STD: f64 = 1e-12;
pub const DEFAULT_TOP_K: usize = 10;

/// Scene id → brand-safety tags.
pub type SceneTags = BTreeMap<String, SafetyTags>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbeddings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<Vec<f64>>,
    /// Sentence-encoder embedding, compared against both caption and metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<f64>>,
}

/// Text query encoded by each of the three text towers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbeddingBundle {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub embeddings: QueryEmbeddings,
}

impl QueryEmbeddingBundle {
    pub fn vector_for(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::Video => self.embeddings.vision.as_deref(),
            Modality::Audio => self.embeddings.audio.as_deref(),
            Modality::Caption | Modality::Metadata => self.embeddings.text.as_deref(),
        }
    }

    /// Unit-normalizes every present vector.
    pub fn normalized(mut self) -> Result<Self> {
        for slot in [
            &mut self.embeddings.vision,
            &mut self.embeddings.audio,
            &mut self.embeddings.text,
        ] {
            if let Some(v) = slot.as_mut() {
                *v = store::normalize(v)
                    .map_err(|r| Error::invalid(format!("query `{}`: {r}", self.text)))?;
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub modality: Modality,
    pub kind: ScoreKind,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreMap {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

mod bounds {
    //! Threshold maps where `"inf"` / `"-inf"` stand in for infinities.
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::modality::Modality;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<Modality, f64>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<Modality, Bound> = map
            .iter()
            .map(|(m, &v)| {
                let b = if v == f64::INFINITY {
                    Bound::Text("inf".into())
                } else if v == f64::NEG_INFINITY {
                    Bound::Text("-inf".into())
                } else {
                    Bound::Num(v)
                };
                (*m, b)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Modality, f64>, D::Error> {
        let raw = BTreeMap::<Modality, Bound>::deserialize(d)?;
        raw.into_iter()
            .map(|(m, b)| {
                let v = match b {
                    Bound::Num(v) => v,
                    Bound::Text(t) => super::parse_bound(&t).map_err(serde::de::Error::custom)?,
                };
                Ok((m, v))
            })
            .collect()
    }
}

pub(crate) mod opt_bound {
    //! `Option<f64>` where `"inf"` / `"-inf"` stand in for infinities.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if *x == f64::INFINITY => Bound::Text("inf".into()).serialize(s),
            Some(x) if *x == f64::NEG_INFINITY => Bound::Text("-inf".into()).serialize(s),
            Some(x) => Bound::Num(*x).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Bound>::deserialize(d)? {
            None => Ok(None),
            Some(Bound::Num(v)) => Ok(Some(v)),
            Some(Bound::Text(t)) => super::parse_bound(&t).map(Some).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a threshold value, accepting `inf`, `+inf`, and `-inf`.
pub fn parse_bound(text: &str) -> std::result::Result<f64, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        other => other.parse::<f64>().map_err(|e| format!("bad threshold `{text}`: {e}")),
    }
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    /// Per-modality λ; unlisted modalities weigh 1.
    #[serde(default)]
    pub weights: BTreeMap<Modality, f64>,
    /// Per-modality α on raw scores; unlisted modalities are not gated.
    #[serde(default, with = "bounds")]
    pub thresholds: BTreeMap<Modality, f64>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Modalities to search; all four when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modalities: Option<BTreeSet<Modality>>,
    /// Apply the safety filter before truncating to `top_k`.
    #[serde(default)]
    pub filter_before_truncation: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            weights: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            top_k: DEFAULT_TOP_K,
            modalities: None,
            filter_before_truncation: false,
        }
    }
}

impl AggregationConfig {
    pub fn weight(&self, m: Modality) -> f64 {
        self.weights.get(&m).copied().unwrap_or(1.0)
    }

    pub fn threshold(&self, m: Modality) -> f64 {
        self.thresholds.get(&m).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn enabled(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| self.modalities.as_ref().is_none_or(|set| set.contains(m)))
            .collect()
    }

    pub fn only(modalities: &[Modality]) -> Self {
        Self {
            modalities: Some(modalities.iter().copied().collect()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (m, w) in &self.weights {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::invalid(format!("weight for {m} must be positive and finite, got {w}")));
            }
        }
        for (m, a) in &self.thresholds {
            if a.is_nan() {
                return Err(Error::invalid(format!("threshold for {m} is NaN")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UntaggedPolicy {
    /// Scenes without tags are removed whenever the policy blocks anything.
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyPolicy {
    #[serde(default)]
    pub blocked_emotions: BTreeSet<Emotion>,
    #[serde(default)]
    pub block_profanity: bool,
    #[serde(default)]
    pub block_hate: bool,
    #[serde(default)]
    pub untagged: UntaggedPolicy,
}

impl SafetyPolicy {
    pub fn is_empty(&self) -> bool {
        self.blocked_emotions.is_empty() && !self.block_profanity && !self.block_hate
    }

    /// Reasons a scene with `tags` breaks this policy; empty when it is safe.
    pub fn violations(&self, tags: Option<&SafetyTags>) -> Vec<String> {
        if self.is_empty() {
            return Vec::new();
        }
        let Some(tags) = tags else {
            return match self.untagged {
                UntaggedPolicy::Strict => vec!["untagged".to_string()],
                UntaggedPolicy::Lenient => Vec::new(),
            };
        };
        let mut reasons = Vec::new();
        if self.block_hate && tags.hate_flag {
            reasons.push("hate".to_string());
        }
        if self.block_profanity && tags.profanity_flag {
            reasons.push("profanity".to_string());
        }
        for e in tags.emotions.intersection(&self.blocked_emotions) {
            reasons.push(format!("emotion:{e}"));
        }
        reasons
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScene {
    pub scene_id: String,
    pub score: f64,
    pub modality: Modality,
    pub raw_scores: BTreeMap<Modality, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub scene_id: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub hits: Vec<RankedScene>,
    pub audit: Vec<Removal>,
}

impl RetrievalResult {
    pub fn scene_ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.scene_id.as_str()).collect()
    }
}

/// Raw cosine scores of every scene carrying `modality`. Video scenes score
/// the best of their segments.
pub fn score_modality(bundle: &QueryEmbeddingBundle, modality: Modality, store: &EmbeddingStore) -> Result<ScoreMap> {
    let query = bundle
        .vector_for(modality)
        .ok_or(Error::MissingQueryVector(modality))?;
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for hit in store.scan(query, modality)? {
        scores
            .entry(hit.scene_id)
            .and_modify(|s| *s = s.max(hit.similarity))
            .or_insert(hit.similarity);
    }
    Ok(ScoreMap {
        modality,
        kind: ScoreKind::Raw,
        scores,
    })
}

/// Mean and population standard deviation.
pub fn population_stats<I: IntoIterator<Item = f64> + Clone>(values: I) -> (f64, f64) {
    let (n, sum) = values.clone().into_iter().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    let var = values.into_iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Weighted z-scores within one modality.
pub fn normalize_scores(raw: &ScoreMap, weight: f64) -> Result<ScoreMap> {
    if raw.is_empty() {
        return Err(Error::Empty("score map"));
    }
    let (mean, std) = population_stats(raw.scores.values().copied());
    let degenerate = raw.len() == 1 || std <= MIN_STD;
    let scores = raw
        .scores
        .iter()
        .map(|(k, &s)| {
            let z = if degenerate { 0.0 } else { weight * (s - mean) / std };
            (k.clone(), z)
        })
        .collect();
    Ok(ScoreMap {
        modality: raw.modality,
        kind: ScoreKind::Normalized,
        scores,
    })
}

/// Keeps scenes whose raw score is strictly above `alpha`, carrying their
/// normalized score.
pub fn threshold_scores(raw: &ScoreMap, normalized: &ScoreMap, alpha: f64) -> Result<ScoreMap> {
    if raw.len() != normalized.len() || raw.scores.keys().ne(normalized.scores.keys()) {
        return Err(Error::KeyMismatch(format!(
            "{} raw map has {} keys, normalized map has {}",
            raw.modality,
            raw.len(),
            normalized.len()
        )));
    }
    let scores = raw
        .scores
        .iter()
        .zip(&normalized.scores)
        .filter(|((_, &r), _)| r > alpha)
        .map(|(_, (k, &n))| (k.clone(), n))
        .collect();
    Ok(ScoreMap {
        modality: raw.modality,
        kind: ScoreKind::Normalized,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergedScore {
    pub score: f64,
    pub modality: Modality,
}

/// Per-scene maximum over all maps. On exact ties the higher-priority
/// modality is recorded as the contributor.
pub fn max_merge(maps: &[ScoreMap]) -> BTreeMap<String, MergedScore> {
    let mut out: BTreeMap<String, MergedScore> = BTreeMap::new();
    for map in maps {
        for (scene, &score) in &map.scores {
            let candidate = MergedScore {
                score,
                modality: map.modality,
            };
            out.entry(scene.clone())
                .and_modify(|cur| {
                    let wins = score > cur.score
                        || (score == cur.score && map.modality.merge_priority() > cur.modality.merge_priority());
                    if wins {
                        *cur = candidate;
                    }
                })
                .or_insert(candidate);
        }
    }
    out
}

/// Drops scenes that violate `policy`, preserving the order of survivors.
pub fn apply_safety_filter(results: Vec<RankedScene>, tags: &SceneTags, policy: &SafetyPolicy) -> (Vec<RankedScene>, Vec<Removal>) {
    let mut kept = Vec::with_capacity(results.len());
    let mut audit = Vec::new();
    for r in results {
        let reasons = policy.violations(tags.get(&r.scene_id));
        if reasons.is_empty() {
            kept.push(r);
        } else {
            audit.push(Removal {
                scene_id: r.scene_id,
                reasons,
            });
        }
    }
    (kept, audit)
}

pub fn multimodal_search(
    bundle: &QueryEmbeddingBundle,
    store: &EmbeddingStore,
    config: &AggregationConfig,
    policy: &SafetyPolicy,
    tags: &SceneTags,
) -> Result<RetrievalResult> {
    config.validate()?;
    let mut raw_maps = Vec::new();
    let mut gated = Vec::new();
    for modality in config.enabled() {
        if store.len(modality) == 0 {
            continue;
        }
        let raw = score_modality(bundle, modality, store)?;
        let normalized = normalize_scores(&raw, config.weight(modality))?;
        gated.push(threshold_scores(&raw, &normalized, config.threshold(modality))?);
        raw_maps.push(raw);
    }

    let mut ranked: Vec<RankedScene> = max_merge(&gated)
        .into_iter()
        .map(|(scene_id, merged)| {
            let raw_scores = raw_maps
                .iter()
                .filter_map(|m| m.scores.get(&scene_id).map(|&s| (m.modality, s)))
                .collect();
            RankedScene {
                scene_id,
                score: merged.score,
                modality: merged.modality,
                raw_scores,
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.scene_id.cmp(&b.scene_id)));

    let (hits, audit) = if config.filter_before_truncation {
        let (mut kept, audit) = apply_safety_filter(ranked, tags, policy);
        kept.truncate(config.top_k);
        (kept, audit)
    } else {
        ranked.truncate(config.top_k);
        apply_safety_filter(ranked, tags, policy)
    };
    Ok(RetrievalResult {
        query: bundle.text.clone(),
        hits,
        audit,
    })
}

/// One search on the wire: query, embeddings, and optional overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub embeddings: QueryEmbeddings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AggregationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<SafetyPolicy>,
}

impl SearchRequest {
    pub fn bundle(&self) -> QueryEmbeddingBundle {
        QueryEmbeddingBundle {
            text: self.text.clone(),
            embeddings: self.embeddings.clone(),
        }
    }

    /// Runs the request, falling back to `default_config` / `default_policy`
    /// for anything the request leaves out.
    pub fn run(
        &self,
        store: &EmbeddingStore,
        tags: &SceneTags,
        default_config: &AggregationConfig,
        default_policy: &SafetyPolicy,
    ) -> Result<RetrievalResult> {
        let bundle = self.bundle().normalized()?;
        let config = self.config.as_ref().unwrap_or(default_config);
        let policy = self.policy.as_ref().unwrap_or(default_policy);
        multimodal_search(&bundle, store, config, policy, tags)
    }
}
