//! The scene-to-context lookup table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::campaign::CampaignSpec;
use crate::error::{Error, Result};
use crate::ingest::SceneBoundary;
use crate::jsonl;
use crate::search::{multimodal_search, population_stats, AggregationConfig, SceneTags};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub content_id: String,
    pub scene_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub campaign_ids: Vec<String>,
    pub best_scores: BTreeMap<String, f64>,
    pub matched_queries: BTreeMap<String, String>,
}

impl ContextEntry {
    fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite() && self.end_s > self.start_s) {
            return Err(Error::invalid(format!("{}: bad interval [{}, {})", self.scene_id, self.start_s, self.end_s)));
        }
        if self.campaign_ids.is_empty() {
            return Err(Error::invalid(format!("{}: no campaigns", self.scene_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutHeader {
    pub version: String,
    pub config_hash: String,
    pub entries: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextLut {
    version: String,
    config_hash: String,
    by_content: BTreeMap<String, Vec<ContextEntry>>,
}

impl ContextLut {
    /// Sorts entries by time within each content and rejects overlaps.
    pub fn from_entries(entries: Vec<ContextEntry>, config_hash: String) -> Result<Self> {
        let mut by_content: BTreeMap<String, Vec<ContextEntry>> = BTreeMap::new();
        for e in entries {
            e.validate()?;
            by_content.entry(e.content_id.clone()).or_default().push(e);
        }
        for (content, list) in &mut by_content {
            list.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then_with(|| a.scene_id.cmp(&b.scene_id)));
            if let Some(w) = list.windows(2).find(|w| w[1].start_s < w[0].end_s) {
                return Err(Error::invalid(format!(
                    "{content}: scenes {} and {} overlap",
                    w[0].scene_id, w[1].scene_id
                )));
            }
        }
        let mut lut = Self {
            version: String::new(),
            config_hash,
            by_content,
        };
        lut.version = lut.digest()?;
        Ok(lut)
    }

    fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        for e in self.entries() {
            h.update(serde_json::to_vec(e)?);
            h.update(b"\n");
        }
        Ok(hex::encode(&h.finalize()[..8]))
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn len(&self) -> usize {
        self.by_content.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_content.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ContextEntry> {
        self.by_content.values().flatten()
    }

    /// The entry with `start_s <= t < end_s`, if any.
    pub fn lookup(&self, content_id: &str, t: f64) -> Option<&ContextEntry> {
        if !t.is_finite() {
            return None;
        }
        let list = self.by_content.get(content_id)?;
        let idx = list.partition_point(|e| e.start_s <= t);
        let e = list.get(idx.checked_sub(1)?)?;
        (t < e.end_s).then_some(e)
    }

    pub fn header(&self) -> LutHeader {
        LutHeader {
            version: self.version.clone(),
            config_hash: self.config_hash.clone(),
            entries: self.len(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header())?;
        out.push('\n');
        for e in self.entries() {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Loads a snapshot and checks its header against the recomputed version.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let header: LutHeader = serde_json::from_str(&first).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        let entries: Vec<ContextEntry> = jsonl::parse_lines(reader, path)?;
        if entries.len() != header.entries {
            return Err(Error::invalid(format!(
                "{}: header lists {} entries, found {}",
                path.display(),
                header.entries,
                entries.len()
            )));
        }
        let lut = Self::from_entries(entries, header.config_hash)?;
        if lut.version != header.version {
            return Err(Error::invalid(format!(
                "{}: version {} does not match contents ({})",
                path.display(),
                header.version,
                lut.version
            )));
        }
        Ok(lut)
    }
}

/// Hash of everything a build depends on besides boundaries and tags.
pub fn config_hash(store: &EmbeddingStore, campaigns: &[CampaignSpec]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(store.version().as_bytes());
    let mut sorted: Vec<&CampaignSpec> = campaigns.iter().collect();
    sorted.sort_by(|a, b| a.campaign_id.cmp(&b.campaign_id));
    for c in sorted {
        h.update(serde_json::to_vec(c)?);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

#[derive(Debug, Clone, PartialEq)]
struct Match {
    score: f64,
    query: String,
}

/// Per-scene best score and arg-max query for one campaign, after its floor
/// and cap.
fn campaign_matches(store: &EmbeddingStore, spec: &CampaignSpec, tags: &SceneTags) -> Result<Vec<(String, Match)>> {
    spec.check()?;
    let config = AggregationConfig {
        top_k: store.scenes().len().max(1),
        ..spec.config.clone().unwrap_or_default()
    };
    let mut best: BTreeMap<String, Match> = BTreeMap::new();
    for q in &spec.queries {
        let bundle = q.bundle().normalized()?;
        let result = multimodal_search(&bundle, store, &config, &spec.policy, tags)?;
        for hit in result.hits {
            let better = best.get(&hit.scene_id).is_none_or(|m| hit.score > m.score);
            if better {
                best.insert(
                    hit.scene_id,
                    Match {
                        score: hit.score,
                        query: q.text.clone(),
                    },
                );
            }
        }
    }
    let floor = match spec.score_floor {
        Some(f) => f,
        None if best.is_empty() => f64::INFINITY,
        None => {
            let (mu, sigma) = population_stats(best.values().map(|m| m.score).collect::<Vec<_>>());
            mu + sigma
        }
    };
    let mut kept: Vec<(String, Match)> = best.into_iter().filter(|(_, m)| m.score >= floor).collect();
    kept.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then_with(|| a.0.cmp(&b.0)));
    if let Some(cap) = spec.max_scenes {
        kept.truncate(cap);
    }
    Ok(kept)
}

pub fn build_context_lut(
    store: &EmbeddingStore,
    campaigns: &[CampaignSpec],
    boundaries: &[SceneBoundary],
    tags: &SceneTags,
) -> Result<ContextLut> {
    let ids: BTreeSet<&str> = campaigns.iter().map(|c| c.campaign_id.as_str()).collect();
    if ids.len() != campaigns.len() {
        return Err(Error::invalid("duplicate campaign_id"));
    }
    let by_scene: BTreeMap<&str, &SceneBoundary> = boundaries.iter().map(|b| (b.scene_id.as_str(), b)).collect();
    if let Some(s) = store.scenes().iter().find(|s| !by_scene.contains_key(s.as_str())) {
        return Err(Error::UnknownScene(s.clone()));
    }

    let mut entries: BTreeMap<String, ContextEntry> = BTreeMap::new();
    for spec in campaigns {
        for (scene_id, m) in campaign_matches(store, spec, tags)? {
            let b = by_scene[scene_id.as_str()];
            let e = entries.entry(scene_id.clone()).or_insert_with(|| ContextEntry {
                content_id: b.content_id.clone(),
                scene_id,
                start_s: b.start_s,
                end_s: b.end_s,
                campaign_ids: Vec::new(),
                best_scores: BTreeMap::new(),
                matched_queries: BTreeMap::new(),
            });
            e.campaign_ids.push(spec.campaign_id.clone());
            e.best_scores.insert(spec.campaign_id.clone(), m.score);
            e.matched_queries.insert(spec.campaign_id.clone(), m.query);
        }
    }
    for e in entries.values_mut() {
        e.campaign_ids.sort();
    }
    ContextLut::from_entries(entries.into_values().collect(), config_hash(store, campaigns)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::campaign::CampaignQuery;
    use crate::metadata::SafetyTags;
    use crate::modality::Modality;
    use crate::search::{QueryEmbeddings, SafetyPolicy};
    use crate::store::{ingest_embeddings, EmbeddingRecord};

    fn entry(content: &str, scene: &str, start: f64, end: f64, campaign: &str) -> ContextEntry {
        ContextEntry {
            content_id: content.into(),
            scene_id: scene.into(),
            start_s: start,
            end_s: end,
            campaign_ids: vec![campaign.into()],
            best_scores: BTreeMap::from([(campaign.to_string(), 1.0)]),
            matched_queries: BTreeMap::from([(campaign.to_string(), "q".to_string())]),
        }
    }

    #[test]
    fn lookup_half_open() {
        let lut = ContextLut::from_entries(
            vec![entry("m", "s2", 150.0, 180.0, "C2"), entry("m", "s1", 120.0, 150.0, "C1")],
            "h".into(),
        )
        .unwrap();
        assert_eq!(lut.lookup("m", 130.0).unwrap().campaign_ids, ["C1"]);
        assert_eq!(lut.lookup("m", 120.0).unwrap().scene_id, "s1");
        assert_eq!(lut.lookup("m", 150.0).unwrap().scene_id, "s2");
        assert!(lut.lookup("m", 180.0).is_none());
        assert!(lut.lookup("m", 119.9).is_none());
        assert!(lut.lookup("other", 130.0).is_none());
        assert!(lut.lookup("m", f64::NAN).is_none());
    }

    #[test]
    fn rejects_overlap_and_empty_campaigns() {
        let overlap = vec![entry("m", "a", 0.0, 10.0, "C"), entry("m", "b", 5.0, 15.0, "C")];
        assert!(ContextLut::from_entries(overlap, "h".into()).is_err());
        let mut e = entry("m", "a", 0.0, 10.0, "C");
        e.campaign_ids.clear();
        assert!(ContextLut::from_entries(vec![e], "h".into()).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let lut = ContextLut::from_entries(vec![entry("m", "s1", 0.0, 5.0, "C1")], "abc".into()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lut.jsonl");
        lut.save(&p).unwrap();
        let back = ContextLut::load(&p).unwrap();
        assert_eq!(back, lut);
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replacen(lut.version(), "0000000000000000", 1)).unwrap();
        assert!(ContextLut::load(&p).is_err());
    }

    fn fixture() -> (EmbeddingStore, Vec<SceneBoundary>, SceneTags) {
        let recs = vec![
            EmbeddingRecord::new("dog", Modality::Caption, 0, vec![1.0, 0.0, 0.0]),
            EmbeddingRecord::new("cat", Modality::Caption, 0, vec![0.0, 1.0, 0.0]),
            EmbeddingRecord::new("car", Modality::Caption, 0, vec![0.0, 0.0, 1.0]),
        ];
        let (store, _) = ingest_embeddings(recs, None);
        let bounds = vec![
            SceneBoundary {
                content_id: "m".into(),
                scene_id: "dog".into(),
                start_s: 120.0,
                end_s: 150.0,
            },
            SceneBoundary {
                content_id: "m".into(),
                scene_id: "cat".into(),
                start_s: 0.0,
                end_s: 120.0,
            },
            SceneBoundary {
                content_id: "m".into(),
                scene_id: "car".into(),
                start_s: 150.0,
                end_s: 200.0,
            },
        ];
        let tags = ["dog", "cat", "car"].iter().map(|s| (s.to_string(), SafetyTags::default())).collect();
        (store, bounds, tags)
    }

    fn dogs(floor: Option<f64>) -> CampaignSpec {
        CampaignSpec {
            campaign_id: "dogs".into(),
            queries: vec![CampaignQuery {
                text: "dog".into(),
                embeddings: QueryEmbeddings {
                    text: Some(vec![1.0, 0.0, 0.0]),
                    ..Default::default()
                },
            }],
            score_floor: floor,
            ..Default::default()
        }
    }

    #[test]
    fn planted_scene_enters_lut() {
        let (store, bounds, tags) = fixture();
        let lut = build_context_lut(&store, &[dogs(Some(0.0))], &bounds, &tags).unwrap();
        let e = lut.lookup("m", 130.0).unwrap();
        assert_eq!(e.scene_id, "dog");
        assert_eq!(e.campaign_ids, ["dogs"]);
        assert_eq!(lut.len(), 1);
        // default floor μ + σ keeps only the standout scene
        assert_eq!(build_context_lut(&store, &[dogs(None)], &bounds, &tags).unwrap().len(), 1);
    }

    #[test]
    fn infinite_floor_and_blocked_scene() {
        let (store, bounds, mut tags) = fixture();
        assert!(build_context_lut(&store, &[dogs(Some(f64::INFINITY))], &bounds, &tags).unwrap().is_empty());
        tags.get_mut("dog").unwrap().hate_flag = true;
        let mut c = dogs(Some(-10.0));
        c.policy = SafetyPolicy {
            block_hate: true,
            ..Default::default()
        };
        let lut = build_context_lut(&store, &[c], &bounds, &tags).unwrap();
        assert!(lut.entries().all(|e| e.scene_id != "dog"));
        assert_eq!(lut.len(), 2);
    }

    #[test]
    fn deterministic_and_checks_inputs() {
        let (store, bounds, tags) = fixture();
        let a = build_context_lut(&store, &[dogs(Some(0.0))], &bounds, &tags).unwrap();
        let b = build_context_lut(&store, &[dogs(Some(0.0))], &bounds, &tags).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        assert!(matches!(
            build_context_lut(&store, &[dogs(Some(0.0))], &bounds[1..], &tags),
            Err(Error::UnknownScene(_))
        ));
        let mut no_emb = dogs(Some(0.0));
        no_emb.queries[0].embeddings = QueryEmbeddings::default();
        assert!(build_context_lut(&store, &[no_emb], &bounds, &tags).is_err());
    }
}
