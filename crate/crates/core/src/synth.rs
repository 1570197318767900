//! Seeded synthetic corpora with planted relevant scenes.
//!
//! Every query gets one planted scene whose frames, audio, caption, and
//! metadata embeddings sit within a small perturbation of the matching query
//! vectors (cosine ≈ 1). All other scenes are random, so a correct engine
//! ranks each planted scene first for its query.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{CampaignQuery, CampaignSpec};
use crate::error::{Error, Result};
use crate::eval::{JudgmentLine, JudgmentRecord, QueryRecord, RelevanceJudgments, SceneConcepts};
use crate::ingest::{run_pipeline, PipelineOutput, PlanParams, SceneBoundary, SceneExtras, Stream, TimedFeature};
use crate::jsonl;
use crate::metadata::{build_metadata_sentence, Emotion, MetadataComponents, SafetyTags, SceneMetadata};
use crate::modality::Modality;
use crate::search::{QueryEmbeddings, SafetyPolicy, SceneTags};
use crate::store::{ingest_embeddings, EmbeddingRecord, EmbeddingStore};

const VOCAB: [&str; 16] = [
    "dog", "beach", "car chase", "cooking", "soccer", "wedding", "army", "snow", "concert", "horse", "city night",
    "rain", "birthday", "surfing", "library", "fireworks",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub contents: usize,
    pub scenes_per_content: usize,
    pub dim: usize,
    pub queries: usize,
    /// Seconds between sampled frames.
    pub frame_step_s: f64,
    /// Perturbation added to planted vectors before normalization.
    pub planted_noise: f64,
    pub hate_rate: f64,
    pub profanity_rate: f64,
    /// Chance a non-planted scene lacks a caption embedding.
    pub missing_caption_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            contents: 3,
            scenes_per_content: 10,
            dim: 16,
            queries: 6,
            frame_step_s: 2.0,
            planted_noise: 0.01,
            hate_rate: 0.15,
            profanity_rate: 0.15,
            missing_caption_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub params: SynthParams,
    pub boundaries: Vec<SceneBoundary>,
    pub features: Vec<TimedFeature>,
    pub text_embeddings: Vec<EmbeddingRecord>,
    pub metadata: Vec<SceneMetadata>,
    pub queries: Vec<QueryRecord>,
    pub judgments: Vec<JudgmentRecord>,
    pub scene_concepts: Vec<SceneConcepts>,
    pub campaigns: Vec<CampaignSpec>,
    /// Query id → planted scene id.
    pub planted: BTreeMap<String, String>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return unit(v);
        }
    }
}

fn perturb(rng: &mut ChaCha8Rng, base: &[f64], scale: f64) -> Vec<f64> {
    unit(base.iter().map(|x| x + scale * rng.gen_range(-1.0..1.0)).collect())
}

fn random_tags(rng: &mut ChaCha8Rng, p: &SynthParams) -> SafetyTags {
    let mut emotions: BTreeSet<Emotion> = Emotion::ALL[1..].iter().copied().filter(|_| rng.gen_bool(0.15)).collect();
    if emotions.is_empty() {
        emotions.insert(Emotion::Neutral);
    }
    SafetyTags {
        emotions,
        profanity_flag: rng.gen_bool(p.profanity_rate),
        hate_flag: rng.gen_bool(p.hate_rate),
    }
}

pub fn generate(params: SynthParams) -> Result<SynthCorpus> {
    let p = params;
    let total = p.contents * p.scenes_per_content;
    if p.dim < 2 || total == 0 || p.queries == 0 || p.queries > total.min(VOCAB.len()) {
        return Err(Error::invalid(format!(
            "synth needs dim >= 2 and 1..={} queries for {total} scenes",
            total.min(VOCAB.len())
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut boundaries = Vec::with_capacity(total);
    for c in 0..p.contents {
        let mut t = 0.0;
        for s in 0..p.scenes_per_content {
            let len = f64::from(rng.gen_range(10u32..=60));
            boundaries.push(SceneBoundary {
                content_id: format!("content{c:02}"),
                scene_id: format!("c{c:02}s{s:03}"),
                start_s: t,
                end_s: t + len,
            });
            t += len;
        }
    }

    let mut scene_ids: Vec<usize> = (0..total).collect();
    scene_ids.shuffle(&mut rng);
    let mut words: Vec<&str> = VOCAB.to_vec();
    words.shuffle(&mut rng);

    let mut queries = Vec::new();
    let mut planted_at: BTreeMap<usize, usize> = BTreeMap::new();
    let mut planted = BTreeMap::new();
    for (qi, &scene) in scene_ids.iter().take(p.queries).enumerate() {
        let query_id = format!("q{qi:02}");
        queries.push(QueryRecord {
            query_id: query_id.clone(),
            text: words[qi].to_string(),
            embeddings: Some(QueryEmbeddings {
                vision: Some(random_unit(&mut rng, p.dim)),
                audio: Some(random_unit(&mut rng, p.dim)),
                text: Some(random_unit(&mut rng, p.dim)),
            }),
            concepts: Some(vec![words[qi].to_string()]),
        });
        planted_at.insert(scene, qi);
        planted.insert(query_id, boundaries[scene].scene_id.clone());
    }

    let mut features = Vec::new();
    let mut text_embeddings = Vec::new();
    let mut metadata = Vec::new();
    let mut scene_concepts = Vec::new();
    for (i, b) in boundaries.iter().enumerate() {
        let q = planted_at.get(&i).map(|&qi| (qi, queries[qi].embeddings.clone().unwrap_or_default()));
        let noise = p.planted_noise;

        let mut t = 0.0;
        let mut segment_base: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        while t < b.duration() {
            let vector = match &q {
                Some((_, e)) => perturb(&mut rng, e.vision.as_deref().unwrap_or_default(), noise),
                None => {
                    let seg = (t / 15.0).floor() as u64;
                    let base = match segment_base.get(&seg) {
                        Some(v) => v.clone(),
                        None => {
                            let v = random_unit(&mut rng, p.dim);
                            segment_base.insert(seg, v.clone());
                            v
                        }
                    };
                    perturb(&mut rng, &base, 0.3)
                }
            };
            features.push(TimedFeature {
                scene_id: b.scene_id.clone(),
                stream: Stream::Frame,
                time_s: t,
                vector,
            });
            t += p.frame_step_s;
        }
        let mut t = 0.0;
        let audio_base = random_unit(&mut rng, p.dim);
        while t < b.duration() {
            let vector = match &q {
                Some((_, e)) => perturb(&mut rng, e.audio.as_deref().unwrap_or_default(), noise),
                None => perturb(&mut rng, &audio_base, 0.3),
            };
            features.push(TimedFeature {
                scene_id: b.scene_id.clone(),
                stream: Stream::AudioChunk,
                time_s: t,
                vector,
            });
            t += 5.0;
        }

        let (caption, meta) = match &q {
            Some((_, e)) => {
                let text = e.text.as_deref().unwrap_or_default();
                (Some(perturb(&mut rng, text, noise)), perturb(&mut rng, text, noise))
            }
            None => {
                let cap = (!rng.gen_bool(p.missing_caption_rate)).then(|| random_unit(&mut rng, p.dim));
                (cap, random_unit(&mut rng, p.dim))
            }
        };
        if let Some(v) = caption {
            text_embeddings.push(EmbeddingRecord::new(b.scene_id.clone(), Modality::Caption, 0, v));
        }
        text_embeddings.push(EmbeddingRecord::new(b.scene_id.clone(), Modality::Metadata, 0, meta));

        let word = match &q {
            Some((qi, _)) => words[*qi],
            None => words[rng.gen_range(p.queries..words.len())],
        };
        let tags = match q {
            Some(_) => SafetyTags {
                emotions: BTreeSet::from([Emotion::Neutral]),
                ..Default::default()
            },
            None => random_tags(&mut rng, &p),
        };
        let components = MetadataComponents {
            objects: vec![word.to_string()],
            place: None,
            actions: Vec::new(),
            entities: Vec::new(),
            emotions: tags.emotions.iter().map(|e| e.to_string()).collect(),
        };
        metadata.push(SceneMetadata {
            scene_id: b.scene_id.clone(),
            sentence: build_metadata_sentence(&components),
            components,
            tags,
        });
        scene_concepts.push(SceneConcepts {
            scene_id: b.scene_id.clone(),
            concepts: vec![word.to_string()],
        });
    }

    let judgments = queries
        .iter()
        .flat_map(|q| {
            let hit = &planted[&q.query_id];
            boundaries.iter().map(move |b| JudgmentRecord {
                query_id: q.query_id.clone(),
                scene_id: b.scene_id.clone(),
                relevant: u8::from(&b.scene_id == hit),
            })
        })
        .collect();

    let campaigns = queries
        .iter()
        .map(|q| CampaignSpec {
            campaign_id: format!("camp-{}", q.text.replace(' ', "-")),
            queries: vec![CampaignQuery {
                text: q.text.clone(),
                embeddings: q.embeddings.clone().unwrap_or_default(),
            }],
            config: None,
            policy: SafetyPolicy {
                block_hate: true,
                block_profanity: true,
                ..Default::default()
            },
            score_floor: None,
            max_scenes: Some(5),
        })
        .collect();

    Ok(SynthCorpus {
        params: p,
        boundaries,
        features,
        text_embeddings,
        metadata,
        queries,
        judgments,
        scene_concepts,
        campaigns,
        planted,
    })
}

/// Ten scenes in one content with concept-style annotations.
pub fn val1_standin(seed: u64) -> Result<SynthCorpus> {
    generate(SynthParams {
        seed,
        contents: 1,
        scenes_per_content: 10,
        queries: 5,
        ..SynthParams::default()
    })
}

impl SynthCorpus {
    pub fn tags(&self) -> SceneTags {
        self.metadata.iter().map(|m| (m.scene_id.clone(), m.tags.clone())).collect()
    }

    pub fn pipeline(&self) -> Result<PipelineOutput> {
        let extras = SceneExtras {
            text_embeddings: self.text_embeddings.clone(),
            metadata: self
                .metadata
                .iter()
                .map(|m| (m.scene_id.clone(), (m.sentence.clone(), m.tags.clone())))
                .collect(),
        };
        run_pipeline(&self.boundaries, &self.features, &extras, PlanParams::default())
    }

    pub fn store(&self) -> Result<EmbeddingStore> {
        let out = self.pipeline()?;
        let (store, report) = ingest_embeddings(out.records, None);
        if let Some(r) = report.rejected.first() {
            return Err(Error::invalid(format!("synthetic record rejected: {:?}", r)));
        }
        Ok(store)
    }

    pub fn relevance(&self) -> Result<RelevanceJudgments> {
        RelevanceJudgments::from_records(self.judgments.clone())
    }

    /// Writes every input file the CLI consumes.
    ///
    /// `judgments.jsonl` uses the pair format; `annotations.jsonl` carries the
    /// same corpus in concept style.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        jsonl::write(&dir.join("boundaries.jsonl"), &self.boundaries)?;
        jsonl::write(&dir.join("features.jsonl"), &self.features)?;
        jsonl::write(&dir.join("text_embeddings.jsonl"), &self.text_embeddings)?;
        jsonl::write(&dir.join("metadata.jsonl"), &self.metadata)?;
        jsonl::write(&dir.join("queries.jsonl"), &self.queries)?;
        jsonl::write(&dir.join("judgments.jsonl"), &self.judgments)?;
        let concepts: Vec<JudgmentLine> = self.scene_concepts.iter().cloned().map(JudgmentLine::Concepts).collect();
        jsonl::write(&dir.join("annotations.jsonl"), &concepts)?;
        jsonl::write(&dir.join("campaigns.jsonl"), &self.campaigns)?;
        jsonl::write_json(&dir.join("planted.json"), &self.planted)
    }
}
