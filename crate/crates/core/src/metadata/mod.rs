//! Fusion of expert-detector outputs into metadata sentences and safety tags.

mod actions;
mod objects;
mod places;
mod safety;
mod sentence;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use actions::{
    reduce_action_classes, vote_actions, ActionClassMap, ActionClipProbs, ActionMapRow, Disposition, VoteParams,
    KINETICS_LABELS, REDUCED_CLASSES,
};
pub use objects::{filter_object_presence, Detection, DetectionFrame, ObjectPresenceParams};
pub use places::{aggregate_place, PlaceFrame, PlaceParams, PlacePrediction};
pub use safety::{
    detect_profanity, ensemble_hate, merge_emotions, tag_emotion_from_concepts, Combinator, Emotion, EmotionConcept,
    HateEnsemble, HateScores, SafetyTags, Wordlist, HATE_SUM_TOLERANCE, PROFANITY_SCORE_THRESHOLD,
};
pub use sentence::{build_metadata_sentence, MetadataComponents, MetadataSentence};

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub scene_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    #[serde(rename = "type", default)]
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub scene_id: String,
    pub entities: Vec<Entity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmotionRecord {
    pub scene_id: String,
    pub label: String,
    #[serde(default = "full_score")]
    pub score: f64,
}

fn full_score() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfanityRecord {
    pub scene_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HateRecord {
    pub scene_id: String,
    pub hate: f64,
    pub offensive: f64,
    pub normal: f64,
    #[serde(default)]
    pub llm_flag: bool,
}

/// An emotion concept matched against one of the scene embedding channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub modality: Modality,
    #[serde(flatten)]
    pub concept: EmotionConcept,
}

/// All detector streams for a batch of scenes. Every field is optional input.
#[derive(Debug, Clone, Default)]
pub struct MetadataInputs {
    pub detections: Vec<DetectionFrame>,
    pub places: Vec<PlaceFrame>,
    pub actions: Vec<ActionClipProbs>,
    pub action_map: Option<ActionClassMap>,
    pub captions: Vec<CaptionRecord>,
    pub entities: Vec<EntityRecord>,
    pub text_emotions: Vec<TextEmotionRecord>,
    pub profanity: Vec<ProfanityRecord>,
    pub hate: Vec<HateRecord>,
    pub wordlist: Wordlist,
    pub concepts: Vec<ConceptRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataParams {
    pub objects: ObjectPresenceParams,
    pub places: PlaceParams,
    pub votes: VoteParams,
    pub profanity_threshold: f64,
    pub hate: HateEnsemble,
    /// Text-emotion predictions below this score are ignored.
    pub min_text_emotion_score: f64,
}

impl Default for MetadataParams {
    fn default() -> Self {
        Self {
            objects: ObjectPresenceParams::default(),
            places: PlaceParams::default(),
            votes: VoteParams::default(),
            profanity_threshold: PROFANITY_SCORE_THRESHOLD,
            hate: HateEnsemble::default(),
            min_text_emotion_score: 0.0,
        }
    }
}

/// Per-scene fusion output; one line of the metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub scene_id: String,
    pub sentence: String,
    #[serde(default)]
    pub components: MetadataComponents,
    pub tags: SafetyTags,
}

fn group<'a, T: Clone, F>(items: &'a [T], key: F) -> BTreeMap<&'a str, Vec<T>>
where
    F: Fn(&'a T) -> &'a str,
{
    let mut out: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    for item in items {
        out.entry(key(item)).or_default().push(item.clone());
    }
    out
}

fn unique<'a, T, F>(items: &'a [T], key: F, what: &str) -> Result<BTreeMap<&'a str, &'a T>>
where
    F: Fn(&T) -> &str,
{
    let mut out = BTreeMap::new();
    for item in items {
        if out.insert(key(item), item).is_some() {
            return Err(Error::invalid(format!("{what}: scene {} listed twice", key(item))));
        }
    }
    Ok(out)
}

/// Applies every fusion rule to each scene mentioned in `inputs`. When a
/// store is supplied, scene video and audio embeddings are also matched
/// against the emotion concepts. Output is sorted by scene id.
pub fn run_metadata(inputs: &MetadataInputs, params: &MetadataParams, store: Option<&EmbeddingStore>) -> Result<Vec<SceneMetadata>> {
    for frame in &inputs.detections {
        for d in &frame.detections {
            d.validate()?;
        }
    }
    let detections = group(&inputs.detections, |f| &f.scene_id);
    let places = group(&inputs.places, |f| &f.scene_id);
    let actions = group(&inputs.actions, |c| &c.scene_id);
    let captions = unique(&inputs.captions, |c| &c.scene_id, "captions")?;
    let entities = unique(&inputs.entities, |e| &e.scene_id, "entities")?;
    let text_emotions = unique(&inputs.text_emotions, |e| &e.scene_id, "text emotions")?;
    let profanity = unique(&inputs.profanity, |p| &p.scene_id, "profanity")?;
    let hate = unique(&inputs.hate, |h| &h.scene_id, "hate")?;

    let mut scenes: BTreeSet<&str> = BTreeSet::new();
    scenes.extend(detections.keys());
    scenes.extend(places.keys());
    scenes.extend(actions.keys());
    scenes.extend(captions.keys());
    scenes.extend(entities.keys());
    scenes.extend(text_emotions.keys());
    scenes.extend(profanity.keys());
    scenes.extend(hate.keys());
    if let Some(store) = store {
        if !inputs.concepts.is_empty() {
            scenes.extend(store.scenes().iter().map(String::as_str));
        }
    }

    let visual: Vec<EmotionConcept> = concepts_for(&inputs.concepts, Modality::Video);
    let audio: Vec<EmotionConcept> = concepts_for(&inputs.concepts, Modality::Audio);

    let mut out = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let objects = match detections.get(scene) {
            Some(frames) => filter_object_presence(frames, params.objects)?,
            None => Vec::new(),
        };
        let place = places.get(scene).and_then(|frames| aggregate_place(frames, params.places));
        let actions = match actions.get(scene) {
            Some(clips) => {
                let reduced = clips
                    .iter()
                    .map(|c| match &inputs.action_map {
                        Some(map) => reduce_action_classes(&c.probs, map),
                        None => Ok(c.probs.clone()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                vote_actions(&reduced, params.votes)?.into_iter().map(|(l, _)| l).collect()
            }
            None => Vec::new(),
        };
        let mut mentions: Vec<String> = Vec::new();
        for e in entities.get(scene).map(|r| r.entities.as_slice()).unwrap_or_default() {
            if !mentions.contains(&e.text) {
                mentions.push(e.text.clone());
            }
        }

        let text_label = text_emotions
            .get(scene)
            .filter(|e| e.score >= params.min_text_emotion_score)
            .map(|e| e.label.as_str());
        let (visual_tags, audio_tags) = match store {
            Some(store) => (
                concept_tags(store, scene, Modality::Video, &visual)?,
                concept_tags(store, scene, Modality::Audio, &audio)?,
            ),
            None => (Vec::new(), Vec::new()),
        };
        let emotions = merge_emotions(text_label, &visual_tags, &audio_tags)?;

        let transcript = captions.get(scene).map_or("", |c| c.text.as_str());
        let profanity_flag = detect_profanity(
            transcript,
            profanity.get(scene).map(|p| p.score),
            &inputs.wordlist,
            params.profanity_threshold,
        );
        let hate_flag = match hate.get(scene) {
            Some(h) => params.hate.classify(
                HateScores {
                    hate: h.hate,
                    offensive: h.offensive,
                    normal: h.normal,
                },
                h.llm_flag,
            )?,
            None => false,
        };

        let components = MetadataComponents {
            objects,
            place,
            actions,
            entities: mentions,
            emotions: emotions.iter().map(|e| e.to_string()).collect(),
        };
        out.push(SceneMetadata {
            scene_id: scene.to_string(),
            sentence: build_metadata_sentence(&components),
            components,
            tags: SafetyTags {
                emotions,
                profanity_flag,
                hate_flag,
            },
        });
    }
    Ok(out)
}

fn concepts_for(concepts: &[ConceptRecord], modality: Modality) -> Vec<EmotionConcept> {
    concepts
        .iter()
        .filter(|c| c.modality == modality)
        .map(|c| c.concept.clone())
        .collect()
}

/// Emotion labels for one scene channel; a video scene matches when any
/// of its segments clears the concept threshold.
fn concept_tags(store: &EmbeddingStore, scene: &str, modality: Modality, concepts: &[EmotionConcept]) -> Result<Vec<String>> {
    if concepts.is_empty() {
        return Ok(Vec::new());
    }
    let mut tags = BTreeSet::new();
    for (_, _, v) in store.records(modality).filter(|(s, _, _)| *s == scene) {
        tags.extend(tag_emotion_from_concepts(v, concepts)?);
    }
    Ok(tags.into_iter().map(|e| e.to_string()).collect())
}
