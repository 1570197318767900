use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataComponents {
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub place: Option<String>,
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub emotions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataSentence {
    pub scene_id: String,
    pub text: String,
    pub components: MetadataComponents,
}

impl MetadataSentence {
    pub fn new(scene_id: impl Into<String>, components: MetadataComponents) -> Self {
        Self {
            scene_id: scene_id.into(),
            text: build_metadata_sentence(&components),
            components,
        }
    }
}

/// Renders the fixed template. Empty components drop their clause; an
/// all-empty input renders as the empty string.
pub fn build_metadata_sentence(c: &MetadataComponents) -> String {
    let mut clauses = Vec::with_capacity(5);
    if !c.objects.is_empty() {
        clauses.push(format!("This scene contains {}.", c.objects.join(", ")));
    }
    if let Some(place) = c.place.as_deref().filter(|p| !p.is_empty()) {
        clauses.push(format!("It takes place in {place}."));
    }
    if !c.actions.is_empty() {
        clauses.push(format!("Actions: {}.", c.actions.join(", ")));
    }
    if !c.entities.is_empty() {
        clauses.push(format!("Mentions: {}.", c.entities.join(", ")));
    }
    if !c.emotions.is_empty() {
        clauses.push(format!("Emotion: {}.", c.emotions.join(", ")));
    }
    clauses.join(" ")
}
