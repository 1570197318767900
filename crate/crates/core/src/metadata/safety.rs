//! Brand-safety signals: emotions, profanity, and hate speech.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Joy,
    Surprise,
    Anger,
    Sadness,
    Disgust,
    Fear,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::Neutral,
        Emotion::Joy,
        Emotion::Surprise,
        Emotion::Anger,
        Emotion::Sadness,
        Emotion::Disgust,
        Emotion::Fear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Joy => "joy",
            Emotion::Surprise => "surprise",
            Emotion::Anger => "anger",
            Emotion::Sadness => "sadness",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyTags {
    #[serde(default)]
    pub emotions: BTreeSet<Emotion>,
    #[serde(default)]
    pub profanity_flag: bool,
    #[serde(default)]
    pub hate_flag: bool,
}

/// Case-insensitive whole-word (or whole-phrase) matcher.
#[derive(Debug, Clone, Default)]
pub struct Wordlist {
    terms: Vec<Vec<String>>,
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Wordlist {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            terms: terms
                .into_iter()
                .map(|t| tokens(t.as_ref()))
                .filter(|t| !t.is_empty())
                .collect(),
        }
    }

    /// One term per line; blank lines and `#` comments skipped. A CSV whose
    /// first column holds the term is also accepted.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.split(',').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn matches(&self, text: &str) -> bool {
        let words = tokens(text);
        self.terms
            .iter()
            .any(|term| words.windows(term.len()).any(|w| w == term.as_slice()))
    }
}

pub const PROFANITY_SCORE_THRESHOLD: f64 = 0.8;

pub fn detect_profanity(transcript: &str, external_score: Option<f64>, wordlist: &Wordlist, score_threshold: f64) -> bool {
    wordlist.matches(transcript) || external_score.is_some_and(|s| s >= score_threshold)
}

/// Slack on the hate threshold so decimal boundaries such as 0.4 + 0.3
/// against 0.7 compare as equal.
pub const HATE_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HateScores {
    pub hate: f64,
    pub offensive: f64,
    pub normal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Combinator {
    Or,
    And,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HateEnsemble {
    pub combinator: Combinator,
    pub theta: f64,
    /// Scales the summed hate + offensive classifier mass before thresholding.
    #[serde(default = "one")]
    pub classifier_weight: f64,
    /// The language-model flag only counts when this is positive.
    #[serde(default = "one")]
    pub llm_weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for HateEnsemble {
    fn default() -> Self {
        Self {
            combinator: Combinator::Or,
            theta: 0.7,
            classifier_weight: 1.0,
            llm_weight: 1.0,
        }
    }
}

impl HateEnsemble {
    pub fn new(combinator: Combinator, theta: f64) -> Self {
        Self {
            combinator,
            theta,
            ..Self::default()
        }
    }

    pub fn classify(&self, scores: HateScores, llm_flag: bool) -> Result<bool> {
        if ![scores.hate, scores.offensive, scores.normal].iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("non-finite hate classifier score"));
        }
        let classifier_flag = self.classifier_weight * (scores.hate + scores.offensive) >= self.theta - HATE_SUM_TOLERANCE;
        let llm_flag = llm_flag && self.llm_weight > 0.0;
        Ok(match self.combinator {
            Combinator::Or => classifier_flag || llm_flag,
            Combinator::And => classifier_flag && llm_flag,
        })
    }
}

pub fn ensemble_hate(scores: HateScores, llm_flag: bool, combinator: Combinator, theta: f64) -> Result<bool> {
    HateEnsemble::new(combinator, theta).classify(scores, llm_flag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionConcept {
    /// Text prompt or reference audio this concept was encoded from.
    #[serde(default)]
    pub concept: String,
    pub emotion: Emotion,
    pub threshold: f64,
    pub vector: Vec<f64>,
}

/// Emotions whose concept embeddings score strictly above their threshold
/// against `scene`.
pub fn tag_emotion_from_concepts(scene: &[f64], concepts: &[EmotionConcept]) -> Result<BTreeSet<Emotion>> {
    let mut out = BTreeSet::new();
    for c in concepts {
        if c.vector.len() != scene.len() {
            return Err(Error::DimensionMismatch {
                expected: scene.len(),
                found: c.vector.len(),
            });
        }
        if dot(scene, &c.vector) > c.threshold {
            out.insert(c.emotion);
        }
    }
    Ok(out)
}

/// Union of every emotion source, defaulting to neutral when all are empty.
pub fn merge_emotions<S: AsRef<str>>(text_label: Option<&str>, visual: &[S], audio: &[S]) -> Result<BTreeSet<Emotion>> {
    let mut out = BTreeSet::new();
    for label in text_label.into_iter().chain(visual.iter().map(AsRef::as_ref)).chain(audio.iter().map(AsRef::as_ref)) {
        out.insert(label.parse::<Emotion>()?);
    }
    if out.is_empty() {
        out.insert(Emotion::Neutral);
    }
    Ok(out)
}
