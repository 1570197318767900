use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    /// Normalized `[x1, y1, x2, y2]`.
    pub bbox: [f64; 4],
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        let [x1, y1, x2, y2] = self.bbox;
        if !self.confidence.is_finite() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!("{}: confidence {} outside [0,1]", self.label, self.confidence)));
        }
        let in_unit = self.bbox.iter().all(|c| (0.0..=1.0).contains(c));
        if !in_unit || x2 <= x1 || y2 <= y1 {
            return Err(Error::invalid(format!("{}: malformed bbox {:?}", self.label, self.bbox)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub scene_id: String,
    pub frame_index: u32,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPresenceParams {
    pub min_confidence: f64,
    pub min_frame_fraction: f64,
}

impl Default for ObjectPresenceParams {
    fn default() -> Self {
        Self {
            min_confidence: 0.35,
            min_frame_fraction: 0.20,
        }
    }
}

/// Labels detected (at `min_confidence` or above) in at least
/// `min_frame_fraction` of the scene's frames. Sorted by label.
pub fn filter_object_presence(frames: &[DetectionFrame], params: ObjectPresenceParams) -> Result<Vec<String>> {
    if frames.is_empty() {
        return Err(Error::Empty("detection frames"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for frame in frames {
        let labels: BTreeSet<&str> = frame
            .detections
            .iter()
            .filter(|d| d.confidence >= params.min_confidence)
            .map(|d| d.label.as_str())
            .collect();
        for label in labels {
            *counts.entry(label).or_default() += 1;
        }
    }
    let total = frames.len() as f64;
    Ok(counts
        .into_iter()
        .filter(|&(_, n)| n as f64 / total >= params.min_frame_fraction)
        .map(|(label, _)| label.to_string())
        .collect())
}
