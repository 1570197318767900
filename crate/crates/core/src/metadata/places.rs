use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacePrediction {
    pub label: String,
    pub softmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceFrame {
    pub scene_id: String,
    pub frame_index: u32,
    /// Fraction of the frame covered by person detections.
    pub person_area_fraction: f64,
    pub top_predictions: Vec<PlacePrediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceParams {
    pub max_person_area: f64,
    pub min_softmax: f64,
}

impl Default for PlaceParams {
    fn default() -> Self {
        Self {
            max_person_area: 0.10,
            min_softmax: 0.30,
        }
    }
}

/// Most frequent confident place prediction among frames with a clear
/// background. Ties go to the larger summed softmax, then the smaller label.
pub fn aggregate_place(frames: &[PlaceFrame], params: PlaceParams) -> Option<String> {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for frame in frames.iter().filter(|f| f.person_area_fraction < params.max_person_area) {
        for p in frame.top_predictions.iter().filter(|p| p.softmax > params.min_softmax) {
            let e = tally.entry(&p.label).or_default();
            e.0 += 1;
            e.1 += p.softmax;
        }
    }
    // BTreeMap iterates labels ascending, so keeping the first maximum
    // resolves the final tie lexicographically.
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, mass)) in tally {
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mass > bm),
        };
        if better {
            best = Some((label, count, mass));
        }
    }
    best.map(|(label, _, _)| label.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(area: f64, preds: &[(&str, f64)]) -> PlaceFrame {
        PlaceFrame {
            scene_id: "s".into(),
            frame_index: 0,
            person_area_fraction: area,
            top_predictions: preds
                .iter()
                .map(|(l, s)| PlacePrediction {
                    label: l.to_string(),
                    softmax: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn frequency_rule() {
        let frames = [
            frame(0.05, &[("kitchen", 0.6)]),
            frame(0.20, &[("bar", 0.9)]),
            frame(0.08, &[("kitchen", 0.35), ("bar", 0.32)]),
        ];
        assert_eq!(aggregate_place(&frames, PlaceParams::default()).as_deref(), Some("kitchen"));
    }

    #[test]
    fn crowded_frames_ineligible() {
        let frames = [frame(0.10, &[("kitchen", 0.9)]), frame(0.5, &[("bar", 0.9)])];
        assert_eq!(aggregate_place(&frames, PlaceParams::default()), None);
    }

    #[test]
    fn softmax_threshold_is_strict() {
        let frames = [frame(0.0, &[("kitchen", 0.30)])];
        assert_eq!(aggregate_place(&frames, PlaceParams::default()), None);
    }

    #[test]
    fn tie_breaks() {
        let frames = [
            frame(0.0, &[("kitchen", 0.45), ("bar", 0.35)]),
            frame(0.0, &[("kitchen", 0.45), ("bar", 0.35)]),
        ];
        assert_eq!(aggregate_place(&frames, PlaceParams::default()).as_deref(), Some("kitchen"));
        let frames = [frame(0.0, &[("pub", 0.5), ("bar", 0.5)])];
        assert_eq!(aggregate_place(&frames, PlaceParams::default()).as_deref(), Some("bar"));
    }

    #[test]
    fn no_frames() {
        assert_eq!(aggregate_place(&[], PlaceParams::default()), None);
    }
}
