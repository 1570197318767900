//! Action-class reduction and clip-level voting.
//!
//! The classifier emits probabilities over the full Kinetics label space.
//! An [`ActionClassMap`] discards, keeps, or folds each label into a combined
//! class; [`vote_actions`] then averages the reduced distributions across a
//! scene's clips.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label count of the classifier's output space.
pub const KINETICS_LABELS: usize = 710;
/// Classes remaining after reduction: 96 kept plus 89 combined.
pub const REDUCED_CLASSES: usize = 185;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClipProbs {
    pub scene_id: String,
    pub clip_index: u32,
    pub probs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "disposition", content = "target", rename_all = "snake_case")]
pub enum Disposition {
    Discard,
    Keep,
    Combine(String),
}

/// One row of the on-disk map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMapRow {
    pub source_label: String,
    pub disposition: String,
    #[serde(default)]
    pub target_label: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionClassMap {
    entries: BTreeMap<String, Disposition>,
}

impl ActionClassMap {
    pub fn from_rows<I: IntoIterator<Item = ActionMapRow>>(rows: I) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for row in rows {
            let target = row.target_label.filter(|t| !t.trim().is_empty());
            let disposition = match row.disposition.trim().to_ascii_lowercase().as_str() {
                "discard" => Disposition::Discard,
                "keep" => Disposition::Keep,
                "combine" => Disposition::Combine(target.ok_or_else(|| {
                    Error::invalid(format!("{}: combine without target_label", row.source_label))
                })?),
                other => {
                    return Err(Error::invalid(format!(
                        "{}: unknown disposition `{other}`",
                        row.source_label
                    )))
                }
            };
            if entries.insert(row.source_label.clone(), disposition).is_some() {
                return Err(Error::invalid(format!("{}: listed twice", row.source_label)));
            }
        }
        Ok(Self { entries })
    }

    /// Reads a CSV with header `source_label,disposition,target_label`, or a
    /// JSON array of rows when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            let rows: Vec<ActionMapRow> = crate::jsonl::read_json(path)?;
            return Self::from_rows(rows);
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ActionMapRow>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn disposition(&self, label: &str) -> Option<&Disposition> {
        self.entries.get(label)
    }

    /// Output class a label contributes to, `None` when discarded.
    pub fn target<'a>(&'a self, label: &'a str) -> Result<Option<&'a str>> {
        match self.entries.get(label) {
            None => Err(Error::UnknownLabel(label.to_string())),
            Some(Disposition::Discard) => Ok(None),
            Some(Disposition::Keep) => Ok(Some(label)),
            Some(Disposition::Combine(t)) => Ok(Some(t.as_str())),
        }
    }

    /// Distinct output classes.
    pub fn output_classes(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter_map(|(label, d)| match d {
                Disposition::Discard => None,
                Disposition::Keep => Some(label.as_str()),
                Disposition::Combine(t) => Some(t.as_str()),
            })
            .collect()
    }

    /// Checks the published layout: every classifier label listed and
    /// reduced to exactly [`REDUCED_CLASSES`] outputs.
    pub fn validate_full_layout(&self) -> Result<()> {
        if self.entries.len() != KINETICS_LABELS {
            return Err(Error::invalid(format!(
                "action map lists {} labels, expected {KINETICS_LABELS}",
                self.entries.len()
            )));
        }
        let n = self.output_classes().len();
        if n != REDUCED_CLASSES {
            return Err(Error::invalid(format!(
                "action map yields {n} classes, expected {REDUCED_CLASSES}"
            )));
        }
        Ok(())
    }
}

/// Maps a clip's distribution onto the reduced class set: discarded labels
/// drop out, combined labels sum into their target.
pub fn reduce_action_classes(probs: &BTreeMap<String, f64>, map: &ActionClassMap) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (label, &p) in probs {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{label}: probability {p} outside [0,1]")));
        }
        if let Some(target) = map.target(label)? {
            *out.entry(target.to_string()).or_default() += p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteParams {
    pub top_n: usize,
    pub min_mass_fraction: f64,
}

impl Default for VoteParams {
    fn default() -> Self {
        Self {
            top_n: 3,
            min_mass_fraction: 0.15,
        }
    }
}

/// Mean reduced probability per class over all clips; keeps at most
/// `top_n` classes scoring at least `min_mass_fraction`, highest first.
pub fn vote_actions(clips: &[BTreeMap<String, f64>], params: VoteParams) -> Result<Vec<(String, f64)>> {
    if clips.is_empty() {
        return Err(Error::Empty("action clips"));
    }
    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    for clip in clips {
        for (label, p) in clip {
            *mass.entry(label).or_default() += p;
        }
    }
    let n = clips.len() as f64;
    let mut ranked: Vec<(String, f64)> = mass
        .into_iter()
        .map(|(l, m)| (l.to_string(), m / n))
        .filter(|(_, s)| *s >= params.min_mass_fraction)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(params.top_n);
    Ok(ranked)
}
