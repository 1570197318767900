//! Advertiser campaigns and the registry that versions them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::search::{AggregationConfig, QueryEmbeddingBundle, QueryEmbeddings, SafetyPolicy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignQuery {
    pub text: String,
    #[serde(default)]
    pub embeddings: QueryEmbeddings,
}

impl CampaignQuery {
    pub fn bundle(&self) -> QueryEmbeddingBundle {
        QueryEmbeddingBundle {
            text: self.text.clone(),
            embeddings: self.embeddings.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub campaign_id: String,
    pub queries: Vec<CampaignQuery>,
    /// Aggregation overrides; `top_k` is ignored because the LUT ranks every
    /// scene and caps with `max_scenes` instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AggregationConfig>,
    #[serde(default)]
    pub policy: SafetyPolicy,
    /// Minimum final score; when unset, μ + σ of the campaign's own scores.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::search::opt_bound")]
    pub score_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_scenes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl CampaignSpec {
    /// Every problem with the spec, keyed by field path. Empty when valid.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if self.campaign_id.trim().is_empty() {
            errs.push(FieldError::new("campaign_id", "must not be empty"));
        }
        if self.queries.is_empty() {
            errs.push(FieldError::new("queries", "at least one query is required"));
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.text.trim().is_empty() {
                errs.push(FieldError::new(format!("queries[{i}].text"), "must not be empty"));
            }
            let e = &q.embeddings;
            if e.vision.is_none() && e.audio.is_none() && e.text.is_none() {
                errs.push(FieldError::new(format!("queries[{i}].embeddings"), "no embedding vectors"));
            }
        }
        if let Some(f) = self.score_floor {
            if f.is_nan() || f == f64::NEG_INFINITY {
                errs.push(FieldError::new("score_floor", format!("must be a number or \"inf\", got {f}")));
            }
        }
        if self.max_scenes == Some(0) {
            errs.push(FieldError::new("max_scenes", "must be at least 1"));
        }
        if let Some(c) = &self.config {
            if let Err(e) = (AggregationConfig { top_k: 1, ..c.clone() }).validate() {
                errs.push(FieldError::new("config", e.to_string()));
            }
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            return Ok(());
        }
        let msg = errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; ");
        Err(Error::invalid(format!("campaign `{}`: {msg}", self.campaign_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredCampaign {
    pub version: u64,
    pub spec: CampaignSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub campaign_id: String,
    pub version: u64,
    pub changed: bool,
}

/// Campaigns by id. Optionally backed by a JSONL file rewritten on every
/// change.
#[derive(Debug, Default)]
pub struct CampaignRegistry {
    campaigns: BTreeMap<String, RegisteredCampaign>,
    path: Option<PathBuf>,
}

impl CampaignRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a persisted registry, starting empty when the file is absent.
    pub fn open(path: &Path) -> Result<Self> {
        let mut campaigns = BTreeMap::new();
        if path.exists() {
            for c in jsonl::read::<RegisteredCampaign>(path)? {
                c.spec.check()?;
                campaigns.insert(c.spec.campaign_id.clone(), c);
            }
        }
        Ok(Self {
            campaigns,
            path: Some(path.to_path_buf()),
        })
    }

    /// Identical resubmissions keep their version; a changed spec under an
    /// existing id bumps it.
    pub fn register(&mut self, spec: CampaignSpec) -> std::result::Result<Registration, Vec<FieldError>> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(errs);
        }
        let id = spec.campaign_id.clone();
        let (version, changed) = match self.campaigns.get(&id) {
            Some(existing) if existing.spec == spec => (existing.version, false),
            Some(existing) => (existing.version + 1, true),
            None => (1, true),
        };
        if changed {
            self.campaigns.insert(id.clone(), RegisteredCampaign { version, spec });
            if let Err(e) = self.persist() {
                return Err(vec![FieldError::new("registry", e.to_string())]);
            }
        }
        Ok(Registration {
            campaign_id: id,
            version,
            changed,
        })
    }

    pub fn get(&self, id: &str) -> Option<&RegisteredCampaign> {
        self.campaigns.get(id)
    }

    pub fn len(&self) -> usize {
        self.campaigns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.campaigns.is_empty()
    }

    pub fn specs(&self) -> Vec<CampaignSpec> {
        self.campaigns.values().map(|c| c.spec.clone()).collect()
    }

    fn persist(&self) -> Result<()> {
        match &self.path {
            Some(p) => jsonl::write(p, self.campaigns.values()),
            None => Ok(()),
        }
    }
}
