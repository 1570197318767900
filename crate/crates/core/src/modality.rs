use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One of the four embedding channels a scene can be searched through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
    Caption,
    Metadata,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Video,
        Modality::Audio,
        Modality::Caption,
        Modality::Metadata,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Caption => "caption",
            Modality::Metadata => "metadata",
        }
    }

    /// Rank used to pick the contributing modality when merged scores tie.
    /// Higher wins: metadata > caption > video > audio.
    pub fn merge_priority(self) -> u8 {
        match self {
            Modality::Metadata => 3,
            Modality::Caption => 2,
            Modality::Video => 1,
            Modality::Audio => 0,
        }
    }

    /// Whether a scene may carry several records (segments) of this modality.
    pub fn is_segmented(self) -> bool {
        matches!(self, Modality::Video)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "video" | "vision" => Ok(Modality::Video),
            "audio" => Ok(Modality::Audio),
            "caption" => Ok(Modality::Caption),
            "metadata" => Ok(Modality::Metadata),
            other => Err(Error::invalid(format!("unknown modality `{other}`"))),
        }
    }
}
