//! Multimodal scene retrieval: an exact embedding store, per-scene
//! ingestion and metadata extraction, score aggregation across modality
//! experts, evaluation metrics, and a contextual ad lookup service.

pub mod ad;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod jsonl;
pub mod metadata;
pub mod modality;
pub mod search;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use modality::Modality;
pub use store::{EmbeddingRecord, EmbeddingStore};
