//! Contextual ad lookup: campaigns, the scene-to-context table, and its
//! HTTP service.

mod campaign;
mod lut;
mod server;

pub use campaign::{CampaignQuery, CampaignRegistry, CampaignSpec, FieldError, RegisteredCampaign, Registration};
pub use lut::{build_context_lut, config_hash, ContextEntry, ContextLut, LutHeader};
pub use server::{router, serve, AppState, ContextQuery};
