//! FadeMem: a dual-layer agent memory engine with adaptive forgetting.
//!
//! Memories decay along layer-specific forgetting curves whose rates adapt
//! to importance; access consolidates strength with diminishing returns;
//! semantically overlapping memories are resolved through a four-way
//! relation taxonomy (coexist, suppress, absorb); and temporally clustered
//! near-duplicates fuse into consolidated records that decay slower. A
//! synthetic benchmark drives 30-day interaction traces through the store
//! on a virtual clock and reports retention, storage, and conflict metrics.

pub mod benchmark;
pub mod config;
pub mod conflict;
pub mod dynamics;
pub mod embedding;
pub mod fusion;
pub mod oracle;
pub mod record;
pub mod snapshot;
pub mod store;
pub mod text;

pub use config::{ConfigError, EngineConfig};
pub use conflict::{Relation, RelationVerdict, ResolutionOutcome};
pub use embedding::{cosine_similarity, Embedding, EmbeddingProvider, HashEmbedder};
pub use oracle::{MergeOracle, OracleError, RelationOracle, RuleOracle};
pub use record::{Layer, MemoryId, MemoryRecord, Timestamp};
pub use store::{MemoryStore, QueryHit, StoreError};
