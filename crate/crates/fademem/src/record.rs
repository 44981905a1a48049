//! Core domain types: virtual time, memory layers, and the memory record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;

/// Virtual time in days since the epoch of the run.
///
/// All engine dynamics are expressed in days; nothing reads the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(f64);

impl Timestamp {
    pub fn new(days: f64) -> Self {
        debug_assert!(days.is_finite(), "timestamps must be finite");
        Timestamp(days)
    }

    pub fn days(&self) -> f64 {
        self.0
    }

    /// Elapsed days from `earlier` to `self`, clamped at zero.
    pub fn since(&self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0).max(0.0)
    }

    pub fn total_cmp(&self, other: &Timestamp) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl From<f64> for Timestamp {
    fn from(days: f64) -> Self {
        Timestamp::new(days)
    }
}

/// Opaque record identifier, unique within one store.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct MemoryId(pub u64);

impl std::fmt::Display for MemoryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Memory layer: long-term (slow, sub-linear decay) or short-term (fast,
/// super-linear decay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Lml,
    Sml,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layer::Lml => write!(f, "LML"),
            Layer::Sml => write!(f, "SML"),
        }
    }
}

/// One stored memory.
///
/// Strength is anchored: `anchor_strength` is the strength observed at
/// `anchor_time`, and the current value is re-derived on demand by the decay
/// curve. Consolidation and suppression reset the anchor instead of mutating
/// a running value, which keeps decay well-defined while importance (and so
/// the decay rate) moves over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: MemoryId,
    pub content: String,
    pub embedding: Embedding,
    /// Strength in [0,1] at `anchor_time`.
    pub anchor_strength: f64,
    /// Time the strength anchor was last reset.
    pub anchor_time: Timestamp,
    pub created_at: Timestamp,
    /// Ascending access times; queries that return this record append here.
    pub access_times: Vec<Timestamp>,
    pub layer: Layer,
    /// Importance in [0,1] cached from the last evaluation.
    pub importance: f64,
    /// Multiplicative modifier on the base decay rate; 1.0 normally,
    /// `1/(1+ln n)` after fusing a cluster of n records.
    pub decay_scale: f64,
    /// Benchmark-only tag (`critical` | `contextual`); ignored by the engine.
    pub category_label: Option<String>,
}

/// Invariant violation raised when constructing or loading a record.
#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("anchor_strength {0} outside [0,1]")]
    AnchorStrengthOutOfRange(f64),
    #[error("decay_scale {0} outside (0,1]")]
    DecayScaleOutOfRange(f64),
    #[error("embedding norm {0} deviates from 1 by more than 1e-6")]
    EmbeddingNotUnit(f64),
    #[error("anchor_time precedes created_at")]
    AnchorBeforeCreation,
    #[error("access_times must be ascending and not precede created_at")]
    AccessTimesOutOfOrder,
}

impl MemoryRecord {
    /// Fresh record as produced by an observation: full strength, anchored at
    /// its creation time, no accesses yet.
    pub fn new(
        id: MemoryId,
        content: String,
        embedding: Embedding,
        created_at: Timestamp,
        layer: Layer,
        importance: f64,
    ) -> Self {
        MemoryRecord {
            id,
            content,
            embedding,
            anchor_strength: 1.0,
            anchor_time: created_at,
            created_at,
            access_times: Vec::new(),
            layer,
            importance,
            decay_scale: 1.0,
            category_label: None,
        }
    }

    /// Later of last access and creation; the reference point for dormancy.
    pub fn last_activity(&self) -> Timestamp {
        self.access_times.last().copied().unwrap_or(self.created_at)
    }

    /// Re-checks every structural invariant. Used on snapshot load and in
    /// tests; the engine maintains these by construction.
    pub fn check_invariants(&self) -> Result<(), RecordError> {
        if !(0.0..=1.0).contains(&self.anchor_strength) || !self.anchor_strength.is_finite() {
            return Err(RecordError::AnchorStrengthOutOfRange(self.anchor_strength));
        }
        if !(self.decay_scale > 0.0 && self.decay_scale <= 1.0) {
            return Err(RecordError::DecayScaleOutOfRange(self.decay_scale));
        }
        let norm = self.embedding.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(RecordError::EmbeddingNotUnit(norm));
        }
        if self.anchor_time < self.created_at {
            return Err(RecordError::AnchorBeforeCreation);
        }
        let mut prev = self.created_at;
        for &t in &self.access_times {
            if t < prev {
                return Err(RecordError::AccessTimesOutOfOrder);
            }
            prev = t;
        }
        Ok(())
    }
}
