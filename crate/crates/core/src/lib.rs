//! Scoring and reward engine for structured answers on video-anomaly tasks.
//!
//! The crate covers the whole path from a raw model response to numbers:
//! tag extraction and JSON recovery ([`answers`]), a leveled taxonomy with
//! distance queries ([`taxonomy`]), text embeddings ([`embed`]), optimal
//! one-to-one matching ([`assign`]), evaluation metrics ([`metrics`]),
//! training rewards ([`rewards`]) and a tabular GRPO simulator ([`grposim`]).
//! Annotation files and sample construction live in [`datamodel`].

pub mod answers;
pub mod assign;
pub mod datamodel;
pub mod embed;
pub mod grposim;
pub mod metrics;
pub mod rewards;
pub mod taxonomy;

pub use answers::{AnswerList, AnswerRecord, AnswerValue, TaskId, TaskSpec};
pub use embed::{EmbeddingProvider, EmbeddingVector};
pub use metrics::{GtRecord, MetricConfig, ScoreBundle};
pub use rewards::{RewardBundle, RewardConfig};
pub use taxonomy::Hierarchy;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
