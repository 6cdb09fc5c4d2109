//! Narrations-as-queries toolkit.
//!
//! Turns timestamped narrations into temporal-window query supervision,
//! generates a synthetic natural-language-query corpus, trains a small
//! span-prediction localizer in two stages and evaluates it with
//! recall@k at temporal IoU thresholds.

pub mod annotations;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod features;
pub mod localizer;
pub mod metrics;
pub mod naqgen;
pub mod par;
pub mod seed;
pub mod synthworld;
pub mod text;
pub mod trainer;
pub mod trj;

pub use annotations::{Narration, NaqSample, NlqSample, QueryTemplate, Split, TemporalWindow, VideoTimeline};
pub use error::{Error, Result};
pub use par::Parallelism;
