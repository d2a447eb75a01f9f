//! Adaptive time-surface event-to-frame conversion and event-based
//! tracking-by-detection.
//!
//! The pipeline runs events through a two-channel [`Surface`] with linear
//! time decay, cuts frames when their non-zero grid entropy reaches a
//! calibrated interval, generates object proposals inside a search region and
//! follows each object with an IoU tracker.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bbox;
pub mod bench;
pub mod convert;
pub mod detect;
pub mod error;
pub mod eval;
pub mod event;
pub mod files;
pub mod nzge;
pub mod surface;
pub mod synth;
pub mod track;
mod ttable;

pub use bbox::BoundingBox;
pub use convert::{AdaptiveConfig, AdaptiveConverter, FixedWindowConverter, FrameCutter};
pub use detect::DetectorConfig;
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport};
pub use event::{Event, GroundTruth, GroundTruthTrack, Polarity, SensorGeometry, Timestamp};
pub use nzge::{CalibrationSet, ConfidenceInterval, GridSpec};
pub use surface::{AtslTdFrame, Surface};
pub use track::{PipelineConfig, TrackerConfig};
