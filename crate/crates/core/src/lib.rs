//! Blind, real-time Quality-of-Experience assessment for HTTP adaptive
//! streaming.
//!
//! The engine scores every playback window of a streaming session from the
//! decoded frames of its segments and the session's QoS events. The pipeline
//! has three stages:
//!
//! 1. [`sampler`] picks a small, end-weighted subset of frames per segment.
//! 2. [`content`] and [`features`] turn sampled frames and QoS metadata into a
//!    fixed 36-entry feature vector for the five most recent segments.
//! 3. [`svr`] regresses the feature vector into a score.
//!
//! [`eval`] holds the correlation metrics, the content-disjoint split
//! protocol and a procedural dataset generator; [`pipeline`] stitches the
//! stages into the per-segment scorer used by the `has-qoe` binary.

pub mod content;
pub mod error;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod sampler;
pub mod session;
pub mod svr;
pub mod tensor;

pub use error::{Error, FrameError, Result};
