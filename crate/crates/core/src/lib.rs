#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Two-stage multimodal trajectory prediction.
//!
//! A proposal network emits `M` trajectory proposals, confidences and
//! proposal features per agent; a refinement network revisits each proposal
//! with scene context pooled along the proposal's tube and with the features
//! of nearby agents' proposals, then re-scores all modes.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod metrics;
pub mod model;
pub mod proposer;
pub mod refiner;
pub mod scenario;
pub mod synthgen;
pub mod training;
pub mod views;

pub use error::{Error, Result};
pub use scenario::{
    from_agent_frame, normalize_angle, retarget, to_agent_frame, AgentKind, AgentTrack, MapElement, Pose2, Scenario,
    SceneVector, TrajState,
};
