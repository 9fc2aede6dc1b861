// SPDX-License-Identifier: Apache-2.0

//! Orchestration around `gaze-core`: stage runner with resumable status,
//! review HTTP service, headless reviewer, artifact validation and a
//! synthetic session generator.

use thiserror::Error;

pub mod autoreview;
pub mod config;
pub mod layout;
pub mod orchestrator;
pub mod report;
pub mod server;
pub mod stages;
pub mod synth;
pub mod validate;

pub use config::PipelineConfig;
pub use orchestrator::{run_pipeline, Stage, StageRun, StageState, StageStatus};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("stage {stage} failed: {cause}")]
    StageFailed { stage: String, cause: String },
}
