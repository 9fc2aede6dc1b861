// SPDX-License-Identifier: Apache-2.0

//! Governance-first pre-annotation pipeline for long-form video.
//!
//! Stages, in data-flow order:
//!
//! - [`ingest`]: content-addressed asset store and the session ledger
//! - [`projection`]: dual-fisheye → ERP dewarp and rectilinear views
//! - [`segmenter`]: overlapping clip windows and clip descriptors
//! - [`detectors`]: the uniform evidence contract and reference detectors
//! - [`fusion`]: evidence → prioritized timeline plus auto-skip spans
//! - [`review`]: review-by-exception state machine with a hash-chained audit log
//! - [`export`]: redaction rendering and the governance-filtered deliverable
//! - [`metrics`]: review-time reduction, FP burden, bootstrap CIs, savings model

pub mod canonical;
pub mod clock;
pub mod detectors;
pub mod export;
pub mod fusion;
pub mod ingest;
pub mod intervals;
pub mod io;
pub mod media;
pub mod metrics;
pub mod projection;
pub mod review;
pub mod segmenter;
