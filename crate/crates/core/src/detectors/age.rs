// SPDX-License-Identifier: Apache-2.0

//! Per-track age aggregation for minor-risk flags.

use serde::{Deserialize, Serialize};

use super::{DetectorError, SuggestedAction};

pub const DEFAULT_ADULT_THRESHOLD: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeVerdict {
    pub track_age: f64,
    pub minor_risk: bool,
    pub suggested_action: SuggestedAction,
}

/// Conservative minimum over per-frame estimates; flagged when strictly below
/// `adult_threshold`.
pub fn aggregate_track_age(estimates: &[f64], adult_threshold: f64) -> Result<AgeVerdict, DetectorError> {
    let track_age = estimates
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(DetectorError::NoEstimates)?;
    let minor_risk = track_age < adult_threshold;
    Ok(AgeVerdict {
        track_age,
        minor_risk,
        suggested_action: if minor_risk {
            SuggestedAction::BlurAndReview
        } else {
            SuggestedAction::None
        },
    })
}
