//! Inference: run the network and extract peaks and a heart rate.

use super::config::TauConfig;
use super::net::{forward, TimeModuleTrace};
use super::weights::ModelWeights;
use crate::autodiff::Tape;
use crate::error::Result;
use crate::labeling::{peak_search, peak_search_hard, DistanceLabels, PeakSet};
use crate::signal::{peak_rate_bpm, PpgSegment};
use crate::tensor::Tensor;

/// Threshold on hard-label predictions (trained toward {0, 1}).
pub const HARD_DETECT_THRESHOLD: f64 = 0.5;

/// Result of detecting peaks on one segment.
#[derive(Debug, Clone)]
pub struct Detection {
    pub peaks: PeakSet,
    /// `None` when fewer than two peaks were found, so no rate exists.
    pub hr_bpm: Option<f64>,
    /// Raw distance-label prediction (full resolution).
    pub prediction: Tensor,
    pub trace: Option<TimeModuleTrace>,
}

/// Runs the model on a segment and searches the prediction for peaks.
/// Deterministic: equal inputs give equal outputs.
pub fn detect(segment: &PpgSegment, cfg: &TauConfig, weights: &ModelWeights) -> Result<Detection> {
    segment.validate()?;
    let mut tape = Tape::new();
    let pass = forward(&mut tape, cfg, weights, &segment.samples)?;
    let n = segment.len();
    let prediction = Tensor::from_vec(tape.value(pass.prediction).data().to_vec());

    let peaks = if cfg.uses_distance_labels() {
        let labels = DistanceLabels {
            values: prediction.clone(),
            native_n: n,
            full_n: n,
        };
        peak_search(&labels, cfg.threshold)
    } else {
        peak_search_hard(&prediction, HARD_DETECT_THRESHOLD)
    };
    let hr_bpm = peak_rate_bpm(&peaks, segment.fs).ok();
    Ok(Detection {
        peaks,
        hr_bpm,
        prediction,
        trace: pass.trace,
    })
}
