//! Threshold-based saccade detection on a velocity trace.

use serde::Serialize;

use crate::error::{Error, Result};

/// Onset and offset are placed where speed drops to this fraction of the peak.
pub const DETECTION_FRACTION: f64 = 0.10;

/// A detected saccade. Indices refer to the trace passed to the detector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaccadeSegment {
    pub onset: usize,
    pub peak_index: usize,
    pub offset: usize,
    pub peak_velocity: f64,
    pub amplitude: f64,
    pub duration: f64,
}

/// `(onset, peak, offset)` of the supra-threshold excursion around the speed
/// peak. Onset is the last sample before the peak at or below threshold,
/// offset the first such sample after it; both searches start at the peak.
fn bracket(speed: &[f64]) -> Result<(usize, usize, usize)> {
    if speed.iter().any(|s| !s.is_finite()) {
        return Err(Error::Analysis(
            "velocity trace contains non-finite samples".into(),
        ));
    }
    let (peak, &top) = speed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Analysis("empty velocity trace".into()))?;
    if !(top > 0.0) {
        return Err(Error::Analysis("velocity trace has no movement".into()));
    }
    let thr = DETECTION_FRACTION * top;
    let onset = (0..peak).rev().find(|&k| speed[k] <= thr).ok_or_else(|| {
        Error::Analysis("speed never falls below threshold before the peak".into())
    })?;
    let offset = (peak + 1..speed.len())
        .find(|&k| speed[k] <= thr)
        .ok_or_else(|| {
            Error::Analysis("speed never falls below threshold after the peak".into())
        })?;
    Ok((onset, peak, offset))
}

/// Detects the saccade in a one-axis trace sampled every `dt` seconds.
pub fn detect_saccade(velocity: &[f64], displacement: &[f64], dt: f64) -> Result<SaccadeSegment> {
    if velocity.len() != displacement.len() {
        return Err(Error::Contract(
            "velocity and displacement lengths differ".into(),
        ));
    }
    let speed: Vec<f64> = velocity.iter().map(|v| v.abs()).collect();
    let (onset, peak, offset) = bracket(&speed)?;
    Ok(SaccadeSegment {
        onset,
        peak_index: peak,
        offset,
        peak_velocity: speed[peak],
        amplitude: (displacement[offset] - displacement[onset]).abs(),
        duration: (offset - onset) as f64 * dt,
    })
}

/// Detects the saccade of a two-axis trace on the vectorial speed.
pub fn detect_saccade_2d(
    velocity: [&[f64]; 2],
    displacement: [&[f64]; 2],
    dt: f64,
) -> Result<SaccadeSegment> {
    let n = velocity[0].len();
    if velocity[1].len() != n || displacement[0].len() != n || displacement[1].len() != n {
        return Err(Error::Contract("axis traces differ in length".into()));
    }
    let speed: Vec<f64> = (0..n)
        .map(|k| velocity[0][k].hypot(velocity[1][k]))
        .collect();
    let (onset, peak, offset) = bracket(&speed)?;
    let dh = displacement[0][offset] - displacement[0][onset];
    let dv = displacement[1][offset] - displacement[1][onset];
    Ok(SaccadeSegment {
        onset,
        peak_index: peak,
        offset,
        peak_velocity: speed[peak],
        amplitude: dh.hypot(dv),
        duration: (offset - onset) as f64 * dt,
    })
}

/// Window around the speed peak used for smoothing: the run of samples above
/// `fraction` of the peak, widened on each side by `extension` of its length
/// plus one sample, clamped to the trace.
pub fn crop_window(speed: &[f64], fraction: f64, extension: f64) -> Result<(usize, usize)> {
    let (peak, &top) = speed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Analysis("empty speed trace".into()))?;
    if !(top > 0.0) {
        return Err(Error::Analysis("speed trace has no movement".into()));
    }
    let thr = fraction * top;
    let mut lo = peak;
    while lo > 0 && speed[lo - 1] > thr {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < speed.len() && speed[hi + 1] > thr {
        hi += 1;
    }
    let ext = (extension * (hi - lo) as f64).ceil() as usize + 1;
    Ok((lo.saturating_sub(ext), (hi + ext).min(speed.len() - 1)))
}
