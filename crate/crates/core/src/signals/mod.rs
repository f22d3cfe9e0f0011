//! Desired-velocity inputs: recordings, synthetic subjects and the
//! smoothing / detection / normalization pipeline that turns trials into a
//! mean velocity profile on the controller grid.

mod detection;
mod normalize;
mod pipeline;
mod recording;
mod smoothing;
mod synthetic;

pub use detection::{
    crop_window, detect_saccade, detect_saccade_2d, SaccadeSegment, DETECTION_FRACTION,
};
pub use normalize::{
    build_desired, normalize_average, DesiredSignal, NormalizedMean, SegmentTrace, DEFAULT_BINS,
};
pub use pipeline::{
    condition_desired, process_condition, process_trial, ConditionSummary, PipelineConfig,
};
pub use recording::{read_recording, read_recording_from, write_recording, write_recording_to};
pub use smoothing::{smooth_differentiate, PolynomialFit, SMOOTHING_DEGREE};
pub use synthetic::{
    generate_synthetic_subject, main_sequence_duration, minimum_jerk_position,
    minimum_jerk_velocity, standard_targets, Variability,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A saccade target: eccentricity and direction measured counter-clockwise
/// from rightward horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub amplitude_deg: f64,
    pub direction_deg: f64,
}

impl Target {
    pub fn new(amplitude_deg: f64, direction_deg: f64) -> Self {
        Self {
            amplitude_deg,
            direction_deg,
        }
    }

    /// Horizontal and vertical components of the target displacement.
    pub fn components(&self) -> [f64; 2] {
        let rad = self.direction_deg.to_radians();
        [
            self.amplitude_deg * rad.cos(),
            self.amplitude_deg * rad.sin(),
        ]
    }

    /// Short label such as `12deg@180`.
    pub fn label(&self) -> String {
        format!("{}deg@{}", self.amplitude_deg, self.direction_deg)
    }
}

/// One trial: timestamps and horizontal/vertical gaze positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: u64,
    pub time: Vec<f64>,
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
    /// Target of the trial when known (synthetic data, or after [`RawRecording::assign_targets`]).
    pub target: Option<Target>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Net displacement from the first to the last sample.
    pub fn net_displacement(&self) -> [f64; 2] {
        match (
            self.horizontal.first(),
            self.horizontal.last(),
            self.vertical.first(),
            self.vertical.last(),
        ) {
            (Some(h0), Some(h1), Some(v0), Some(v1)) => [h1 - h0, v1 - v0],
            _ => [0.0, 0.0],
        }
    }
}

/// A subject's recorded (or synthesized) trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sample_rate: f64,
    pub subject: String,
    pub trials: Vec<Trial>,
}

impl RawRecording {
    /// Checks the recording invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Contract(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.trials.is_empty() {
            return Err(Error::Contract("recording has no trials".into()));
        }
        for trial in &self.trials {
            let n = trial.time.len();
            if n == 0 || trial.horizontal.len() != n || trial.vertical.len() != n {
                return Err(Error::Ingest {
                    location: format!("trial {}", trial.id),
                    reason: "missing samples".into(),
                });
            }
            if let Some(k) = trial.time.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(Error::Ingest {
                    location: format!("trial {} sample {}", trial.id, k + 1),
                    reason: "timestamps not strictly increasing".into(),
                });
            }
        }
        Ok(())
    }

    /// Trials recorded for `target`.
    pub fn trials_for(&self, target: &Target) -> Vec<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.target.as_ref() == Some(target))
            .collect()
    }

    /// Labels every trial with the nearest of `targets` by net displacement.
    pub fn assign_targets(&mut self, targets: &[Target]) -> Result<()> {
        if targets.is_empty() {
            return Err(Error::Contract("no targets to assign".into()));
        }
        for trial in &mut self.trials {
            let [dh, dv] = trial.net_displacement();
            let nearest = targets
                .iter()
                .min_by(|a, b| {
                    let da = dist(a.components(), [dh, dv]);
                    let db = dist(b.components(), [dh, dv]);
                    da.total_cmp(&db)
                })
                .copied();
            trial.target = nearest;
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
