//! Trial pipeline: crop around the movement, polynomial smoothing, dense
//! evaluation, detection, and averaging over a condition's trials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detection::{crop_window, detect_saccade_2d, SaccadeSegment};
use super::normalize::{
    build_desired, normalize_average, DesiredSignal, NormalizedMean, SegmentTrace, DEFAULT_BINS,
};
use super::smoothing::{PolynomialFit, SMOOTHING_DEGREE};
use super::{RawRecording, Target, Trial};
use crate::error::{Error, Result};

/// Tuning of the per-trial pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub degree: usize,
    /// Fraction of the raw peak speed that delimits the smoothing window.
    pub crop_fraction: f64,
    /// Relative widening of the smoothing window on each side.
    pub crop_extension: f64,
    /// Dense evaluation points per sample interval.
    pub upsample: usize,
    pub bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            degree: SMOOTHING_DEGREE,
            crop_fraction: 0.2,
            crop_extension: 0.1,
            upsample: 256,
            bins: DEFAULT_BINS,
        }
    }
}

fn raw_speed(trial: &Trial) -> Vec<f64> {
    let n = trial.len();
    let diff = |x: &[f64], k: usize| {
        let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
        (x[b] - x[a]) / (trial.time[b] - trial.time[a])
    };
    (0..n)
        .map(|k| diff(&trial.horizontal, k).hypot(diff(&trial.vertical, k)))
        .collect()
}

/// Smooths one trial and cuts out its saccade.
pub fn process_trial(
    trial: &Trial,
    cfg: &PipelineConfig,
) -> Result<(SaccadeSegment, SegmentTrace)> {
    let n = trial.len();
    let min_len = cfg.degree + 2;
    if n < min_len {
        return Err(Error::Analysis(format!(
            "trial {} has only {n} samples",
            trial.id
        )));
    }
    if cfg.upsample == 0 {
        return Err(Error::Contract("upsampling factor must be positive".into()));
    }
    let (mut lo, mut hi) = crop_window(&raw_speed(trial), cfg.crop_fraction, cfg.crop_extension)?;
    while hi - lo + 1 < min_len {
        lo = lo.saturating_sub(1);
        hi = (hi + 1).min(n - 1);
    }
    let t = &trial.time[lo..=hi];
    let fits = [
        PolynomialFit::fit(t, &trial.horizontal[lo..=hi], cfg.degree)?,
        PolynomialFit::fit(t, &trial.vertical[lo..=hi], cfg.degree)?,
    ];
    let dense = (hi - lo) * cfg.upsample;
    let step = (t[t.len() - 1] - t[0]) / dense as f64;
    let grid: Vec<f64> = (0..=dense).map(|i| t[0] + i as f64 * step).collect();
    let pos: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| grid.iter().map(|&g| f.value(g)).collect())
        .collect();
    let vel: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| grid.iter().map(|&g| f.derivative(g)).collect())
        .collect();
    let seg = detect_saccade_2d([&vel[0], &vel[1]], [&pos[0], &pos[1]], step)
        .map_err(|e| Error::Analysis(format!("trial {}: {e}", trial.id)))?;
    let cut = |c: &Vec<f64>| c[seg.onset..=seg.offset].to_vec();
    let trace = SegmentTrace {
        dt: step,
        displacement: pos.iter().map(cut).collect(),
        velocity: vel.iter().map(cut).collect(),
    };
    Ok((seg, trace))
}

/// Outcome of running the pipeline over one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub mean: NormalizedMean,
    pub segments: Vec<SaccadeSegment>,
    /// Trial ids whose saccade could not be detected.
    pub rejected: Vec<u64>,
}

impl ConditionSummary {
    pub fn mean_amplitude(&self) -> f64 {
        self.segments.iter().map(|s| s.amplitude).sum::<f64>() / self.segments.len() as f64
    }

    pub fn mean_peak_velocity(&self) -> f64 {
        self.segments.iter().map(|s| s.peak_velocity).sum::<f64>() / self.segments.len() as f64
    }
}

/// Processes every trial and averages the accepted ones.
pub fn process_condition(trials: &[&Trial], cfg: &PipelineConfig) -> Result<ConditionSummary> {
    let results: Vec<(u64, Result<(SaccadeSegment, SegmentTrace)>)> = trials
        .par_iter()
        .map(|t| (t.id, process_trial(t, cfg)))
        .collect();
    let mut segments = Vec::new();
    let mut traces = Vec::new();
    let mut rejected = Vec::new();
    for (id, r) in results {
        match r {
            Ok((s, t)) => {
                segments.push(s);
                traces.push(t);
            }
            Err(_) => rejected.push(id),
        }
    }
    if traces.len() < 2 {
        return Err(Error::Analysis(format!(
            "only {} of {} trials yielded a saccade",
            traces.len(),
            trials.len()
        )));
    }
    Ok(ConditionSummary {
        mean: normalize_average(&traces, cfg.bins)?,
        segments,
        rejected,
    })
}

/// Desired signal on the grid `dt` for one target of a recording.
pub fn condition_desired(
    rec: &RawRecording,
    target: &Target,
    dt: f64,
    cfg: &PipelineConfig,
) -> Result<(DesiredSignal, ConditionSummary)> {
    let trials = rec.trials_for(target);
    if trials.is_empty() {
        return Err(Error::Analysis(format!(
            "no trials for target {}",
            target.label()
        )));
    }
    let summary = process_condition(&trials, cfg)?;
    let desired = build_desired(&summary.mean, dt, target.direction_deg)?;
    Ok((desired, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{
        generate_synthetic_subject, main_sequence_duration, minimum_jerk_velocity, Variability,
    };

    fn rms_rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        100.0 * (num / den).sqrt()
    }

    /// Template velocity between its own 10% crossings, on `bins` points.
    fn clipped_template(a: f64, bins: usize) -> Vec<f64> {
        let t = main_sequence_duration(a);
        let peak = 1.875 * a / t;
        let fine: Vec<f64> = (0..=100_000).map(|k| k as f64 * t / 1e5).collect();
        let inside: Vec<f64> = fine
            .iter()
            .copied()
            .filter(|&s| minimum_jerk_velocity(s, a, t) > 0.1 * peak)
            .collect();
        let (ta, tb) = (inside[0], inside[inside.len() - 1]);
        (0..bins)
            .map(|i| minimum_jerk_velocity(ta + (tb - ta) * i as f64 / (bins - 1) as f64, a, t))
            .collect()
    }

    #[test]
    fn noiseless_condition_recovers_template() {
        let cfg = PipelineConfig::default();
        for a in [6.0, 12.0] {
            let target = Target::new(a, 0.0);
            let rec = generate_synthetic_subject(&[target], 3, &Variability::none(), 240.0, 1, "s")
                .unwrap();
            let summary = process_condition(&rec.trials_for(&target), &cfg).unwrap();
            let err = rms_rel(&summary.mean.velocity[0], &clipped_template(a, cfg.bins));
            assert!(err < 1.0, "{a} deg: {err}%");
            assert!(summary.rejected.is_empty());
        }
    }

    #[test]
    fn oblique_trial_splits_into_axes() {
        let target = Target::new(12.0, 45.0);
        let rec =
            generate_synthetic_subject(&[target], 2, &Variability::none(), 240.0, 1, "s").unwrap();
        let (seg, trace) = process_trial(&rec.trials[0], &PipelineConfig::default()).unwrap();
        let k = seg.peak_index - seg.onset;
        assert!((trace.velocity[0][k] - trace.velocity[1][k]).abs() < 1e-6 * trace.velocity[0][k]);
        assert!(seg.amplitude > 0.97 * 12.0);
    }

    #[test]
    fn flat_trials_are_rejected() {
        let trial = Trial {
            id: 3,
            time: (0..40).map(|k| k as f64 / 240.0).collect(),
            horizontal: vec![1.0; 40],
            vertical: vec![0.0; 40],
            target: None,
        };
        assert!(process_trial(&trial, &PipelineConfig::default()).is_err());
        assert!(process_condition(&[&trial, &trial], &PipelineConfig::default()).is_err());
    }

    #[test]
    fn missing_condition() {
        let rec = generate_synthetic_subject(
            &[Target::new(6.0, 0.0)],
            2,
            &Variability::none(),
            240.0,
            1,
            "s",
        )
        .unwrap();
        assert!(condition_desired(
            &rec,
            &Target::new(12.0, 0.0),
            0.004,
            &PipelineConfig::default()
        )
        .is_err());
        let (d, _) = condition_desired(
            &rec,
            &Target::new(6.0, 0.0),
            0.004,
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!((d.nominal_amplitude - 6.0).abs() < 0.6);
    }
}
