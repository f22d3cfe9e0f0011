//! Synthetic subjects built from minimum-jerk saccades.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{RawRecording, Target, Trial};
use crate::error::{Error, Result};

/// `A (10τ³ − 15τ⁴ + 6τ⁵)` with `τ = t/T` clamped to `[0, 1]`.
pub fn minimum_jerk_position(t: f64, amplitude: f64, duration: f64) -> f64 {
    let tau = (t / duration).clamp(0.0, 1.0);
    amplitude * tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

/// `A (30τ² − 60τ³ + 30τ⁴) / T`, zero outside the movement.
pub fn minimum_jerk_velocity(t: f64, amplitude: f64, duration: f64) -> f64 {
    let tau = t / duration;
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    amplitude * 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / duration
}

/// Linear main-sequence duration rule, seconds for an amplitude in degrees.
pub fn main_sequence_duration(amplitude_deg: f64) -> f64 {
    0.030 + 0.0025 * amplitude_deg
}

/// 9 directions at 12° plus 6°, 8.5° and 10.4° at 0° and 90°.
pub fn standard_targets() -> Vec<Target> {
    let mut out: Vec<Target> = [0.0, 30.0, 45.0, 60.0, 90.0, 120.0, 135.0, 150.0, 180.0]
        .iter()
        .map(|&d| Target::new(12.0, d))
        .collect();
    for a in [6.0, 8.5, 10.4] {
        for d in [0.0, 90.0] {
            out.push(Target::new(a, d));
        }
    }
    out
}

/// Trial-to-trial variability of a synthetic subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variability {
    /// Relative standard deviation of the executed amplitude.
    pub amplitude_sd: f64,
    /// Relative standard deviation of the duration.
    pub duration_sd: f64,
    /// Subject-wide multiplier on the main-sequence duration.
    pub duration_scale: f64,
    /// Saccade latency drawn uniformly from this range, seconds.
    pub latency: (f64, f64),
    /// Standard deviation of additive position noise, degrees.
    pub position_noise_deg: f64,
    /// Length of each trial, seconds.
    pub window: f64,
}

impl Default for Variability {
    fn default() -> Self {
        Self {
            amplitude_sd: 0.03,
            duration_sd: 0.05,
            duration_scale: 1.0,
            latency: (0.08, 0.12),
            position_noise_deg: 0.03,
            window: 0.3,
        }
    }
}

impl Variability {
    /// No jitter and no noise: every trial of a target is identical.
    pub fn none() -> Self {
        Self {
            amplitude_sd: 0.0,
            duration_sd: 0.0,
            duration_scale: 1.0,
            latency: (0.1, 0.1),
            position_noise_deg: 0.0,
            window: 0.3,
        }
    }
}

/// Generates `trials_per_target` minimum-jerk trials per target.
///
/// Trial `i` of target `j` draws from its own stream, so trials do not
/// depend on the order or number of other targets.
pub fn generate_synthetic_subject(
    targets: &[Target],
    trials_per_target: usize,
    var: &Variability,
    sample_rate: f64,
    seed: u64,
    subject: &str,
) -> Result<RawRecording> {
    if targets.iter().any(|t| !(t.amplitude_deg > 0.0)) {
        return Err(Error::Contract("target amplitudes must be positive".into()));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::Contract(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let (lat_lo, lat_hi) = var.latency;
    if !(lat_lo >= 0.0 && lat_hi >= lat_lo) {
        return Err(Error::Contract(
            "latency range must be ordered and non-negative".into(),
        ));
    }
    let samples = (var.window * sample_rate).ceil() as usize;
    let mut trials = Vec::with_capacity(targets.len() * trials_per_target);
    for (j, target) in targets.iter().enumerate() {
        let (c, s) = {
            let rad = target.direction_deg.to_radians();
            (rad.cos(), rad.sin())
        };
        for i in 0..trials_per_target {
            let id = (j * trials_per_target + i) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            let mut normal = || rng.sample::<f64, _>(StandardNormal);
            let amp = target.amplitude_deg * (1.0 + var.amplitude_sd * normal());
            let dur = main_sequence_duration(amp)
                * var.duration_scale
                * (1.0 + var.duration_sd * normal());
            let latency = if lat_hi > lat_lo {
                rng.random_range(lat_lo..lat_hi)
            } else {
                lat_lo
            };
            let mut time = Vec::with_capacity(samples);
            let mut horizontal = Vec::with_capacity(samples);
            let mut vertical = Vec::with_capacity(samples);
            for k in 0..samples {
                let t = k as f64 / sample_rate;
                let p = minimum_jerk_position(t - latency, amp, dur);
                time.push(t);
                horizontal
                    .push(c * p + var.position_noise_deg * rng.sample::<f64, _>(StandardNormal));
                vertical
                    .push(s * p + var.position_noise_deg * rng.sample::<f64, _>(StandardNormal));
            }
            trials.push(Trial {
                id,
                time,
                horizontal,
                vertical,
                target: Some(*target),
            });
        }
    }
    Ok(RawRecording {
        sample_rate,
        subject: subject.to_string(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_endpoints() {
        assert_eq!(minimum_jerk_position(-1.0, 12.0, 0.06), 0.0);
        assert_eq!(minimum_jerk_position(1.0, 12.0, 0.06), 12.0);
        assert!((minimum_jerk_position(0.03, 12.0, 0.06) - 6.0).abs() < 1e-12);
        assert!((minimum_jerk_velocity(0.03, 12.0, 0.06) - 1.875 * 12.0 / 0.06).abs() < 1e-9);
        assert_eq!(minimum_jerk_velocity(0.07, 12.0, 0.06), 0.0);
    }

    #[test]
    fn target_set() {
        let t = standard_targets();
        assert_eq!(t.len(), 15);
        assert_eq!(t.iter().filter(|x| x.amplitude_deg == 12.0).count(), 9);
        assert!(t.contains(&Target::new(10.4, 90.0)));
        assert!(t.contains(&Target::new(12.0, 180.0)));
    }

    #[test]
    fn no_variability_means_identical_trials() {
        let rec = generate_synthetic_subject(
            &[Target::new(12.0, 0.0)],
            4,
            &Variability::none(),
            240.0,
            3,
            "s",
        )
        .unwrap();
        assert_eq!(rec.trials.len(), 4);
        for tr in &rec.trials[1..] {
            assert_eq!(tr.horizontal, rec.trials[0].horizontal);
        }
        rec.validate().unwrap();
    }

    #[test]
    fn seeded_and_order_independent() {
        let var = Variability::default();
        let a = generate_synthetic_subject(&standard_targets(), 3, &var, 240.0, 9, "s").unwrap();
        let b = generate_synthetic_subject(&standard_targets(), 3, &var, 240.0, 9, "s").unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_subject(&standard_targets(), 3, &var, 240.0, 10, "s").unwrap();
        assert_ne!(a.trials[0].horizontal, c.trials[0].horizontal);
    }

    #[test]
    fn peak_velocity_grows_with_amplitude() {
        let peaks: Vec<f64> = [6.0, 8.5, 10.4, 12.0]
            .iter()
            .map(|&a| 1.875 * a / main_sequence_duration(a))
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let var = Variability::default();
        assert!(
            generate_synthetic_subject(&[Target::new(0.0, 0.0)], 1, &var, 240.0, 0, "s").is_err()
        );
        assert!(
            generate_synthetic_subject(&[Target::new(5.0, 0.0)], 1, &var, 0.0, 0, "s").is_err()
        );
    }
}
