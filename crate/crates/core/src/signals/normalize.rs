//! Time normalization, trial averaging and resampling onto the controller grid.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;

/// One detected saccade cut from onset to offset (inclusive), per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTrace {
    pub dt: f64,
    pub displacement: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
}

impl SegmentTrace {
    pub fn len(&self) -> usize {
        self.velocity.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt
    }
}

/// Trial-averaged profiles on normalized time `s_i = i / (bins − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedMean {
    pub bins: usize,
    pub displacement: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub mean_duration: f64,
    pub trials: usize,
}

/// Linear interpolation of samples spread evenly over `[0, 1]`.
fn interp_unit(samples: &[f64], s: f64) -> f64 {
    let last = samples.len() - 1;
    let pos = s.clamp(0.0, 1.0) * last as f64;
    let i = (pos.floor() as usize).min(last);
    if i == last {
        return samples[last];
    }
    let frac = pos - i as f64;
    samples[i] + frac * (samples[i + 1] - samples[i])
}

/// Resamples every trace onto `bins` equal fractions of its own duration and
/// averages per bin. Displacements are taken relative to each trace's onset.
pub fn normalize_average(traces: &[SegmentTrace], bins: usize) -> Result<NormalizedMean> {
    if traces.len() < 2 {
        return Err(Error::Contract(format!(
            "averaging needs at least 2 trials, got {}",
            traces.len()
        )));
    }
    if bins < 10 {
        return Err(Error::Contract(format!(
            "need at least 10 bins, got {bins}"
        )));
    }
    let axes = traces[0].velocity.len();
    for (i, tr) in traces.iter().enumerate() {
        if tr.velocity.len() != axes || tr.displacement.len() != axes || axes == 0 {
            return Err(Error::Contract(format!(
                "segment {i} has inconsistent axes"
            )));
        }
        let n = tr.len();
        if n < 2
            || tr
                .velocity
                .iter()
                .chain(&tr.displacement)
                .any(|c| c.len() != n)
        {
            return Err(Error::Contract(format!("segment {i} is empty or ragged")));
        }
        if !(tr.dt > 0.0) {
            return Err(Error::Contract(format!("segment {i} has non-positive dt")));
        }
    }
    let count = traces.len() as f64;
    let grid: Vec<f64> = (0..bins).map(|i| i as f64 / (bins - 1) as f64).collect();
    let mean_of = |pick: &dyn Fn(&SegmentTrace, f64) -> f64| -> Vec<f64> {
        grid.iter()
            .map(|&s| traces.iter().map(|tr| pick(tr, s)).sum::<f64>() / count)
            .collect()
    };
    let mut displacement = Vec::with_capacity(axes);
    let mut velocity = Vec::with_capacity(axes);
    for a in 0..axes {
        displacement.push(mean_of(&|tr, s| {
            interp_unit(&tr.displacement[a], s) - tr.displacement[a][0]
        }));
        velocity.push(mean_of(&|tr, s| interp_unit(&tr.velocity[a], s)));
    }
    Ok(NormalizedMean {
        bins,
        displacement,
        velocity,
        mean_duration: traces.iter().map(SegmentTrace::duration).sum::<f64>() / count,
        trials: traces.len(),
    })
}

/// Desired velocity (and reference displacement) on the controller grid.
///
/// Samples are `t_j = j·dt` over the mean duration with one zero-velocity pad
/// at each end, so index 0 and the last index are pads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesiredSignal {
    pub dt: f64,
    pub velocity: Vec<Vec<f64>>,
    /// Running trapezoidal integral of `velocity`, starting at the reference start.
    pub displacement: Vec<Vec<f64>>,
    /// Mean data displacement resampled onto the same grid.
    pub reference_displacement: Vec<Vec<f64>>,
    /// Signed trapezoidal integral of `velocity` per axis.
    pub axis_amplitudes: Vec<f64>,
    /// Magnitude of `axis_amplitudes`.
    pub nominal_amplitude: f64,
    pub direction_deg: f64,
}

impl DesiredSignal {
    /// Number of controller states `N`.
    pub fn len(&self) -> usize {
        self.velocity.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> usize {
        self.velocity.len()
    }

    /// Desired states `[θ^d, θ̇^d]` for the listed axes, stacked per step.
    pub fn state_sequence(&self, axes: &[usize]) -> Vec<DVector<f64>> {
        (0..self.len())
            .map(|k| {
                DVector::from_iterator(
                    2 * axes.len(),
                    axes.iter()
                        .flat_map(|&a| [self.displacement[a][k], self.velocity[a][k]]),
                )
            })
            .collect()
    }

    /// Initial plant state: at the reference start, at rest.
    pub fn initial_state(&self, axes: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            2 * axes.len(),
            axes.iter()
                .flat_map(|&a| [self.reference_displacement[a][0], 0.0]),
        )
    }
}

fn trapezoid(v: &[f64], dt: f64) -> f64 {
    v.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
}

/// Maps a normalized mean profile back to seconds on the grid `dt`.
pub fn build_desired(mean: &NormalizedMean, dt: f64, direction_deg: f64) -> Result<DesiredSignal> {
    let duration = mean.mean_duration;
    if !(duration > 0.0) {
        return Err(Error::Contract(format!(
            "mean duration must be positive, got {duration}"
        )));
    }
    if !(dt > 0.0) || dt > duration {
        return Err(Error::Contract(format!(
            "grid step {dt} s must lie in (0, {duration}] s"
        )));
    }
    let last = (duration / dt + 1e-9).floor() as usize;
    let s: Vec<f64> = (0..=last)
        .map(|j| (j as f64 * dt / duration).min(1.0))
        .collect();

    let mut velocity = Vec::new();
    let mut displacement = Vec::new();
    let mut reference = Vec::new();
    let mut axis_amplitudes = Vec::new();
    for (vel, disp) in mean.velocity.iter().zip(&mean.displacement) {
        let mut v = Vec::with_capacity(last + 3);
        v.push(0.0);
        v.extend(s.iter().map(|&sj| interp_unit(vel, sj)));
        v.push(0.0);

        let mut r = Vec::with_capacity(last + 3);
        r.push(disp[0]);
        r.extend(s.iter().map(|&sj| interp_unit(disp, sj)));
        r.push(*r.last().expect("non-empty"));

        let mut x = Vec::with_capacity(v.len());
        x.push(r[0]);
        for w in v.windows(2) {
            let prev = *x.last().expect("non-empty");
            x.push(prev + 0.5 * (w[0] + w[1]) * dt);
        }
        axis_amplitudes.push(trapezoid(&v, dt));
        velocity.push(v);
        displacement.push(x);
        reference.push(r);
    }
    let nominal_amplitude = axis_amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(DesiredSignal {
        dt,
        velocity,
        displacement,
        reference_displacement: reference,
        axis_amplitudes,
        nominal_amplitude,
        direction_deg,
    })
}
