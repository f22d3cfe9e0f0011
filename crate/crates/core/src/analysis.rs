//! Sweeps over amplitudes and directions, main-sequence extraction and
//! the cross-subject error tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiscreteSystem, Discretization, Geometry, PlantConfig};
use crate::error::{Error, Result};
use crate::fitting::{fit_two_stage, FitProblem, FitResult, FitStages, SearchRange};
use crate::signals::{
    condition_desired, generate_synthetic_subject, standard_targets, DesiredSignal, PipelineConfig,
    RawRecording, Target, Variability,
};

/// Amplitudes of the amplitude sweep, degrees.
pub const SWEEP_AMPLITUDES: [f64; 4] = [6.0, 8.5, 10.4, 12.0];
/// Directions of the direction sweep, degrees.
pub const SWEEP_DIRECTIONS: [f64; 5] = [0.0, 30.0, 45.0, 60.0, 90.0];
/// Condition the free parameters are fitted on.
pub const REFERENCE_TARGET: Target = Target {
    amplitude_deg: 12.0,
    direction_deg: 180.0,
};

/// Fixed model parameters shared by every condition of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: f64,
    pub alpha: f64,
    pub r_scale: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub dt: f64,
    pub discretization: Discretization,
}

impl ModelParams {
    pub fn standard(q: f64, alpha: f64) -> Self {
        let p = PlantConfig::<f64>::standard(Geometry::Horizontal);
        Self {
            q,
            alpha,
            r_scale: 1.0,
            tau1: p.tau1,
            tau2: p.tau2,
            dt: p.dt,
            discretization: Discretization::default(),
        }
    }

    pub fn with_fit(mut self, fit: &FitResult) -> Self {
        self.q = fit.q;
        self.alpha = fit.alpha;
        self
    }

    pub fn system(&self, geometry: Geometry) -> Result<DiscreteSystem<f64>> {
        let cfg = PlantConfig::new(self.tau1, self.tau2, self.dt, geometry)?;
        DiscreteSystem::from_config(&cfg, self.discretization)
    }
}

/// Pipeline outputs of one subject: a desired signal per target, or why there is none.
#[derive(Debug, Clone)]
pub struct SubjectConditions {
    pub subject: String,
    pub conditions: Vec<(Target, std::result::Result<DesiredSignal, String>)>,
}

impl SubjectConditions {
    pub fn get(&self, target: &Target) -> Option<&DesiredSignal> {
        self.conditions
            .iter()
            .find(|(t, _)| t == target)
            .and_then(|(_, d)| d.as_ref().ok())
    }
}

/// Runs the signal pipeline for every target of a recording.
pub fn prepare_subject(
    rec: &RawRecording,
    targets: &[Target],
    dt: f64,
    cfg: &PipelineConfig,
) -> SubjectConditions {
    let conditions = targets
        .par_iter()
        .map(|t| {
            (
                *t,
                condition_desired(rec, t, dt, cfg)
                    .map(|(d, _)| d)
                    .map_err(|e| e.to_string()),
            )
        })
        .collect();
    SubjectConditions {
        subject: rec.subject.clone(),
        conditions,
    }
}

/// Errors and main-sequence quantities of one simulated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub target: Target,
    pub displacement_error: f64,
    pub velocity_error: f64,
    pub data_amplitude: f64,
    pub data_peak_velocity: f64,
    pub model_amplitude: f64,
    pub model_peak_velocity: f64,
}

fn vector_norm(parts: impl Iterator<Item = f64>) -> f64 {
    parts.map(|v| v * v).sum::<f64>().sqrt()
}

/// Simulates one desired signal with fixed parameters and scores it.
pub fn evaluate_condition(
    desired: &DesiredSignal,
    params: &ModelParams,
    geometry: Geometry,
    target: Target,
) -> Result<ConditionResult> {
    let problem = FitProblem::new(params.system(geometry)?, desired.clone(), params.r_scale)?;
    let traj = problem.simulate(params.q, params.alpha)?;
    let (displacement_error, velocity_error) = problem.errors(params.q, params.alpha)?;
    let axes = problem.scored_axes();
    let n = desired.len();
    // the movement proper lies between the two zero pads
    let (first, last) = (1, n - 2);
    let axis_slot = |axis: usize| {
        if geometry == Geometry::Horizontal {
            0
        } else {
            axis
        }
    };
    let data_amplitude = vector_norm(axes.iter().map(|&a| {
        desired.reference_displacement[a][last] - desired.reference_displacement[a][first]
    }));
    let model_amplitude = vector_norm(axes.iter().map(|&a| {
        let d = traj.displacement(axis_slot(a));
        d[last] - d[first]
    }));
    let speed = |vel: &dyn Fn(usize, usize) -> f64| -> f64 {
        (0..n)
            .map(|k| vector_norm(axes.iter().map(|&a| vel(a, k))))
            .fold(0.0, f64::max)
    };
    let model_vel: Vec<Vec<f64>> = (0..traj.axes()).map(|i| traj.velocity(i)).collect();
    let data_peak_velocity = speed(&|a, k| desired.velocity[a][k]);
    let model_peak_velocity = speed(&|a, k| model_vel[axis_slot(a)][k]);
    Ok(ConditionResult {
        label: target.label(),
        target,
        displacement_error,
        velocity_error,
        data_amplitude,
        data_peak_velocity,
        model_amplitude,
        model_peak_velocity,
    })
}

/// Mean and sample standard deviation of one condition across subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub label: String,
    pub subjects: usize,
    pub displacement_mean: f64,
    pub displacement_std: f64,
    pub velocity_mean: f64,
    pub velocity_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSweep {
    pub subject: String,
    /// One entry per condition; `None` marks a condition without usable data.
    pub conditions: Vec<Option<ConditionResult>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Amplitude,
    Direction,
}

/// Per-subject errors for a set of conditions plus the across-subject summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub targets: Vec<Target>,
    pub per_subject: Vec<SubjectSweep>,
    pub summary: Vec<ConditionStats>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sweep(
    kind: SweepKind,
    subjects: &[SubjectConditions],
    params: &[ModelParams],
    targets: Vec<Target>,
    geometry: Geometry,
) -> Result<SweepReport> {
    if subjects.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} subjects but {} parameter sets",
            subjects.len(),
            params.len()
        )));
    }
    let per_subject: Vec<SubjectSweep> = subjects
        .par_iter()
        .zip(params)
        .map(|(subj, p)| {
            let conditions = targets
                .iter()
                .map(|t| {
                    subj.get(t)
                        .and_then(|d| evaluate_condition(d, p, geometry, *t).ok())
                })
                .collect();
            SubjectSweep {
                subject: subj.subject.clone(),
                conditions,
            }
        })
        .collect();
    let summary = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let present: Vec<&ConditionResult> = per_subject
                .iter()
                .filter_map(|s| s.conditions[i].as_ref())
                .collect();
            let (dm, ds) = mean_std(
                &present
                    .iter()
                    .map(|c| c.displacement_error)
                    .collect::<Vec<_>>(),
            );
            let (vm, vs) = mean_std(&present.iter().map(|c| c.velocity_error).collect::<Vec<_>>());
            ConditionStats {
                label: t.label(),
                subjects: present.len(),
                displacement_mean: dm,
                displacement_std: ds,
                velocity_mean: vm,
                velocity_std: vs,
            }
        })
        .collect();
    Ok(SweepReport {
        kind,
        targets,
        per_subject,
        summary,
    })
}

/// Horizontal-plant predictions for each amplitude at `direction_deg`.
pub fn amplitude_sweep(
    subjects: &[SubjectConditions],
    params: &[ModelParams],
    amplitudes: &[f64],
    direction_deg: f64,
) -> Result<SweepReport> {
    if direction_deg.to_radians().sin().abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "amplitude sweep runs on the horizontal plant, direction {direction_deg} is not horizontal"
        )));
    }
    let targets = amplitudes
        .iter()
        .map(|&a| Target::new(a, direction_deg))
        .collect();
    sweep(
        SweepKind::Amplitude,
        subjects,
        params,
        targets,
        Geometry::Horizontal,
    )
}

/// Oblique-plant predictions for each direction at `amplitude_deg`.
pub fn direction_sweep(
    subjects: &[SubjectConditions],
    params: &[ModelParams],
    directions: &[f64],
    amplitude_deg: f64,
) -> Result<SweepReport> {
    let targets = directions
        .iter()
        .map(|&d| Target::new(amplitude_deg, d))
        .collect();
    sweep(
        SweepKind::Direction,
        subjects,
        params,
        targets,
        Geometry::Oblique,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Data,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainSequencePoint {
    pub amplitude: f64,
    pub peak_velocity: f64,
    pub source: Source,
}

/// Data and model main-sequence points of every present condition.
pub fn main_sequence_points(conditions: &[Option<ConditionResult>]) -> Vec<MainSequencePoint> {
    conditions
        .iter()
        .flatten()
        .flat_map(|c| {
            [
                MainSequencePoint {
                    amplitude: c.data_amplitude,
                    peak_velocity: c.data_peak_velocity,
                    source: Source::Data,
                },
                MainSequencePoint {
                    amplitude: c.model_amplitude,
                    peak_velocity: c.model_peak_velocity,
                    source: Source::Model,
                },
            ]
        })
        .collect()
}

/// Per-amplitude comparison of a Data point with its Model partner, percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedError {
    pub data_amplitude: f64,
    pub amplitude_error: f64,
    pub peak_velocity_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainSequenceFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Residuals of the least-squares line, in input order.
    pub residuals: Vec<f64>,
    /// Data/Model pairs, matched in order of appearance.
    pub paired: Vec<PairedError>,
}

/// Least-squares line of peak velocity against amplitude.
pub fn main_sequence(points: &[MainSequencePoint]) -> Result<MainSequenceFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.amplitude).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Contract(format!(
            "main-sequence fit needs at least 3 distinct amplitudes, got {}",
            distinct.len()
        )));
    }
    if points
        .iter()
        .any(|p| !(p.amplitude > 0.0 && p.peak_velocity > 0.0))
    {
        return Err(Error::Contract(
            "main-sequence points must be positive".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.amplitude).sum::<f64>() / n;
    let my = points.iter().map(|p| p.peak_velocity).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.amplitude - mx).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.amplitude - mx) * (p.peak_velocity - my))
        .sum();
    let syy: f64 = points.iter().map(|p| (p.peak_velocity - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.peak_velocity - (intercept + slope * p.amplitude))
        .collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };

    let data: Vec<&MainSequencePoint> =
        points.iter().filter(|p| p.source == Source::Data).collect();
    let model: Vec<&MainSequencePoint> = points
        .iter()
        .filter(|p| p.source == Source::Model)
        .collect();
    let paired = data
        .iter()
        .zip(&model)
        .map(|(d, m)| PairedError {
            data_amplitude: d.amplitude,
            amplitude_error: 100.0 * (m.amplitude - d.amplitude).abs() / d.amplitude,
            peak_velocity_error: 100.0 * (m.peak_velocity - d.peak_velocity).abs()
                / d.peak_velocity,
        })
        .collect();
    Ok(MainSequenceFit {
        slope,
        intercept,
        r_squared,
        residuals,
        paired,
    })
}

/// Synthetic subjects with their own duration scale and seed.
pub fn synthetic_cohort(
    subjects: usize,
    trials_per_target: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<RawRecording>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<(u64, f64)> = (0..subjects)
        .map(|_| (master.random::<u64>(), master.random_range(0.9..1.1)))
        .collect();
    plans
        .par_iter()
        .enumerate()
        .map(|(i, &(s, scale))| {
            let var = Variability {
                duration_scale: scale,
                ..Variability::default()
            };
            generate_synthetic_subject(
                &standard_targets(),
                trials_per_target,
                &var,
                sample_rate,
                s,
                &format!("S{:02}", i + 1),
            )
        })
        .collect()
}

/// Pipeline plus two-stage fit on the reference condition of one subject.
pub fn fit_subject(
    conditions: &SubjectConditions,
    base: &ModelParams,
    q_range: &SearchRange,
    alpha_range: &SearchRange,
    stages: FitStages,
) -> Result<FitResult> {
    let desired = conditions.get(&REFERENCE_TARGET).ok_or_else(|| {
        Error::Analysis(format!(
            "subject {} has no usable {} trials",
            conditions.subject,
            REFERENCE_TARGET.label()
        ))
    })?;
    let problem = FitProblem::new(
        base.system(Geometry::Horizontal)?,
        desired.clone(),
        base.r_scale,
    )?;
    fit_two_stage(&problem, q_range, alpha_range, stages)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(a: f64, v: f64, source: Source) -> MainSequencePoint {
        MainSequencePoint {
            amplitude: a,
            peak_velocity: v,
            source,
        }
    }

    #[test]
    fn collinear_points_fit_exactly() {
        let pts: Vec<_> = [6.0, 8.5, 10.4, 12.0]
            .iter()
            .map(|&a| point(a, 100.0 + 25.0 * a, Source::Data))
            .collect();
        let fit = main_sequence(&pts).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.slope - 25.0).abs() < 1e-9 && (fit.intercept - 100.0).abs() < 1e-9);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn needs_three_amplitudes() {
        let pts = [
            point(6.0, 200.0, Source::Data),
            point(6.0, 210.0, Source::Model),
            point(12.0, 400.0, Source::Data),
        ];
        assert!(matches!(main_sequence(&pts), Err(Error::Contract(_))));
    }

    #[test]
    fn paired_errors() {
        let pts = [
            point(6.0, 200.0, Source::Data),
            point(6.06, 198.0, Source::Model),
            point(8.0, 260.0, Source::Data),
            point(8.0, 260.0, Source::Model),
            point(12.0, 400.0, Source::Data),
            point(11.88, 404.0, Source::Model),
        ];
        let fit = main_sequence(&pts).unwrap();
        assert_eq!(fit.paired.len(), 3);
        assert!((fit.paired[0].amplitude_error - 1.0).abs() < 1e-9);
        assert!((fit.paired[0].peak_velocity_error - 1.0).abs() < 1e-9);
        assert!((fit.paired[2].amplitude_error - 1.0).abs() < 1e-9);
    }

    #[test]
    fn statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn amplitude_sweep_rejects_vertical() {
        assert!(amplitude_sweep(&[], &[], &SWEEP_AMPLITUDES, 90.0).is_err());
        assert!(amplitude_sweep(
            &[],
            &[ModelParams::standard(1.0, 0.0)],
            &SWEEP_AMPLITUDES,
            0.0
        )
        .is_err());
    }

    #[test]
    fn cohort_is_seeded() {
        let a = synthetic_cohort(2, 2, 240.0, 5).unwrap();
        let b = synthetic_cohort(2, 2, 240.0, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].trials[0].horizontal, a[1].trials[0].horizontal);
        assert_eq!(a[1].subject, "S02");
    }

    #[test]
    fn missing_condition_is_marked_absent() {
        let rec = generate_synthetic_subject(
            &[
                Target::new(12.0, 0.0),
                Target::new(6.0, 0.0),
                Target::new(8.5, 0.0),
            ],
            3,
            &Variability::none(),
            240.0,
            1,
            "s",
        )
        .unwrap();
        let subj = prepare_subject(&rec, &standard_targets(), 0.004, &PipelineConfig::default());
        let report = amplitude_sweep(
            &[subj],
            &[ModelParams::standard(1e6, 0.0)],
            &SWEEP_AMPLITUDES,
            0.0,
        )
        .unwrap();
        let conds = &report.per_subject[0].conditions;
        assert!(conds[0].is_some() && conds[1].is_some() && conds[3].is_some());
        assert!(conds[2].is_none());
        assert_eq!(report.summary[2].subjects, 0);
        let labels: Vec<&str> = report.summary.iter().map(|s| s.label.as_str()).collect();
        let mut unique = labels.clone();
        unique.dedup();
        assert_eq!(labels, unique);
    }

    #[test]
    fn reference_condition_reproduces_fit_errors() {
        let rec = generate_synthetic_subject(
            &standard_targets(),
            4,
            &Variability::default(),
            240.0,
            8,
            "s",
        )
        .unwrap();
        let subj = prepare_subject(&rec, &standard_targets(), 0.004, &PipelineConfig::default());
        let base = ModelParams::standard(0.0, 0.0);
        let fit = fit_subject(
            &subj,
            &base,
            &SearchRange::default_q(),
            &SearchRange::default_alpha(),
            FitStages::Both,
        )
        .unwrap();
        let params = [base.with_fit(&fit)];
        let report = amplitude_sweep(&[subj], &params, &[12.0], 180.0).unwrap();
        let c = report.per_subject[0].conditions[0].as_ref().unwrap();
        assert_eq!(c.velocity_error, fit.velocity_error);
        assert_eq!(c.displacement_error, fit.displacement_error);
    }
}
