//! Relative-RMS error metric and the two-stage estimation of `(q, α)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{backward_pass, CostSpec};
use crate::dynamics::{DiscreteSystem, Geometry};
use crate::error::{Error, Result};
use crate::signals::DesiredSignal;
use crate::simulation::{simulate_mean, Trajectory};

/// Objective variation below which a scan is reported as flat.
pub const FLAT_TOLERANCE: f64 = 1e-12;

const GOLDEN_ITERATIONS: usize = 80;

/// `100 · ‖ref − pred‖ / ‖ref‖`, in percent.
pub fn relative_rms_error(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::Contract(format!(
            "prediction has {} samples, reference {}",
            predicted.len(),
            reference.len()
        )));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if !(den > 0.0) {
        return Err(Error::Metric("reference has zero norm".into()));
    }
    let num: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (r - p) * (r - p))
        .sum();
    Ok(100.0 * (num / den).sqrt())
}

/// Root-mean-square of per-axis errors.
pub fn aggregate_axes(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Search interval and scan resolution for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRange {
    pub lo: f64,
    pub hi: f64,
    /// Number of logarithmically spaced scan points.
    pub points: usize,
}

impl SearchRange {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) || points < 3 {
            return Err(Error::Config(format!(
                "search range needs 0 < lo < hi and at least 3 points, got [{lo}, {hi}] with {points}"
            )));
        }
        Ok(Self { lo, hi, points })
    }

    pub fn default_q() -> Self {
        Self {
            lo: 1e2,
            hi: 1e10,
            points: 25,
        }
    }

    pub fn default_alpha() -> Self {
        Self {
            lo: 1e-4,
            hi: 1.0,
            points: 25,
        }
    }

    pub fn log_grid(&self) -> Vec<f64> {
        let (a, b) = (self.lo.log10(), self.hi.log10());
        (0..self.points)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (self.points - 1) as f64))
            .collect()
    }
}

/// What a one-parameter search looked at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub grid: Vec<f64>,
    pub objective: Vec<f64>,
    /// Interval handed to the golden-section refinement.
    pub bracket: (f64, f64),
    pub evaluations: usize,
    pub best: f64,
    pub best_objective: f64,
    pub flat: bool,
}

/// Which stages of the fit to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FitStages {
    QOnly,
    #[default]
    Both,
}

/// Outcome of the two-stage fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub q: f64,
    pub alpha: f64,
    pub velocity_error: f64,
    pub displacement_error: f64,
    pub q_search: SearchDiagnostics,
    pub alpha_search: Option<SearchDiagnostics>,
    pub warnings: Vec<String>,
}

/// A tracking problem on one desired signal: the plant, the axes it
/// drives, and the velocity the model is scored against.
#[derive(Debug, Clone)]
pub struct FitProblem {
    ds: DiscreteSystem<f64>,
    geometry: Geometry,
    desired: DesiredSignal,
    axes: Vec<usize>,
    reference: Vec<Vec<f64>>,
    scored: Vec<bool>,
    r_scale: f64,
}

impl FitProblem {
    /// Uses the horizontal plant on axis 0 or the oblique plant on both axes,
    /// depending on the geometry of `ds`. The reference is the desired velocity.
    pub fn new(ds: DiscreteSystem<f64>, desired: DesiredSignal, r_scale: f64) -> Result<Self> {
        let geometry = ds
            .geometry()
            .ok_or_else(|| Error::Contract("fitting needs a saccade plant".into()))?;
        let axes: Vec<usize> = match geometry {
            Geometry::Horizontal => vec![0],
            Geometry::Oblique => vec![0, 1],
        };
        if desired.axes() < axes.len() || desired.len() < 3 {
            return Err(Error::Contract(
                "desired signal lacks axes or samples".into(),
            ));
        }
        let reference: Vec<Vec<f64>> = axes.iter().map(|&a| desired.velocity[a].clone()).collect();
        let rad = desired.direction_deg.to_radians();
        let unit = [rad.cos(), rad.sin()];
        let scored = axes.iter().map(|&a| unit[a].abs() > 1e-6).collect();
        Ok(Self {
            ds,
            geometry,
            desired,
            axes,
            reference,
            scored,
            r_scale,
        })
    }

    /// Replaces the velocity the model is scored against (one sequence per axis).
    pub fn with_reference(mut self, reference: Vec<Vec<f64>>) -> Result<Self> {
        if reference.len() != self.axes.len()
            || reference.iter().any(|r| r.len() != self.desired.len())
        {
            return Err(Error::Contract(
                "reference must match the desired grid".into(),
            ));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn desired(&self) -> &DesiredSignal {
        &self.desired
    }

    pub fn system(&self) -> &DiscreteSystem<f64> {
        &self.ds
    }

    /// Axes that count towards the errors; an axis the target does not move along is skipped.
    pub fn scored_axes(&self) -> Vec<usize> {
        self.axes
            .iter()
            .zip(&self.scored)
            .filter(|(_, &s)| s)
            .map(|(&a, _)| a)
            .collect()
    }

    pub fn cost(&self, q: f64) -> Result<CostSpec<f64>> {
        CostSpec::velocity_tracking(
            q,
            self.r_scale,
            self.geometry,
            self.desired.state_sequence(&self.axes),
        )
    }

    /// Mean closed-loop trajectory at `(q, α)`.
    pub fn simulate(&self, q: f64, alpha: f64) -> Result<Trajectory<f64>> {
        let cost = self.cost(q)?;
        let sched = backward_pass(&self.ds, &cost, alpha)?;
        simulate_mean(
            &self.ds,
            &sched,
            &self.desired.initial_state(&self.axes),
            self.desired.len(),
        )
    }

    fn score(&self, traj: &Trajectory<f64>, displacement: bool) -> Result<f64> {
        let mut errs = Vec::new();
        for (i, &axis) in self.axes.iter().enumerate() {
            if !self.scored[i] {
                continue;
            }
            let e = if displacement {
                relative_rms_error(
                    &traj.displacement(i),
                    &self.desired.reference_displacement[axis],
                )?
            } else {
                relative_rms_error(&traj.velocity(i), &self.reference[i])?
            };
            errs.push(e);
        }
        if errs.is_empty() {
            return Err(Error::Metric("no axis to score".into()));
        }
        Ok(aggregate_axes(&errs))
    }

    pub fn velocity_error(&self, q: f64, alpha: f64) -> Result<f64> {
        self.score(&self.simulate(q, alpha)?, false)
    }

    pub fn displacement_error(&self, q: f64, alpha: f64) -> Result<f64> {
        self.score(&self.simulate(q, alpha)?, true)
    }

    /// `(displacement error, velocity error)` of one rollout.
    pub fn errors(&self, q: f64, alpha: f64) -> Result<(f64, f64)> {
        let traj = self.simulate(q, alpha)?;
        Ok((self.score(&traj, true)?, self.score(&traj, false)?))
    }
}

/// Golden-section minimization on `[a, b]`.
fn golden<F>(f: &F, mut a: f64, mut b: f64, tol: f64, evals: &mut usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    *evals += 2;
    for _ in 0..GOLDEN_ITERATIONS {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
        *evals += 1;
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

fn scan<F>(f: &F, grid: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    grid.par_iter().map(|&x| f(x)).collect()
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

fn is_flat(values: &[f64]) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo < FLAT_TOLERANCE
}

/// Velocity-error minimizer over `q` with `α = 0`: log-grid scan, then golden
/// section in `log10 q` on the neighbours of the best grid point.
pub fn fit_q(problem: &FitProblem, range: &SearchRange) -> Result<(f64, SearchDiagnostics)> {
    let grid = range.log_grid();
    let f = |q: f64| problem.velocity_error(q, 0.0);
    let objective = scan(&f, &grid)?;
    let mut evaluations = grid.len();
    let i = argmin(&objective);
    let bracket = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
    let flog = |lq: f64| f(10f64.powf(lq));
    let (lq, fq) = golden(
        &flog,
        bracket.0.log10(),
        bracket.1.log10(),
        1e-9,
        &mut evaluations,
    )?;
    let (best, best_objective) = if fq <= objective[i] {
        (10f64.powf(lq), fq)
    } else {
        (grid[i], objective[i])
    };
    let flat = is_flat(&objective);
    Ok((
        best,
        SearchDiagnostics {
            grid,
            objective,
            bracket,
            evaluations,
            best,
            best_objective,
            flat,
        },
    ))
}

/// Velocity-error minimizer over `α` with `q` fixed. The scan includes
/// `α = 0`; when the bracket touches zero the refinement runs in linear
/// space, otherwise in `log10 α`.
pub fn fit_alpha(
    problem: &FitProblem,
    q: f64,
    range: &SearchRange,
) -> Result<(f64, SearchDiagnostics)> {
    let mut grid = vec![0.0];
    grid.extend(range.log_grid());
    let f = |alpha: f64| problem.velocity_error(q, alpha);
    let objective = scan(&f, &grid)?;
    let mut evaluations = grid.len();
    let i = argmin(&objective);
    let bracket = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
    let (x, fx) = if bracket.0 == 0.0 {
        golden(&f, bracket.0, bracket.1, 1e-9 * bracket.1, &mut evaluations)?
    } else {
        let flog = |la: f64| f(10f64.powf(la));
        let (la, fa) = golden(
            &flog,
            bracket.0.log10(),
            bracket.1.log10(),
            1e-9,
            &mut evaluations,
        )?;
        (10f64.powf(la), fa)
    };
    let (best, best_objective) = if fx < objective[i] {
        (x, fx)
    } else {
        (grid[i], objective[i])
    };
    let flat = is_flat(&objective);
    Ok((
        best,
        SearchDiagnostics {
            grid,
            objective,
            bracket,
            evaluations,
            best,
            best_objective,
            flat,
        },
    ))
}

/// Warns when the best scan point is the last one, i.e. the optimum may lie
/// beyond the searched range.
fn edge_warning(name: &str, diag: &SearchDiagnostics) -> Option<String> {
    let last = diag.grid.len() - 1;
    (argmin(&diag.objective) == last && !diag.flat).then(|| {
        format!(
            "{name} settled at the upper end of its range ({:e})",
            diag.grid[last]
        )
    })
}

/// Stage 1 fits `q` at `α = 0`; stage 2 fits `α` at that `q`.
pub fn fit_two_stage(
    problem: &FitProblem,
    q_range: &SearchRange,
    alpha_range: &SearchRange,
    stages: FitStages,
) -> Result<FitResult> {
    let mut warnings = Vec::new();
    let (q, q_search) = fit_q(problem, q_range)?;
    if q_search.flat {
        warnings.push("velocity error is flat over the q range".to_string());
    }
    if let Some(w) = edge_warning("q", &q_search) {
        warnings.push(w);
    }
    let (alpha, alpha_search) = match stages {
        FitStages::QOnly => (0.0, None),
        FitStages::Both => {
            let (alpha, diag) = fit_alpha(problem, q, alpha_range)?;
            if diag.flat {
                warnings.push("velocity error is flat over the alpha range".to_string());
            }
            if let Some(w) = edge_warning("alpha", &diag) {
                warnings.push(w);
            }
            (alpha, Some(diag))
        }
    };
    let (displacement_error, velocity_error) = problem.errors(q, alpha)?;
    Ok(FitResult {
        q,
        alpha,
        velocity_error,
        displacement_error,
        q_search,
        alpha_search,
        warnings,
    })
}
