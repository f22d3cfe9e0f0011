//! Closed-loop rollouts: the mean trajectory and seeded Monte-Carlo ensembles.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{control_at, GainSchedule};
use crate::dynamics::{step_stochastic, DiscreteSystem, Geometry, NoiseModel};
use crate::error::{Error, Result};
use crate::estimator::ForwardModel;
use crate::scalar::Real;

/// Trials aggregated per work unit. Fixed so that results do not depend on
/// the number of worker threads.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub direction_deg: f64,
    pub amplitude_deg: f64,
    pub label: String,
}

/// Uniformly sampled closed-loop rollout. State `k` sits at time `k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    dt: T,
    states: Vec<DVector<T>>,
    estimates: Vec<DVector<T>>,
    controls: Vec<DVector<T>>,
    pub meta: TrajectoryMeta,
}

impl<T: Real> Trajectory<T> {
    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> T {
        self.dt * T::lit(k as f64)
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    /// Forward-model estimates `x̂_k`, one per state.
    pub fn estimates(&self) -> &[DVector<T>] {
        &self.estimates
    }

    /// Controls `u_k`, one per non-terminal state.
    pub fn controls(&self) -> &[DVector<T>] {
        &self.controls
    }

    /// Number of `[θ, θ̇]` axes in the state.
    pub fn axes(&self) -> usize {
        self.states.first().map_or(0, |x| x.len() / 2)
    }

    /// Angular displacement of `axis` (0 = horizontal, 1 = vertical).
    ///
    /// # Panics
    /// If `axis >= self.axes()`.
    pub fn displacement(&self, axis: usize) -> Vec<T> {
        assert!(axis < self.axes(), "axis {axis} out of range");
        self.states.iter().map(|x| x[2 * axis]).collect()
    }

    /// Angular velocity of `axis`.
    ///
    /// # Panics
    /// If `axis >= self.axes()`.
    pub fn velocity(&self, axis: usize) -> Vec<T> {
        assert!(axis < self.axes(), "axis {axis} out of range");
        self.states.iter().map(|x| x[2 * axis + 1]).collect()
    }

    /// Writes `time_s,theta_h_deg,vel_h_degps[,theta_v_deg,vel_v_degps]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let axes = self.axes();
        if axes == 0 || axes > 2 {
            return Err(Error::Contract(format!(
                "trajectory CSV needs 1 or 2 axes, state has {}",
                self.states.first().map_or(0, |x| x.len())
            )));
        }
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["time_s", "theta_h_deg", "vel_h_degps"];
        if axes == 2 {
            header.extend(["theta_v_deg", "vel_v_degps"]);
        }
        out.write_record(&header).map_err(csv_err)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![format!("{}", self.time(k).to_f64_lossy())];
            row.extend(x.iter().map(|v| format!("{}", v.to_f64_lossy())));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Deterministic closed-loop rollout of the mean dynamics.
///
/// The forward model receives the uncorrupted control, so the estimate and
/// the mean state obey the same recursion and coincide at every step.
pub fn simulate_mean<T: Real>(
    ds: &DiscreteSystem<T>,
    schedule: &GainSchedule<T>,
    x_1: &DVector<T>,
    horizon: usize,
) -> Result<Trajectory<T>> {
    if schedule.horizon() != horizon {
        return Err(Error::Contract(format!(
            "schedule covers {} states, rollout asks for {horizon}",
            schedule.horizon()
        )));
    }
    let mut fm = ForwardModel::new(ds, x_1.clone())?;
    let (a, b) = (ds.a(), ds.b());
    let mut mu = x_1.clone();
    let mut states = Vec::with_capacity(horizon);
    let mut estimates = Vec::with_capacity(horizon);
    let mut controls = Vec::with_capacity(horizon.saturating_sub(1));
    states.push(mu.clone());
    estimates.push(fm.estimate().clone());
    for k in 0..horizon - 1 {
        let u = control_at(k, schedule, fm.estimate())?;
        mu = a * &mu + b * &u;
        fm.predict(&u)?;
        states.push(mu.clone());
        estimates.push(fm.estimate().clone());
        controls.push(u);
    }
    Ok(Trajectory {
        dt: ds.dt(),
        states,
        estimates,
        controls,
        meta: TrajectoryMeta::default(),
    })
}

/// [`simulate_mean`] restricted to the two-axis oblique plant.
pub fn simulate_oblique<T: Real>(
    ds: &DiscreteSystem<T>,
    schedule: &GainSchedule<T>,
    x_1: &DVector<T>,
    horizon: usize,
) -> Result<Trajectory<T>> {
    if ds.geometry() != Some(Geometry::Oblique) {
        return Err(Error::Contract(format!(
            "oblique rollout needs the two-axis plant, got {:?}",
            ds.geometry()
        )));
    }
    simulate_mean(ds, schedule, x_1, horizon)
}

/// Random stream for one Monte-Carlo trial, derived from the master seed and
/// the trial index only.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// One noisy closed-loop rollout; returns the true states.
pub fn simulate_trial<T: Real, R: rand::Rng + ?Sized>(
    ds: &DiscreteSystem<T>,
    schedule: &GainSchedule<T>,
    x_1: &DVector<T>,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> Result<Vec<DVector<T>>> {
    let horizon = schedule.horizon();
    let mut fm = ForwardModel::new(ds, x_1.clone())?;
    let mut x = x_1.clone();
    let mut states = Vec::with_capacity(horizon);
    states.push(x.clone());
    for k in 0..horizon - 1 {
        let u = control_at(k, schedule, fm.estimate())?;
        x = step_stochastic(ds, &x, &u, noise, rng)?;
        fm.predict(&u)?;
        states.push(x.clone());
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointStats {
    pub axis: usize,
    pub mean_displacement: f64,
    pub std_displacement: f64,
}

/// Per-step ensemble moments of a Monte-Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats<T: Real> {
    pub mean: Vec<DVector<T>>,
    /// Unbiased sample covariance (zero for a single trial).
    pub covariance: Vec<DMatrix<T>>,
    pub endpoint: Vec<EndpointStats>,
    pub trials: usize,
    pub seed: u64,
}

struct Moments<T: Real> {
    count: usize,
    mean: Vec<DVector<T>>,
    m2: Vec<DMatrix<T>>,
}

impl<T: Real> Moments<T> {
    fn new(horizon: usize, n: usize) -> Self {
        Self {
            count: 0,
            mean: vec![DVector::zeros(n); horizon],
            m2: vec![DMatrix::zeros(n, n); horizon],
        }
    }

    fn push(&mut self, states: &[DVector<T>]) {
        self.count += 1;
        let inv = T::one() / T::lit(self.count as f64);
        for ((mean, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(states) {
            let before = x - &*mean;
            *mean += &before * inv;
            let after = x - &*mean;
            *m2 += &before * after.transpose();
        }
    }

    fn merge(mut self, other: Self) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let total = self.count + other.count;
        let frac = T::lit(other.count as f64) / T::lit(total as f64);
        let weight = T::lit(self.count as f64) * frac;
        for ((mean, m2), (omean, om2)) in self
            .mean
            .iter_mut()
            .zip(&mut self.m2)
            .zip(other.mean.iter().zip(&other.m2))
        {
            let delta = omean - &*mean;
            *m2 += om2 + &delta * delta.transpose() * weight;
            *mean += &delta * frac;
        }
        self.count = total;
        self
    }
}

/// Runs `trials` independent noisy rollouts and aggregates per-step moments.
///
/// Trial `i` draws from [`trial_rng`]`(seed, i)`; trials are reduced in fixed
/// chunks combined in index order, so the result is bit-identical for any
/// thread count.
pub fn simulate_monte_carlo<T: Real>(
    ds: &DiscreteSystem<T>,
    schedule: &GainSchedule<T>,
    x_1: &DVector<T>,
    horizon: usize,
    trials: usize,
    alpha: T,
    seed: u64,
) -> Result<EnsembleStats<T>> {
    if trials == 0 {
        return Err(Error::Contract(
            "Monte-Carlo run needs at least one trial".into(),
        ));
    }
    if schedule.horizon() != horizon {
        return Err(Error::Contract(format!(
            "schedule covers {} states, rollout asks for {horizon}",
            schedule.horizon()
        )));
    }
    let noise = NoiseModel::new(alpha)?;
    let n = ds.state_dim();
    let chunks: Vec<(usize, usize)> = (0..trials)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(trials)))
        .collect();
    let partials: Vec<Result<Moments<T>>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = Moments::new(horizon, n);
            for trial in start..end {
                let mut rng = trial_rng(seed, trial as u64);
                acc.push(&simulate_trial(ds, schedule, x_1, &noise, &mut rng)?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::new(horizon, n);
    for part in partials {
        total = total.merge(part?);
    }
    let denom = if trials > 1 {
        T::lit((trials - 1) as f64)
    } else {
        T::one()
    };
    let covariance: Vec<DMatrix<T>> = total.m2.iter().map(|m| m / denom).collect();
    let last = horizon - 1;
    let endpoint = (0..n / 2)
        .map(|axis| EndpointStats {
            axis,
            mean_displacement: total.mean[last][2 * axis].to_f64_lossy(),
            std_displacement: covariance[last][(2 * axis, 2 * axis)]
                .to_f64_lossy()
                .max(0.0)
                .sqrt(),
        })
        .collect();
    Ok(EnsembleStats {
        mean: total.mean,
        covariance,
        endpoint,
        trials,
        seed,
    })
}

/// Analytic state covariance of the closed loop driven by the deterministic
/// control sequence `controls`: `Σ_{k+1} = AΣ_kAᵀ + α² B diag(u_k)² Bᵀ`.
pub fn covariance_recursion<T: Real>(
    ds: &DiscreteSystem<T>,
    controls: &[DVector<T>],
    alpha: T,
) -> Vec<DMatrix<T>> {
    let n = ds.state_dim();
    let (a, b) = (ds.a(), ds.b());
    let a2 = alpha * alpha;
    let mut sigma = DMatrix::zeros(n, n);
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(sigma.clone());
    for u in controls {
        let spread = DMatrix::from_diagonal(&u.map(|v| a2 * v * v));
        sigma = a * &sigma * a.transpose() + b * spread * b.transpose();
        out.push(sigma.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{backward_pass, CostSpec};
    use crate::dynamics::{Discretization, PlantConfig};

    fn plant(geometry: Geometry) -> DiscreteSystem<f64> {
        DiscreteSystem::from_config(
            &PlantConfig::standard(geometry),
            Discretization::ExactExponential,
        )
        .unwrap()
    }

    fn bell(n: usize, peak: f64) -> Vec<f64> {
        (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                peak * 16.0 * s * s * (1.0 - s) * (1.0 - s)
            })
            .collect()
    }

    fn horizontal_problem(q: f64, alpha: f64) -> (DiscreteSystem<f64>, GainSchedule<f64>, usize) {
        let ds = plant(Geometry::Horizontal);
        let v = bell(15, 400.0);
        let xd = v
            .iter()
            .map(|&vk| DVector::from_vec(vec![0.0, vk]))
            .collect();
        let cost = CostSpec::velocity_tracking(q, 1.0, Geometry::Horizontal, xd).unwrap();
        let sched = backward_pass(&ds, &cost, alpha).unwrap();
        (ds, sched, 15)
    }

    #[test]
    fn zero_weight_is_free_decay() {
        let ds = plant(Geometry::Horizontal);
        let xd = vec![DVector::from_vec(vec![0.0, 100.0]); 10];
        let cost = CostSpec::velocity_tracking(0.0, 1.0, Geometry::Horizontal, xd).unwrap();
        let sched = backward_pass(&ds, &cost, 0.0).unwrap();
        let x1 = DVector::from_vec(vec![2.0, -10.0]);
        let traj = simulate_mean(&ds, &sched, &x1, 10).unwrap();
        let mut x = x1.clone();
        for state in traj.states() {
            assert_eq!(state, &x);
            x = ds.a() * &x;
        }
    }

    #[test]
    fn rest_stays_at_rest() {
        let ds = plant(Geometry::Horizontal);
        let cost =
            CostSpec::velocity_tracking(1e6, 1.0, Geometry::Horizontal, vec![DVector::zeros(2); 8])
                .unwrap();
        let sched = backward_pass(&ds, &cost, 0.01).unwrap();
        let traj = simulate_mean(&ds, &sched, &DVector::zeros(2), 8).unwrap();
        assert!(traj.states().iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert!(simulate_mean(&ds, &sched, &DVector::zeros(2), 9).is_err());
    }

    #[test]
    fn estimate_tracks_mean_exactly() {
        let (ds, sched, n) = horizontal_problem(1e6, 0.02);
        let traj = simulate_mean(&ds, &sched, &DVector::zeros(2), n).unwrap();
        assert_eq!(traj.states(), traj.estimates());
    }

    #[test]
    fn oblique_needs_oblique_plant() {
        let (ds, sched, n) = horizontal_problem(1e6, 0.0);
        assert!(matches!(
            simulate_oblique(&ds, &sched, &DVector::zeros(2), n),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn noiseless_ensemble_collapses_to_mean() {
        let (ds, sched, n) = horizontal_problem(1e6, 0.0);
        let x1 = DVector::from_vec(vec![0.1, 0.0]);
        let mean = simulate_mean(&ds, &sched, &x1, n).unwrap();
        for trial in 0..5 {
            let mut rng = trial_rng(11, trial);
            let states =
                simulate_trial(&ds, &sched, &x1, &NoiseModel::noiseless(), &mut rng).unwrap();
            assert_eq!(states.as_slice(), mean.states());
        }
        let stats = simulate_monte_carlo(&ds, &sched, &x1, n, 1500, 0.0, 11).unwrap();
        assert_eq!(stats.mean.as_slice(), mean.states());
        assert!(stats.covariance.iter().all(|c| c.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn ensemble_is_reproducible() {
        let (ds, sched, n) = horizontal_problem(1e6, 0.05);
        let x1 = DVector::zeros(2);
        let a = simulate_monte_carlo(&ds, &sched, &x1, n, 2000, 0.05, 7).unwrap();
        let b = simulate_monte_carlo(&ds, &sched, &x1, n, 2000, 0.05, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_monte_carlo(&ds, &sched, &x1, n, 2000, 0.05, 8).unwrap();
        assert_ne!(a.mean, c.mean);
        let single = simulate_monte_carlo(&ds, &sched, &x1, n, 1, 0.05, 7).unwrap();
        assert!(single
            .covariance
            .iter()
            .all(|c| c.iter().all(|&v| v == 0.0)));
        assert!(simulate_monte_carlo(&ds, &sched, &x1, n, 0, 0.05, 7).is_err());
    }

    #[test]
    fn ensemble_mean_within_standard_errors() {
        let (ds, sched, n) = horizontal_problem(1e6, 0.05);
        let x1 = DVector::zeros(2);
        let mean = simulate_mean(&ds, &sched, &x1, n).unwrap();
        let trials = 10_000;
        let stats = simulate_monte_carlo(&ds, &sched, &x1, n, trials, 0.05, 3).unwrap();
        for k in 0..n {
            for i in 0..2 {
                let se = (stats.covariance[k][(i, i)] / trials as f64).sqrt();
                let diff = (stats.mean[k][i] - mean.states()[k][i]).abs();
                assert!(
                    diff <= 3.0 * se + 1e-9,
                    "step {k} state {i}: {diff} > 3·{se}"
                );
            }
        }
        for c in &stats.covariance {
            let min = nalgebra::SymmetricEigen::new(c.clone()).eigenvalues.min();
            assert!(min >= -1e-9 * c.amax().max(1.0));
        }
    }

    #[test]
    fn endpoint_spread_grows_with_noise() {
        let x1 = DVector::zeros(2);
        let spreads: Vec<f64> = [0.005, 0.01, 0.02]
            .iter()
            .map(|&alpha| {
                let (ds, sched, n) = horizontal_problem(1e6, alpha);
                let stats = simulate_monte_carlo(&ds, &sched, &x1, n, 4000, alpha, 5).unwrap();
                stats.endpoint[0].std_displacement
            })
            .collect();
        assert!(
            spreads[0] < spreads[1] && spreads[1] < spreads[2],
            "{spreads:?}"
        );
    }

    #[test]
    fn covariance_recursion_matches_ensemble() {
        let alpha = 0.05;
        let (ds, sched, n) = horizontal_problem(1e6, alpha);
        let x1 = DVector::zeros(2);
        let mean = simulate_mean(&ds, &sched, &x1, n).unwrap();
        let analytic = covariance_recursion(&ds, mean.controls(), alpha);
        let stats = simulate_monte_carlo(&ds, &sched, &x1, n, 20_000, alpha, 99).unwrap();
        for k in 2..n {
            for i in 0..2 {
                let rel =
                    (stats.covariance[k][(i, i)] - analytic[k][(i, i)]).abs() / analytic[k][(i, i)];
                assert!(rel < 0.05, "step {k} var[{i}] rel {rel}");
            }
        }
    }

    #[test]
    fn discretizations_agree_in_closed_loop() {
        let rms = |a: &[f64], b: &[f64]| {
            let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (num / b.iter().map(|y| y * y).sum::<f64>()).sqrt()
        };
        let cfg = PlantConfig::standard(Geometry::Horizontal);
        let exact = DiscreteSystem::from_config(&cfg, Discretization::ExactExponential).unwrap();
        let euler = DiscreteSystem::from_config(&cfg, Discretization::FirstOrder).unwrap();
        for amp in [6.0, 12.0] {
            let mut xd =
                crate::verify::template_saccade(amp, 0.0, 0.004, Geometry::Horizontal).unwrap();
            xd.resize(50, xd.last().unwrap().clone());
            let cost = CostSpec::velocity_tracking(1e6, 1.0, Geometry::Horizontal, xd).unwrap();
            let run = |ds: &DiscreteSystem<f64>| {
                let sched = backward_pass(ds, &cost, 0.0).unwrap();
                simulate_mean(ds, &sched, &DVector::zeros(2), 50).unwrap()
            };
            let (a, b) = (run(&exact), run(&euler));
            assert!(rms(&b.velocity(0), &a.velocity(0)) < 0.005);
            let (ea, eb) = (a.displacement(0)[49], b.displacement(0)[49]);
            assert!((ea - eb).abs() < 0.005 * ea.abs());
        }
    }

    #[test]
    fn csv_layout() {
        let (ds, sched, n) = horizontal_problem(1e6, 0.0);
        let traj = simulate_mean(&ds, &sched, &DVector::zeros(2), n).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time_s,theta_h_deg,vel_h_degps");
        assert_eq!(lines.count(), n);
        assert!(!text.contains('\r'));
    }
}
