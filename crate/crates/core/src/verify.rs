//! Self-checks of the controller against independent references, shared by
//! the test suite and the `verify` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::controller::{backward_pass, verify_value_form, CostSpec, VALUE_FORM_TOLERANCE};
use crate::dynamics::{DiscreteSystem, Discretization, Geometry, PlantConfig};
use crate::error::{Error, Result};
use crate::oracle::{augmented_riccati, open_loop_optimum};
use crate::signals::{
    build_desired, main_sequence_duration, minimum_jerk_position, minimum_jerk_velocity,
    NormalizedMean,
};
use crate::simulation::{simulate_mean, simulate_oblique};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const RICCATI_TOLERANCE: f64 = 1e-12;
pub const DECOUPLING_TOLERANCE: f64 = 1e-12;

/// Deliberate corruption used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The controller is synthesized for `−A` while references use `A`.
    SignFlipA,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, metric: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: metric <= tolerance,
            metric,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, tolerance: f64, err: Error) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            metric: f64::INFINITY,
            tolerance,
            detail: err.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifySettings {
    pub tau1: f64,
    pub tau2: f64,
    pub dt: f64,
    pub discretization: Discretization,
    pub q: f64,
    pub alpha: f64,
    pub r_scale: f64,
    pub oracle_cases: usize,
    pub probes: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        let p = PlantConfig::<f64>::standard(Geometry::Horizontal);
        Self {
            tau1: p.tau1,
            tau2: p.tau2,
            dt: p.dt,
            discretization: Discretization::ExactExponential,
            q: 1e6,
            alpha: 0.05,
            r_scale: 1.0,
            oracle_cases: 50,
            probes: 20,
            seed: 0,
            fault: None,
        }
    }
}

impl VerifySettings {
    pub fn system(&self, geometry: Geometry) -> Result<DiscreteSystem<f64>> {
        DiscreteSystem::from_config(
            &PlantConfig::new(self.tau1, self.tau2, self.dt, geometry)?,
            self.discretization,
        )
    }
}

/// The system the controller is built for, after any injected fault.
fn controller_system(
    ds: &DiscreteSystem<f64>,
    fault: Option<Fault>,
) -> Result<DiscreteSystem<f64>> {
    match fault {
        None => Ok(ds.clone()),
        Some(Fault::SignFlipA) => ds.with_state_matrix(-ds.a()),
    }
}

/// Desired states for a minimum-jerk saccade of `amplitude` along
/// `direction_deg` on the grid `dt`, per axis of `geometry`.
pub fn template_saccade(
    amplitude: f64,
    direction_deg: f64,
    dt: f64,
    geometry: Geometry,
) -> Result<Vec<DVector<f64>>> {
    let duration = main_sequence_duration(amplitude);
    let bins = 50;
    let rad = direction_deg.to_radians();
    let unit = [rad.cos(), rad.sin()];
    let s: Vec<f64> = (0..bins)
        .map(|i| duration * i as f64 / (bins - 1) as f64)
        .collect();
    let mean = NormalizedMean {
        bins,
        displacement: unit
            .iter()
            .map(|c| {
                s.iter()
                    .map(|&t| c * minimum_jerk_position(t, amplitude, duration))
                    .collect()
            })
            .collect(),
        velocity: unit
            .iter()
            .map(|c| {
                s.iter()
                    .map(|&t| c * minimum_jerk_velocity(t, amplitude, duration))
                    .collect()
            })
            .collect(),
        mean_duration: duration,
        trials: 2,
    };
    let desired = build_desired(&mean, dt, direction_deg)?;
    let axes: Vec<usize> = (0..geometry.axes()).collect();
    Ok(desired.state_sequence(&axes))
}

/// A randomized tracking problem for the oracle comparison.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub ds: DiscreteSystem<f64>,
    pub cost: CostSpec<f64>,
    pub alpha: f64,
    pub x_1: DVector<f64>,
}

/// Draws a system with `n ∈ {1, 2, 4}`, `N ∈ 3..=20`, `q ∈ [1, 1e6]`
/// (log-uniform) and `α ∈ [0, 0.5]`.
pub fn random_case<R: Rng + ?Sized>(rng: &mut R) -> Result<RandomCase> {
    let n = [1usize, 2, 4][rng.random_range(0..3)];
    let m = if n == 4 { 2 } else { 1 };
    let horizon = rng.random_range(3..=20);
    let q = 10f64.powf(rng.random_range(0.0..6.0));
    let alpha = rng.random_range(0.0..0.5);
    let mut normal =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::identity(n, n) * 0.9 + normal(n, n) * (0.3 / (n as f64).sqrt());
    let b = normal(n, m);
    let c = normal(n, n);
    let qm = &c * c.transpose() * (q / n as f64);
    let d = normal(m, m);
    let r = DMatrix::identity(m, m) + &d * d.transpose() * 0.1;
    let xd: Vec<DVector<f64>> = (0..horizon).map(|_| normal(n, 1).column(0) * 5.0).collect();
    let x_1 = normal(n, 1).column(0).into_owned();
    Ok(RandomCase {
        ds: DiscreteSystem::from_matrices(a, b, 1.0)?,
        cost: CostSpec::uniform(qm, r, xd)?,
        alpha,
        x_1,
    })
}

/// Relative distance between the closed-loop controls of the backward pass
/// and the open-loop minimizer of the expected cost.
pub fn oracle_discrepancy(case: &RandomCase, fault: Option<Fault>) -> Result<f64> {
    let ctrl = controller_system(&case.ds, fault)?;
    let sched = backward_pass(&ctrl, &case.cost, case.alpha)?;
    // the mean state and the estimate coincide; roll both on the true plant
    let mut x = case.x_1.clone();
    let mut dp = Vec::new();
    for k in 0..case.cost.horizon() - 1 {
        let u = &sched.biases()[k] - &sched.gains()[k] * &x;
        x = case.ds.a() * &x + case.ds.b() * &u;
        dp.push(u);
    }
    let qp = open_loop_optimum(&case.ds, &case.cost, case.alpha, &case.x_1)?;
    let num: f64 = dp
        .iter()
        .zip(&qp)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let den: f64 = qp.iter().map(|b| b.norm_squared()).sum();
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

pub fn check_oracle_equivalence(settings: &VerifySettings) -> CheckResult {
    let name = "oracle equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut worst = 0.0f64;
    for i in 0..settings.oracle_cases {
        let res = random_case(&mut rng).and_then(|c| oracle_discrepancy(&c, settings.fault));
        match res {
            Ok(d) if d.is_finite() => worst = worst.max(d),
            Ok(_) => worst = f64::INFINITY,
            Err(e) => {
                return CheckResult::failed(
                    name,
                    ORACLE_TOLERANCE,
                    Error::Contract(format!("case {i}: {e}")),
                )
            }
        }
    }
    CheckResult::new(
        name,
        worst,
        ORACLE_TOLERANCE,
        format!(
            "{} random systems, worst relative control mismatch",
            settings.oracle_cases
        ),
    )
}

/// Gains and biases against the augmented-state regulator at `α = 0`, and
/// closed-loop state against the forward-model estimate.
pub fn riccati_reduction(settings: &VerifySettings) -> Result<(f64, f64)> {
    let ds = settings.system(Geometry::Horizontal)?;
    let ctrl = controller_system(&ds, settings.fault)?;
    let xd = template_saccade(12.0, 0.0, settings.dt, Geometry::Horizontal)?;
    let cost = CostSpec::velocity_tracking(settings.q, settings.r_scale, Geometry::Horizontal, xd)?;
    let sched = backward_pass(&ctrl, &cost, 0.0)?;
    let (g, b) = augmented_riccati(&ds, &cost, 0.0)?;
    // whole-schedule norms: a single near-zero bias is pure cancellation
    let stacked = |ours: &[DMatrix<f64>], theirs: &[DMatrix<f64>]| {
        let num: f64 = ours
            .iter()
            .zip(theirs)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        let den: f64 = theirs.iter().map(|b| b.norm_squared()).sum();
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    };
    let as_col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let ours_b: Vec<_> = sched.biases().iter().map(as_col).collect();
    let ref_b: Vec<_> = b.iter().map(as_col).collect();
    let gain_err = stacked(sched.gains(), &g).max(stacked(&ours_b, &ref_b));
    let traj = simulate_mean(&ctrl, &sched, &DVector::zeros(2), cost.horizon())?;
    let est_err = traj
        .states()
        .iter()
        .zip(traj.estimates())
        .map(|(x, e)| (x - e).norm() / x.norm().max(1.0))
        .fold(0.0, f64::max);
    Ok((gain_err, est_err))
}

pub fn check_riccati_reduction(settings: &VerifySettings) -> CheckResult {
    let name = "riccati reduction";
    match riccati_reduction(settings) {
        Ok((g, e)) => CheckResult::new(
            name,
            g.max(e),
            RICCATI_TOLERANCE,
            format!("gain/bias mismatch {g:.2e}, state-estimate gap {e:.2e}"),
        ),
        Err(e) => CheckResult::failed(name, RICCATI_TOLERANCE, e),
    }
}

pub fn check_value_form(settings: &VerifySettings) -> CheckResult {
    let name = "value form";
    let run = || -> Result<f64> {
        let ds = settings.system(Geometry::Horizontal)?;
        let ctrl = controller_system(&ds, settings.fault)?;
        let xd = template_saccade(12.0, 0.0, settings.dt, Geometry::Horizontal)?;
        let cost =
            CostSpec::velocity_tracking(settings.q, settings.r_scale, Geometry::Horizontal, xd)?;
        let sched = backward_pass(&ctrl, &cost, settings.alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        // tolerance infinite here so the report comes back for inspection
        let report =
            verify_value_form(&ds, &cost, &sched, settings.probes, f64::INFINITY, &mut rng)?;
        Ok(report.max_discrepancy)
    };
    match run() {
        Ok(d) => CheckResult::new(
            name,
            d,
            VALUE_FORM_TOLERANCE,
            format!(
                "{} probes per step, worst relative discrepancy",
                settings.probes
            ),
        ),
        Err(e) => CheckResult::failed(name, VALUE_FORM_TOLERANCE, e),
    }
}

/// Largest relative gap between the oblique rollout and two independent
/// horizontal rollouts of its axis components.
pub fn decoupling_gap(settings: &VerifySettings, direction_deg: f64) -> Result<f64> {
    let oblique = settings.system(Geometry::Oblique)?;
    let single = settings.system(Geometry::Horizontal)?;
    let ctrl = controller_system(&oblique, settings.fault)?;
    let xd = template_saccade(12.0, direction_deg, settings.dt, Geometry::Oblique)?;
    let n = xd.len();
    let cost =
        CostSpec::velocity_tracking(settings.q, settings.r_scale, Geometry::Oblique, xd.clone())?;
    let sched = backward_pass(&ctrl, &cost, settings.alpha)?;
    let both = simulate_oblique(&oblique, &sched, &DVector::zeros(4), n)?;
    let mut gap = 0.0f64;
    for axis in 0..2 {
        let part: Vec<DVector<f64>> = xd
            .iter()
            .map(|x| x.rows(2 * axis, 2).into_owned())
            .collect();
        let c =
            CostSpec::velocity_tracking(settings.q, settings.r_scale, Geometry::Horizontal, part)?;
        let s = backward_pass(&single, &c, settings.alpha)?;
        let alone = simulate_mean(&single, &s, &DVector::zeros(2), n)?;
        let scale = alone
            .states()
            .iter()
            .map(|x| x.amax())
            .fold(1e-300, f64::max);
        for (x2, x1) in both.states().iter().zip(alone.states()) {
            gap = gap.max((x2.rows(2 * axis, 2) - x1).amax() / scale);
        }
    }
    Ok(gap)
}

pub fn check_decoupling(settings: &VerifySettings) -> CheckResult {
    let name = "oblique decoupling";
    let mut worst = 0.0f64;
    for d in [30.0, 45.0, 60.0] {
        match decoupling_gap(settings, d) {
            Ok(g) => worst = worst.max(g),
            Err(e) => return CheckResult::failed(name, DECOUPLING_TOLERANCE, e),
        }
    }
    CheckResult::new(
        name,
        worst,
        DECOUPLING_TOLERANCE,
        "oblique rollout vs independent axis rollouts at 30/45/60 deg".into(),
    )
}

/// Runs every check.
pub fn run_checks(settings: &VerifySettings) -> Vec<CheckResult> {
    vec![
        check_oracle_equivalence(settings),
        check_value_form(settings),
        check_riccati_reduction(settings),
        check_decoupling(settings),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_checks_pass() {
        for c in run_checks(&VerifySettings::default()) {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let settings = VerifySettings {
            fault: Some(Fault::SignFlipA),
            oracle_cases: 5,
            ..VerifySettings::default()
        };
        let res = run_checks(&settings);
        assert!(!res[0].passed, "{:?}", res[0]);
        assert!(res.iter().filter(|c| !c.passed).count() >= 2);
    }

    #[test]
    fn template_has_zero_pads() {
        let xd = template_saccade(12.0, 90.0, 0.004, Geometry::Oblique).unwrap();
        assert_eq!(xd[0].len(), 4);
        assert_eq!(xd[0][3], 0.0);
        assert!(xd.iter().all(|x| x[1].abs() < 1e-9));
        assert!(xd.iter().any(|x| x[3] > 100.0));
    }
}
