//! Finite-horizon velocity-tracking controller under signal-dependent noise.
//!
//! States are indexed `k = 0..N` and controls `k = 0..N-1`: the last state is
//! terminal and receives no control. The cost-to-go is kept in the quadratic
//! form
//!
//! ```text
//! V_k(x, x̂) = xᵀ W^x_k x − 2 xᵀ W^r_k + eᵀ W^e_k e + W_k,   e = x − x̂
//! ```
//!
//! and the control applied on the estimate is `u_k = −G_k x̂_k + b_k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{noise_cost_contraction, DiscreteSystem, Geometry};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest condition number of `L_k` accepted before synthesis is aborted.
pub const MAX_GAIN_CONDITION: f64 = 1e12;

/// Default tolerance for [`verify_value_form`].
pub const VALUE_FORM_TOLERANCE: f64 = 1e-9;

/// Quadratic tracking cost over `N` states.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec<T: Real> {
    q_seq: Vec<DMatrix<T>>,
    r_seq: Vec<DMatrix<T>>,
    xd_seq: Vec<DVector<T>>,
}

impl<T: Real> CostSpec<T> {
    /// `q_seq` and `xd_seq` have one entry per state (`N`), `r_seq` one per control (`N − 1`).
    pub fn new(
        q_seq: Vec<DMatrix<T>>,
        r_seq: Vec<DMatrix<T>>,
        xd_seq: Vec<DVector<T>>,
    ) -> Result<Self> {
        let horizon = xd_seq.len();
        if horizon < 2 {
            return Err(Error::Contract(format!(
                "horizon must be at least 2, got {horizon}"
            )));
        }
        if q_seq.len() != horizon {
            return Err(Error::Contract(format!(
                "{} state weights for a horizon of {horizon}",
                q_seq.len()
            )));
        }
        if r_seq.len() != horizon - 1 {
            return Err(Error::Contract(format!(
                "{} control weights, expected {}",
                r_seq.len(),
                horizon - 1
            )));
        }
        let n = xd_seq[0].len();
        let m = r_seq[0].nrows();
        for (k, (q, xd)) in q_seq.iter().zip(&xd_seq).enumerate() {
            if q.shape() != (n, n) || xd.len() != n {
                return Err(Error::Contract(format!(
                    "state weight or target at step {k} has the wrong size"
                )));
            }
            check_symmetric_psd(q, false)
                .map_err(|r| Error::Contract(format!("Q at step {k}: {r}")))?;
        }
        for (k, r) in r_seq.iter().enumerate() {
            if r.shape() != (m, m) {
                return Err(Error::Contract(format!(
                    "control weight at step {k} has the wrong size"
                )));
            }
            check_symmetric_psd(r, true)
                .map_err(|e| Error::Contract(format!("R at step {k}: {e}")))?;
        }
        Ok(Self {
            q_seq,
            r_seq,
            xd_seq,
        })
    }

    /// Time-invariant weights `Q`, `R` with a per-step target.
    pub fn uniform(q: DMatrix<T>, r: DMatrix<T>, xd_seq: Vec<DVector<T>>) -> Result<Self> {
        let horizon = xd_seq.len();
        Self::new(vec![q; horizon], vec![r; horizon.saturating_sub(1)], xd_seq)
    }

    /// Saccade cost: weight `q` on every velocity error only, `R = r_scale·I`.
    pub fn velocity_tracking(
        q: T,
        r_scale: T,
        geometry: Geometry,
        xd_seq: Vec<DVector<T>>,
    ) -> Result<Self> {
        if !(q >= T::zero()) {
            return Err(Error::Contract(format!(
                "velocity weight must be non-negative, got {q}"
            )));
        }
        Self::uniform(
            velocity_weight(q, geometry),
            DMatrix::identity(geometry.control_dim(), geometry.control_dim()) * r_scale,
            xd_seq,
        )
    }

    /// Number of states `N`.
    pub fn horizon(&self) -> usize {
        self.xd_seq.len()
    }

    pub fn state_dim(&self) -> usize {
        self.xd_seq[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.r_seq[0].nrows()
    }

    pub fn q(&self, k: usize) -> &DMatrix<T> {
        &self.q_seq[k]
    }

    pub fn r(&self, k: usize) -> &DMatrix<T> {
        &self.r_seq[k]
    }

    pub fn desired(&self, k: usize) -> &DVector<T> {
        &self.xd_seq[k]
    }

    pub fn desired_seq(&self) -> &[DVector<T>] {
        &self.xd_seq
    }

    fn check_system(&self, ds: &DiscreteSystem<T>) -> Result<()> {
        if ds.state_dim() != self.state_dim() || ds.control_dim() != self.control_dim() {
            return Err(Error::Contract(format!(
                "cost is {}-state/{}-control but system is {}-state/{}-control",
                self.state_dim(),
                self.control_dim(),
                ds.state_dim(),
                ds.control_dim()
            )));
        }
        Ok(())
    }
}

/// `Q = diag(0, q[, 0, q])`.
pub fn velocity_weight<T: Real>(q: T, geometry: Geometry) -> DMatrix<T> {
    let n = geometry.state_dim();
    let mut w = DMatrix::zeros(n, n);
    for axis in 0..geometry.axes() {
        w[(2 * axis + 1, 2 * axis + 1)] = q;
    }
    w
}

fn check_symmetric_psd<T: Real>(m: &DMatrix<T>, definite: bool) -> std::result::Result<(), String> {
    let scale = m.amax().max(T::one());
    let tol = T::lit(1e3) * T::eps() * scale;
    if (m - m.transpose()).amax() > tol {
        return Err("not symmetric".into());
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let min = eig.min();
    if definite && !(min > tol) {
        return Err(format!("not positive definite (min eigenvalue {min})"));
    }
    if !definite && min < -tol {
        return Err(format!("not positive semidefinite (min eigenvalue {min})"));
    }
    Ok(())
}

/// Gains, biases and value-function weights produced by [`backward_pass`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSchedule<T: Real> {
    pub(crate) gains: Vec<DMatrix<T>>,
    pub(crate) biases: Vec<DVector<T>>,
    pub(crate) denominators: Vec<DMatrix<T>>,
    pub(crate) w_x: Vec<DMatrix<T>>,
    pub(crate) w_e: Vec<DMatrix<T>>,
    pub(crate) w_r: Vec<DVector<T>>,
    pub(crate) w: Vec<T>,
    pub(crate) alpha: T,
}

impl<T: Real> GainSchedule<T> {
    /// Number of states `N`; there are `N − 1` gains.
    pub fn horizon(&self) -> usize {
        self.w_x.len()
    }

    pub fn gains(&self) -> &[DMatrix<T>] {
        &self.gains
    }

    pub fn biases(&self) -> &[DVector<T>] {
        &self.biases
    }

    /// `L_k = R_k + C^x_{k+1} + C^e_{k+1} + BᵀW^x_{k+1}B`.
    pub fn denominators(&self) -> &[DMatrix<T>] {
        &self.denominators
    }

    pub fn w_x(&self) -> &[DMatrix<T>] {
        &self.w_x
    }

    pub fn w_e(&self) -> &[DMatrix<T>] {
        &self.w_e
    }

    pub fn w_r(&self) -> &[DVector<T>] {
        &self.w_r
    }

    pub fn w(&self) -> &[T] {
        &self.w
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Copy with the constant value terms `W_k` cleared; gains are untouched.
    pub fn without_constants(&self) -> Self {
        let mut out = self.clone();
        out.w.iter_mut().for_each(|w| *w = T::zero());
        out
    }
}

/// Boundary weights at the terminal state: `W^x = Q`, `W^e = 0`, `W^r = Q x^d`,
/// `W = 2 (x^d)ᵀ Q x^d`.
pub fn terminal_weights<T: Real>(cost: &CostSpec<T>) -> (DMatrix<T>, DMatrix<T>, DVector<T>, T) {
    let last = cost.horizon() - 1;
    let q = cost.q(last);
    let xd = cost.desired(last);
    let n = cost.state_dim();
    let qxd = q * xd;
    let w = T::lit(2.0) * xd.dot(&qxd);
    (q.clone(), DMatrix::zeros(n, n), qxd, w)
}

fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}

/// Backward dynamic-programming recursion for the gains and value weights.
///
/// The linear weight uses the adjoint form
/// `W^r_k = Q_k x^d_k + AᵀW^r_{k+1} − AᵀW^x_{k+1}B L_k⁻¹ BᵀW^r_{k+1}` with
/// `b_k = L_k⁻¹ BᵀW^r_{k+1}`, which is the only dimensionally consistent
/// reading for vector states.
pub fn backward_pass<T: Real>(
    ds: &DiscreteSystem<T>,
    cost: &CostSpec<T>,
    alpha: T,
) -> Result<GainSchedule<T>> {
    cost.check_system(ds)?;
    if !(alpha >= T::zero()) {
        return Err(Error::Contract(format!(
            "noise scale must be non-negative, got {alpha}"
        )));
    }
    let horizon = cost.horizon();
    let a = ds.a();
    let b = ds.b();
    let at = a.transpose();
    let bt = b.transpose();
    let two = T::lit(2.0);

    let (wx_n, we_n, wr_n, w_n) = terminal_weights(cost);
    let mut w_x = vec![wx_n; horizon];
    let mut w_e = vec![we_n; horizon];
    let mut w_r = vec![wr_n; horizon];
    let mut w = vec![w_n; horizon];
    let mut gains = Vec::with_capacity(horizon - 1);
    let mut biases = Vec::with_capacity(horizon - 1);
    let mut denominators = Vec::with_capacity(horizon - 1);

    for k in (0..horizon - 1).rev() {
        let wx1 = &w_x[k + 1];
        let we1 = &w_e[k + 1];
        let wr1 = &w_r[k + 1];

        let bt_wx = &bt * wx1;
        let l = symmetrize(
            cost.r(k)
                + noise_cost_contraction(ds, wx1, alpha)
                + noise_cost_contraction(ds, we1, alpha)
                + &bt_wx * b,
        );
        let chol = factor_denominator(&l, k)?;

        let bt_wx_a = &bt_wx * a;
        let bt_wr = &bt * wr1;
        let g = chol.solve(&bt_wx_a);
        let bias = chol.solve(&bt_wr);
        let z = bt_wx_a.transpose() * &g;

        let q = cost.q(k);
        let xd = cost.desired(k);
        let qxd = q * xd;
        let wx_k = symmetrize(q + &at * wx1 * a - &z);
        let we_k = symmetrize(&at * we1 * a + &z);
        let wr_k = &qxd + &at * wr1 - bt_wx_a.transpose() * &bias;
        let w_k = w[k + 1] + two * xd.dot(&qxd) - bt_wr.dot(&bias);

        w_x[k] = wx_k;
        w_e[k] = we_k;
        w_r[k] = wr_k;
        w[k] = w_k;
        gains.push(g);
        biases.push(bias);
        denominators.push(l);
    }
    gains.reverse();
    biases.reverse();
    denominators.reverse();

    Ok(GainSchedule {
        gains,
        biases,
        denominators,
        w_x,
        w_e,
        w_r,
        w,
        alpha,
    })
}

fn factor_denominator<T: Real>(
    l: &DMatrix<T>,
    step: usize,
) -> Result<nalgebra::Cholesky<T, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(l.clone()).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if !(min > T::zero()) {
        return Err(Error::Synthesis {
            step,
            reason: format!("gain denominator is not positive definite (min eigenvalue {min})"),
        });
    }
    let cond = (max / min).to_f64_lossy();
    if !(cond <= MAX_GAIN_CONDITION) {
        return Err(Error::Synthesis {
            step,
            reason: format!(
                "gain denominator condition number {cond:.3e} exceeds {MAX_GAIN_CONDITION:.0e}"
            ),
        });
    }
    l.clone().cholesky().ok_or_else(|| Error::Synthesis {
        step,
        reason: "Cholesky factorization failed".into(),
    })
}

/// `u_k = −G_k x̂_k + b_k` for `k` in `0..N−1`.
pub fn control_at<T: Real>(
    k: usize,
    schedule: &GainSchedule<T>,
    x_hat: &DVector<T>,
) -> Result<DVector<T>> {
    let g = schedule.gains.get(k).ok_or_else(|| {
        Error::Contract(format!(
            "control step {k} out of range 0..{}",
            schedule.gains.len()
        ))
    })?;
    if x_hat.len() != g.ncols() {
        return Err(Error::Contract(format!(
            "estimate has length {}, gains expect {}",
            x_hat.len(),
            g.ncols()
        )));
    }
    Ok(&schedule.biases[k] - g * x_hat)
}

/// Analytic `E[Σ ψ_k]` for an open-loop control sequence applied from the known state `x_1`.
///
/// Mean and covariance are propagated exactly:
/// `μ_{k+1} = Aμ_k + Bu_k`, `Σ_{k+1} = AΣ_kAᵀ + α² B diag(u_k)² Bᵀ`, `Σ_1 = 0`.
/// `controls` may hold `N − 1` or `N` entries; a control at the terminal state is ignored.
pub fn expected_cost<T: Real>(
    ds: &DiscreteSystem<T>,
    cost: &CostSpec<T>,
    alpha: T,
    controls: &[DVector<T>],
    x_1: &DVector<T>,
) -> Result<T> {
    cost.check_system(ds)?;
    let horizon = cost.horizon();
    if controls.len() != horizon - 1 && controls.len() != horizon {
        return Err(Error::Contract(format!(
            "{} controls for a horizon of {horizon} states",
            controls.len()
        )));
    }
    if x_1.len() != ds.state_dim() {
        return Err(Error::Contract("initial state has the wrong size".into()));
    }
    let a = ds.a();
    let b = ds.b();
    let a2 = alpha * alpha;
    let n = ds.state_dim();
    let mut mu = x_1.clone();
    let mut sigma = DMatrix::<T>::zeros(n, n);
    let mut total = T::zero();
    for k in 0..horizon {
        let q = cost.q(k);
        let err = &mu - cost.desired(k);
        total += err.dot(&(q * &err)) + (q * &sigma).trace();
        if k + 1 < horizon {
            let u = &controls[k];
            if u.len() != ds.control_dim() {
                return Err(Error::Contract(format!("control {k} has the wrong size")));
            }
            total += u.dot(&(cost.r(k) * u));
            let spread = DMatrix::from_diagonal(&u.map(|v| a2 * v * v));
            sigma = a * &sigma * a.transpose() + b * spread * b.transpose();
            mu = a * &mu + b * u;
        }
    }
    Ok(total)
}

/// Result of [`verify_value_form`].
#[derive(Debug, Clone, Serialize)]
pub struct ValueFormReport {
    /// Largest relative discrepancy at each state index.
    pub per_step: Vec<f64>,
    pub max_discrepancy: f64,
    pub worst_step: usize,
    /// `V_k(0, 0)` under the recursed form minus the one-step expansion.
    /// Nonzero because the constant recursion carries `2 (x^d)ᵀQx^d` per step
    /// while the stage cost contributes `(x^d)ᵀQx^d`; constants never reach the gains.
    pub constant_offsets: Vec<f64>,
    pub probes_per_step: usize,
    pub tolerance: f64,
}

impl ValueFormReport {
    pub fn passed(&self) -> bool {
        self.max_discrepancy <= self.tolerance
    }
}

/// Evaluates the value at state index `k` two ways.
///
/// Returns `(recursed, expanded)`: the quadratic form with the recursed
/// weights at `k`, and the one-step expansion. The expansion adds the stage
/// cost, the control effort inflated by the noise contractions, and the
/// step-`k+1` value form propagated through the dynamics, with the control
/// computed on `x̂`.
/// At the terminal index the expansion is just `(x − x^d)ᵀ Q (x − x^d)`.
pub fn value_pair<T: Real>(
    ds: &DiscreteSystem<T>,
    cost: &CostSpec<T>,
    schedule: &GainSchedule<T>,
    k: usize,
    x: &DVector<T>,
    x_hat: &DVector<T>,
) -> Result<(T, T)> {
    let horizon = schedule.horizon();
    if k >= horizon {
        return Err(Error::Contract(format!(
            "state index {k} out of range 0..{horizon}"
        )));
    }
    let two = T::lit(2.0);
    let e = x - x_hat;
    let recursed = x.dot(&(&schedule.w_x[k] * x)) - two * x.dot(&schedule.w_r[k])
        + e.dot(&(&schedule.w_e[k] * &e))
        + schedule.w[k];

    let err = x - cost.desired(k);
    let stage = err.dot(&(cost.q(k) * &err));
    if k + 1 == horizon {
        return Ok((recursed, stage));
    }
    let a = ds.a();
    let b = ds.b();
    let alpha = schedule.alpha;
    let wx1 = &schedule.w_x[k + 1];
    let we1 = &schedule.w_e[k + 1];
    let u = control_at(k, schedule, x_hat)?;
    let effort =
        cost.r(k) + noise_cost_contraction(ds, wx1, alpha) + noise_cost_contraction(ds, we1, alpha);
    let next_mean = a * x + b * &u;
    let next_err = a * &e;
    let expanded = stage
        + u.dot(&(effort * &u))
        + next_mean.dot(&(wx1 * &next_mean))
        + next_err.dot(&(we1 * &next_err))
        - two * schedule.w_r[k + 1].dot(&next_mean)
        + schedule.w[k + 1];
    Ok((recursed, expanded))
}

/// Checks that substituting the estimate-based control into the one-step
/// expansion reproduces the assumed quadratic value form at every step.
///
/// For each state index, `probes` random pairs `(x, x̂)` are drawn around the
/// target. The state-dependent parts `V(x, x̂) − V(0, 0)` of both evaluations
/// are compared relative to the magnitude of the values involved; constant
/// offsets are reported separately.
pub fn verify_value_form<T: Real, R: Rng + ?Sized>(
    ds: &DiscreteSystem<T>,
    cost: &CostSpec<T>,
    schedule: &GainSchedule<T>,
    probes: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<ValueFormReport> {
    cost.check_system(ds)?;
    if schedule.horizon() != cost.horizon() {
        return Err(Error::Contract("schedule and cost horizons differ".into()));
    }
    let n = ds.state_dim();
    let origin = DVector::<T>::zeros(n);
    let mut per_step = Vec::with_capacity(cost.horizon());
    let mut offsets = Vec::with_capacity(cost.horizon());
    for k in 0..cost.horizon() {
        let xd = cost.desired(k);
        let spread = T::one() + xd.amax();
        let (ra0, rb0) = value_pair(ds, cost, schedule, k, &origin, &origin)?;
        offsets.push((ra0 - rb0).to_f64_lossy());
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let x = xd
                + DVector::from_fn(n, |_, _| {
                    spread * T::lit(rng.sample::<f64, _>(StandardNormal))
                });
            let x_hat = &x
                + DVector::from_fn(n, |_, _| {
                    spread * T::lit(rng.sample::<f64, _>(StandardNormal))
                });
            let (ra, rb) = value_pair(ds, cost, schedule, k, &x, &x_hat)?;
            let scale = [ra, rb, ra0, rb0]
                .iter()
                .map(|v| v.abs().to_f64_lossy())
                .fold(f64::MIN_POSITIVE, f64::max);
            let disc = ((ra - ra0) - (rb - rb0)).abs().to_f64_lossy() / scale;
            worst = worst.max(disc);
        }
        per_step.push(worst);
    }
    let (worst_step, max_discrepancy) = per_step
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (k, d)| if d > acc.1 { (k, d) } else { acc });
    let report = ValueFormReport {
        per_step,
        max_discrepancy,
        worst_step,
        constant_offsets: offsets,
        probes_per_step: probes,
        tolerance,
    };
    if !report.passed() {
        return Err(Error::ValueForm {
            step: worst_step,
            discrepancy: max_discrepancy,
            tolerance,
        });
    }
    Ok(report)
}
