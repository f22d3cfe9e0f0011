//! Oculomotor plant models.
//!
//! The eye is a lumped second-order spring-mass-damper driven by a
//! torque-equivalent control. Each axis carries the state `[θ, θ̇]`
//! (degrees, degrees per second); oblique movements stack two decoupled
//! axes, horizontal first.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Movement geometry: one horizontal axis, or decoupled horizontal and vertical axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    Horizontal,
    Oblique,
}

impl Geometry {
    pub fn axes(self) -> usize {
        match self {
            Geometry::Horizontal => 1,
            Geometry::Oblique => 2,
        }
    }

    pub fn state_dim(self) -> usize {
        2 * self.axes()
    }

    pub fn control_dim(self) -> usize {
        self.axes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Discretization {
    /// Zero-order-hold: `A = exp(A_c dt)`, `B = A_c⁻¹(exp(A_c dt) − I) B_c`.
    #[default]
    ExactExponential,
    /// Forward Euler: `A = I + A_c dt`, `B = B_c dt`.
    FirstOrder,
}

/// Plant time constants and sampling step, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig<T> {
    pub tau1: T,
    pub tau2: T,
    pub dt: T,
    pub geometry: Geometry,
}

impl<T: Real> PlantConfig<T> {
    pub fn new(tau1: T, tau2: T, dt: T, geometry: Geometry) -> Result<Self> {
        let cfg = Self {
            tau1,
            tau2,
            dt,
            geometry,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// τ₁ = 223 ms, τ₂ = 14 ms, Δt = 4 ms.
    pub fn standard(geometry: Geometry) -> Self {
        Self {
            tau1: T::lit(0.223),
            tau2: T::lit(0.014),
            dt: T::lit(0.004),
            geometry,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.tau1 > zero) || !(self.tau2 > zero) {
            return Err(Error::Config(format!(
                "time constants must be positive (tau1 = {}, tau2 = {})",
                self.tau1, self.tau2
            )));
        }
        if !(self.dt > zero) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let fastest = if self.tau1 < self.tau2 {
            self.tau1
        } else {
            self.tau2
        };
        if !(self.dt < fastest) {
            return Err(Error::Config(format!(
                "dt = {} must be finer than the fastest time constant {}",
                self.dt, fastest
            )));
        }
        Ok(())
    }
}

/// Continuous-time plant `ẋ = A_c x + B_c u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    geometry: Geometry,
}

impl<T: Real> ContinuousSystem<T> {
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }
}

/// Builds the continuous plant. Every axis block is
///
/// ```text
/// A = [ 0          1              ]    B = [ 0          ]
///     [ -1/(τ₁τ₂)  -(τ₁+τ₂)/(τ₁τ₂) ]        [ 1/(τ₁τ₂)   ]
/// ```
///
/// and oblique plants repeat the block on the diagonal with no coupling.
pub fn build_continuous<T: Real>(config: &PlantConfig<T>) -> Result<ContinuousSystem<T>> {
    let zero = T::zero();
    if !(config.tau1 > zero) || !(config.tau2 > zero) {
        return Err(Error::Config(format!(
            "time constants must be positive (tau1 = {}, tau2 = {})",
            config.tau1, config.tau2
        )));
    }
    let prod = config.tau1 * config.tau2;
    let stiffness = -T::one() / prod;
    let damping = -(config.tau1 + config.tau2) / prod;
    let gain = T::one() / prod;

    let axes = config.geometry.axes();
    let n = 2 * axes;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, axes);
    for axis in 0..axes {
        let p = 2 * axis;
        a[(p, p + 1)] = T::one();
        a[(p + 1, p)] = stiffness;
        a[(p + 1, p + 1)] = damping;
        b[(p + 1, axis)] = gain;
    }
    Ok(ContinuousSystem {
        a,
        b,
        geometry: config.geometry,
    })
}

/// Discrete-time plant `x_{k+1} = A x_k + B u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    dt: T,
    method: Option<Discretization>,
    geometry: Option<Geometry>,
}

impl<T: Real> DiscreteSystem<T> {
    /// Wraps arbitrary matrices; used for generic systems that are not a saccade plant.
    pub fn from_matrices(a: DMatrix<T>, b: DMatrix<T>, dt: T) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Contract(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Contract(format!(
                "control matrix is {}x{}, expected {} rows",
                b.nrows(),
                b.ncols(),
                a.nrows()
            )));
        }
        Ok(Self {
            a,
            b,
            dt,
            method: None,
            geometry: None,
        })
    }

    /// The plant for a configuration, discretized with `method`.
    pub fn from_config(config: &PlantConfig<T>, method: Discretization) -> Result<Self> {
        config.validate()?;
        discretize(&build_continuous(config)?, config.dt, method)
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn method(&self) -> Option<Discretization> {
        self.method
    }

    pub fn geometry(&self) -> Option<Geometry> {
        self.geometry
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Copy with the state matrix replaced, keeping step, method and geometry.
    pub fn with_state_matrix(&self, a: DMatrix<T>) -> Result<Self> {
        if a.shape() != self.a.shape() {
            return Err(Error::Contract(format!(
                "replacement state matrix is {}x{}, expected {}x{}",
                a.nrows(),
                a.ncols(),
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        Ok(Self { a, ..self.clone() })
    }

    /// Noise-free transition `A x + B u`.
    pub fn step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        self.check_dims(x, u)?;
        Ok(&self.a * x + &self.b * u)
    }

    pub(crate) fn check_dims(&self, x: &DVector<T>, u: &DVector<T>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Contract(format!(
                "state has length {}, system expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        if u.len() != self.control_dim() {
            return Err(Error::Contract(format!(
                "control has length {}, system expects {}",
                u.len(),
                self.control_dim()
            )));
        }
        Ok(())
    }
}

/// Discretizes a continuous plant with step `dt`.
///
/// The exact form is evaluated through the exponential of the augmented
/// matrix `[[A_c, B_c], [0, 0]]·dt`, whose top blocks are `exp(A_c dt)` and
/// `∫₀^dt exp(A_c s) ds · B_c = A_c⁻¹(exp(A_c dt) − I) B_c`. This avoids the
/// cancellation in `exp(A_c dt) − I` for very small steps.
pub fn discretize<T: Real>(
    cs: &ContinuousSystem<T>,
    dt: T,
    method: Discretization,
) -> Result<DiscreteSystem<T>> {
    if !(dt > T::zero()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let n = cs.a.nrows();
    let m = cs.b.ncols();
    let (a, b) = match method {
        Discretization::ExactExponential => {
            let mut aug = DMatrix::zeros(n + m, n + m);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&cs.a * dt));
            aug.view_mut((0, n), (n, m)).copy_from(&(&cs.b * dt));
            let e = aug.exp();
            (
                e.view((0, 0), (n, n)).into_owned(),
                e.view((0, n), (n, m)).into_owned(),
            )
        }
        Discretization::FirstOrder => (DMatrix::identity(n, n) + &cs.a * dt, &cs.b * dt),
    };
    Ok(DiscreteSystem {
        a,
        b,
        dt,
        method: Some(method),
        geometry: Some(cs.geometry),
    })
}

/// Signal-dependent control noise `ε = α·u·w`, `w ~ N(0, 1)` per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T> {
    alpha: T,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha >= T::zero()) {
            return Err(Error::Config(format!(
                "noise scale must be non-negative, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn noiseless() -> Self {
        Self { alpha: T::zero() }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// One draw of the corrupted control `u + ε`.
    pub fn corrupt<R: Rng + ?Sized>(&self, u: &DVector<T>, rng: &mut R) -> DVector<T> {
        u.map(|ui| {
            let w: f64 = rng.sample(StandardNormal);
            ui + self.alpha * ui * T::lit(w)
        })
    }
}

/// `A x + B (u + ε)` with `ε⁽ⁱ⁾ = α u⁽ⁱ⁾ w⁽ⁱ⁾`.
///
/// One standard normal is drawn per control channel even when `α = 0`, so a
/// stream advances identically regardless of the noise level.
pub fn step_stochastic<T: Real, R: Rng + ?Sized>(
    ds: &DiscreteSystem<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    ds.check_dims(x, u)?;
    let corrupted = noise.corrupt(u, rng);
    Ok(&ds.a * x + &ds.b * corrupted)
}

/// `α²·diag(BᵀWB)`: the expected extra cost per unit squared control that the
/// noise injects into a quadratic form `xᵀWx` one step ahead. For scalar
/// control this is the trace term `Tr(α BᵀWB α)`.
pub fn noise_cost_contraction<T: Real>(
    ds: &DiscreteSystem<T>,
    w: &DMatrix<T>,
    alpha: T,
) -> DMatrix<T> {
    let btwb = ds.b.transpose() * w * &ds.b;
    let a2 = alpha * alpha;
    DMatrix::from_diagonal(&btwb.diagonal().map(|d| a2 * d))
}
