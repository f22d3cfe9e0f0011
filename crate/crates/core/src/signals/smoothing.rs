//! Least-squares polynomial smoothing and analytic differentiation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const SMOOTHING_DEGREE: usize = 7;

/// Polynomial in the scaled time `s = (t − center) / half_width ∈ [−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFit {
    center: f64,
    half_width: f64,
    /// Ascending powers of `s`.
    coeffs: Vec<f64>,
}

impl PolynomialFit {
    /// Least-squares fit of `x(t)` by a polynomial of `degree`.
    ///
    /// Needs at least `degree + 2` samples so the fit actually smooths.
    pub fn fit(t: &[f64], x: &[f64], degree: usize) -> Result<Self> {
        if t.len() != x.len() {
            return Err(Error::Contract(format!(
                "{} times but {} samples",
                t.len(),
                x.len()
            )));
        }
        if t.len() < degree + 2 {
            return Err(Error::Contract(format!(
                "degree-{degree} smoothing needs at least {} samples, got {}",
                degree + 2,
                t.len()
            )));
        }
        let (lo, hi) = t
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let center = 0.5 * (lo + hi);
        let half_width = 0.5 * (hi - lo);
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Analysis(
                "degenerate time grid for polynomial fit".into(),
            ));
        }
        let cols = degree + 1;
        let vander = DMatrix::from_fn(t.len(), cols, |i, j| {
            ((t[i] - center) / half_width).powi(j as i32)
        });
        let qr = vander.qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if r.diagonal().iter().any(|d| !(d.abs() > 1e-10 * scale)) {
            return Err(Error::Analysis("rank-deficient polynomial fit".into()));
        }
        let rhs = qr.q().transpose() * DVector::from_column_slice(x);
        let coeffs = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::Analysis("rank-deficient polynomial fit".into()))?;
        Ok(Self {
            center,
            half_width,
            coeffs: coeffs.iter().copied().collect(),
        })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.half_width;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// `dx/dt` at `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.half_width;
        let d = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (j, &c)| acc * s + j as f64 * c);
        d / self.half_width
    }
}

/// Velocity of a uniformly sampled position trace, from a degree-7
/// least-squares fit over the whole trace.
pub fn smooth_differentiate(positions: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    if !(sample_rate > 0.0) {
        return Err(Error::Contract(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let t: Vec<f64> = (0..positions.len())
        .map(|k| k as f64 / sample_rate)
        .collect();
    let fit = PolynomialFit::fit(&t, positions, SMOOTHING_DEGREE)?;
    Ok(t.iter().map(|&tk| fit.derivative(tk)).collect())
}
