//! Internal forward model: a noise-free copy of the plant driven by the
//! uncorrupted control. There is no measurement update.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::DiscreteSystem;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    x_hat: DVector<T>,
}

impl<T: Real> ForwardModel<T> {
    /// Perfect internal model of `ds`, initialized at the known initial state.
    pub fn new(ds: &DiscreteSystem<T>, x_1: DVector<T>) -> Result<Self> {
        if x_1.len() != ds.state_dim() {
            return Err(Error::Contract(format!(
                "initial estimate has length {}, system expects {}",
                x_1.len(),
                ds.state_dim()
            )));
        }
        Ok(Self {
            a: ds.a().clone(),
            b: ds.b().clone(),
            x_hat: x_1,
        })
    }

    pub fn estimate(&self) -> &DVector<T> {
        &self.x_hat
    }

    /// Advances `x̂ ← A x̂ + B u` and returns the new estimate.
    pub fn predict(&mut self, u: &DVector<T>) -> Result<&DVector<T>> {
        if u.len() != self.b.ncols() {
            return Err(Error::Contract(format!(
                "control has length {}, forward model expects {}",
                u.len(),
                self.b.ncols()
            )));
        }
        self.x_hat = &self.a * &self.x_hat + &self.b * u;
        Ok(&self.x_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Discretization, Geometry, PlantConfig};

    fn plant() -> DiscreteSystem<f64> {
        DiscreteSystem::from_config(
            &PlantConfig::standard(Geometry::Horizontal),
            Discretization::ExactExponential,
        )
        .unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let mut fm = ForwardModel::new(&plant(), DVector::zeros(2)).unwrap();
        assert_eq!(
            fm.predict(&DVector::zeros(1)).unwrap(),
            &DVector::<f64>::zeros(2)
        );
    }

    #[test]
    fn estimates_depend_only_on_controls() {
        let ds = plant();
        let controls: Vec<_> = (0..8)
            .map(|k| DVector::from_element(1, k as f64 - 3.0))
            .collect();
        let run = || {
            let mut fm = ForwardModel::new(&ds, DVector::from_vec(vec![0.5, 0.0])).unwrap();
            controls
                .iter()
                .map(|u| fm.predict(u).unwrap().clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_wrong_sizes() {
        let ds = plant();
        assert!(ForwardModel::new(&ds, DVector::zeros(3)).is_err());
        let mut fm = ForwardModel::new(&ds, DVector::zeros(2)).unwrap();
        assert!(fm.predict(&DVector::zeros(2)).is_err());
    }
}
