//! Independent reference solutions for the tracking controller.
//!
//! Neither routine shares code with [`crate::controller::backward_pass`]:
//! one minimizes the expected cost over the stacked open-loop control
//! sequence directly, the other runs a textbook LQ regulator on the
//! state augmented with a constant.

use nalgebra::{DMatrix, DVector};

use crate::controller::CostSpec;
use crate::dynamics::DiscreteSystem;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn check<T: Real>(ds: &DiscreteSystem<T>, cost: &CostSpec<T>) -> Result<()> {
    if ds.state_dim() != cost.state_dim() || ds.control_dim() != cost.control_dim() {
        return Err(Error::Contract("cost and system dimensions differ".into()));
    }
    Ok(())
}

/// Minimizer of the analytic expected cost over open-loop control sequences.
///
/// The cost is quadratic in the stacked controls `U`:
/// `Uᵀ H U + 2 fᵀ U + c` with `H = Σ_k Φ_kᵀQ_kΦ_k + blockdiag(R_j + α² diag(BᵀS_jB))`,
/// where `Φ_k` maps `U` to the mean state at `k` and `S_j` sums the
/// weights reached by a disturbance injected after control `j`. Solved by
/// Cholesky with two rounds of iterative refinement.
pub fn open_loop_optimum<T: Real>(
    ds: &DiscreteSystem<T>,
    cost: &CostSpec<T>,
    alpha: T,
    x_1: &DVector<T>,
) -> Result<Vec<DVector<T>>> {
    check(ds, cost)?;
    let horizon = cost.horizon();
    let (n, m) = (ds.state_dim(), ds.control_dim());
    let steps = horizon - 1;
    let dim = m * steps;
    let a = ds.a();
    let b = ds.b();

    let mut powers = vec![DMatrix::<T>::identity(n, n)];
    for p in 1..horizon {
        let next = a * &powers[p - 1];
        powers.push(next);
    }

    let mut h = DMatrix::<T>::zeros(dim, dim);
    let mut f = DVector::<T>::zeros(dim);
    for k in 1..horizon {
        let mut phi = DMatrix::<T>::zeros(n, dim);
        for j in 0..k {
            phi.view_mut((0, j * m), (n, m))
                .copy_from(&(&powers[k - 1 - j] * b));
        }
        let q = cost.q(k);
        let free = &powers[k] * x_1 - cost.desired(k);
        let phi_t_q = phi.transpose() * q;
        h += &phi_t_q * &phi;
        f += &phi_t_q * free;
    }
    let a2 = alpha * alpha;
    for j in 0..steps {
        let mut s = DMatrix::<T>::zeros(n, n);
        for k in j + 1..horizon {
            let p = &powers[k - 1 - j];
            s += p.transpose() * cost.q(k) * p;
        }
        let spread = b.transpose() * s * b;
        let mut block = h.view_mut((j * m, j * m), (m, m));
        block += cost.r(j);
        for i in 0..m {
            block[(i, i)] += a2 * spread[(i, i)];
        }
    }
    let h = (&h + h.transpose()) * T::lit(0.5);
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Contract("expected-cost Hessian is not positive definite".into()))?;
    let rhs = -f;
    let mut u = chol.solve(&rhs);
    for _ in 0..2 {
        let resid = &rhs - &h * &u;
        u += chol.solve(&resid);
    }
    Ok((0..steps).map(|j| u.rows(j * m, m).into_owned()).collect())
}

/// Gains `(G_k, b_k)` from the LQ regulator on `z = [x; 1]`.
///
/// The tracking cost becomes `zᵀ Q̃_k z` with
/// `Q̃ = [[Q, −Q x^d], [−(x^d)ᵀQ, (x^d)ᵀQ x^d]]`. Noise enters as the
/// effort inflation `α² diag(Bᵀ M_{k+1} B)`, `M_k = Q_k + AᵀM_{k+1}A`.
/// With `u = −K z`, `G = K[:, ..n]` and `b = −K[:, n]`.
pub fn augmented_riccati<T: Real>(
    ds: &DiscreteSystem<T>,
    cost: &CostSpec<T>,
    alpha: T,
) -> Result<(Vec<DMatrix<T>>, Vec<DVector<T>>)> {
    check(ds, cost)?;
    let horizon = cost.horizon();
    let (n, m) = (ds.state_dim(), ds.control_dim());
    let a = ds.a();
    let b = ds.b();

    let mut at = DMatrix::<T>::zeros(n + 1, n + 1);
    at.view_mut((0, 0), (n, n)).copy_from(a);
    at[(n, n)] = T::one();
    let mut bt = DMatrix::<T>::zeros(n + 1, m);
    bt.view_mut((0, 0), (n, m)).copy_from(b);

    let q_aug = |k: usize| {
        let q = cost.q(k);
        let xd = cost.desired(k);
        let qxd = q * xd;
        let mut out = DMatrix::<T>::zeros(n + 1, n + 1);
        out.view_mut((0, 0), (n, n)).copy_from(q);
        for i in 0..n {
            out[(i, n)] = -qxd[i];
            out[(n, i)] = -qxd[i];
        }
        out[(n, n)] = xd.dot(&qxd);
        out
    };

    let a2 = alpha * alpha;
    let mut p = q_aug(horizon - 1);
    let mut reach = cost.q(horizon - 1).clone();
    let mut gains = Vec::with_capacity(horizon - 1);
    let mut biases = Vec::with_capacity(horizon - 1);
    for k in (0..horizon - 1).rev() {
        let mut r = cost.r(k).clone();
        let spread = b.transpose() * &reach * b;
        for i in 0..m {
            r[(i, i)] += a2 * spread[(i, i)];
        }
        let btp = bt.transpose() * &p;
        let s = &r + &btp * &bt;
        let s = (&s + s.transpose()) * T::lit(0.5);
        let lu = s.lu();
        let k_mat = lu.solve(&(&btp * &at)).ok_or_else(|| Error::Synthesis {
            step: k,
            reason: "singular regulator denominator".into(),
        })?;
        let next = q_aug(k) + at.transpose() * &p * &at - at.transpose() * btp.transpose() * &k_mat;
        p = (&next + next.transpose()) * T::lit(0.5);
        reach = cost.q(k) + a.transpose() * &reach * a;
        gains.push(k_mat.columns(0, n).into_owned());
        biases.push(-k_mat.column(n).into_owned());
    }
    gains.reverse();
    biases.reverse();
    Ok((gains, biases))
}
