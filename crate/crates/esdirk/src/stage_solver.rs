//! Modified Newton iteration for the implicit stage equations, with
//! iteration-matrix (LU) reuse across stages and steps.

use nalgebra::{DMatrix, DVector, LU};
use thiserror::Error;

/// Newton stopping constant: ‖ΔX‖·rate/(1−rate) ≤ κ in scaled units.
pub const KAPPA: f64 = 0.03;

/// Newton iteration cap per stage.
pub const MAX_NEWTON_ITERS: usize = 10;

/// Relative step-size change that forces a refactorization.
pub const REFACTOR_H_RATIO: f64 = 0.2;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("iteration matrix M − hγJ is singular")]
    SingularIterationMatrix,
    #[error("constraint Jacobian g_y is singular: problem is not index-1")]
    NotIndexOne,
    #[error("inconsistent initial conditions: ‖g(t0, x0)‖ = {residual:.3e}")]
    InconsistentInitialConditions { residual: f64 },
}

/// RMS of v componentwise divided by scale.
pub fn scaled_rms(v: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let n = v.len();
    let sum: f64 = (0..n).map(|i| (v[i] / scale[i]).powi(2)).sum();
    (sum / n as f64).sqrt()
}

/// Forward-difference Jacobian with increment √ε·max(|xⱼ|, typical_scale).
pub fn numerical_jacobian(
    f: &mut dyn FnMut(f64, &DVector<f64>) -> DVector<f64>,
    t: f64,
    x: &DVector<f64>,
    typical_scale: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(t, x);
    let mut jac = DMatrix::zeros(n, n);
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut xp = x.clone();
    for j in 0..n {
        let dx = sqrt_eps * x[j].abs().max(typical_scale);
        xp[j] = x[j] + dx;
        let fj = f(t, &xp);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fj[i] - f0[i]) / dx;
        }
    }
    jac
}

/// Factored form of (M − hγJ) with the metadata driving the reuse policy.
pub struct IterationMatrix {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub h_at_factorization: f64,
    pub t_at_factorization: f64,
    /// Steps since this factorization.
    pub age: usize,
}

impl IterationMatrix {
    /// Factors M − hγJ; `mass` None means the identity.
    pub fn factor(
        mass: Option<&DMatrix<f64>>,
        jac: &DMatrix<f64>,
        h: f64,
        gamma: f64,
        t: f64,
    ) -> Result<IterationMatrix, StageError> {
        let n = jac.nrows();
        let m = match mass {
            Some(m) => m - (h * gamma) * jac,
            None => DMatrix::identity(n, n) - (h * gamma) * jac,
        };
        let lu = m.lu();
        // reject a numerically singular factorization up front
        let mut probe = DVector::from_element(n, 1.0);
        if !lu.solve_mut(&mut probe) || probe.iter().any(|v| !v.is_finite()) {
            return Err(StageError::SingularIterationMatrix);
        }
        Ok(IterationMatrix {
            lu,
            h_at_factorization: h,
            t_at_factorization: t,
            age: 0,
        })
    }

    /// True when the step size has drifted more than 20% from the factored
    /// value or the factorization exceeded the age cap.
    pub fn needs_refresh(&self, h: f64, age_cap: usize) -> bool {
        let drift = (h - self.h_at_factorization).abs() / self.h_at_factorization.abs();
        drift > REFACTOR_H_RATIO || self.age > age_cap
    }

    pub fn solve_in_place(&self, v: &mut DVector<f64>) -> bool {
        self.lu.solve_mut(v)
    }
}

/// Convergence diagnostics for one stage solve.
#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    pub iterations: usize,
    pub converged: bool,
    pub rate_estimate: f64,
    pub final_residual_norm: f64,
}

/// Solves the implicit stage equation M(X − ψ) = hγ f(t, X) for X by
/// modified Newton with the frozen iteration matrix, and recovers
/// K = (X − ψ)/(hγ).
///
/// `scale` is the componentwise tolerance scale atolᵢ + rtol·|xᵢ|; the
/// displacement test runs in these units.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage(
    f: &mut dyn FnMut(f64, &DVector<f64>) -> DVector<f64>,
    mass: Option<&DMatrix<f64>>,
    itmat: &IterationMatrix,
    t_i: f64,
    psi: &DVector<f64>,
    h: f64,
    gamma: f64,
    x_guess: &DVector<f64>,
    scale: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, NewtonReport) {
    let hg = h * gamma;
    let mut x = x_guess.clone();
    let mut prev_delta: Option<f64> = None;
    let mut rate = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut res_norm = f64::INFINITY;

    for k in 1..=MAX_NEWTON_ITERS {
        iterations = k;
        let fx = f(t_i, &x);
        let diff = &x - psi;
        let residual = match mass {
            Some(m) => m * &diff - hg * &fx,
            None => diff - hg * &fx,
        };
        res_norm = scaled_rms(&residual, scale);
        let mut delta = -residual;
        if !itmat.solve_in_place(&mut delta) {
            break; // singular factorization: report divergence
        }
        x += &delta;
        let dn = scaled_rms(&delta, scale);

        if dn <= KAPPA * 1e-3 {
            converged = true;
            break;
        }
        if let Some(prev) = prev_delta {
            rate = (dn / prev).clamp(0.0, 2.0);
            if rate >= 1.0 {
                break; // diverging
            }
            if dn * rate / (1.0 - rate) <= KAPPA {
                converged = true;
                break;
            }
        }
        prev_delta = Some(dn);
    }

    let k_i = (&x - psi) / hg;
    let report = NewtonReport {
        iterations,
        converged,
        rate_estimate: rate,
        final_residual_norm: res_norm,
    };
    (x, k_i, report)
}

/// First-stage derivative: f(t0, x0) for ODEs; for a semi-explicit index-1
/// DAE (singular mass matrix, zero rows marking algebraic components) the
/// algebraic derivative components come from the linearized constraint
/// g_t + g_x·ẋ = 0.
pub fn initial_derivative(
    f: &mut dyn FnMut(f64, &DVector<f64>) -> DVector<f64>,
    jac: &mut dyn FnMut(f64, &DVector<f64>) -> DMatrix<f64>,
    mass: Option<&DMatrix<f64>>,
    t0: f64,
    x0: &DVector<f64>,
    scale: &DVector<f64>,
) -> Result<DVector<f64>, StageError> {
    let f0 = f(t0, x0);
    let Some(m) = mass else {
        return Ok(f0);
    };
    let n = x0.len();
    let algebraic: Vec<bool> = (0..n).map(|i| (0..n).all(|j| m[(i, j)] == 0.0)).collect();
    if algebraic.iter().all(|&a| !a) {
        // nonsingular mass matrix: solve M ẋ = f directly
        let lu = m.clone().lu();
        let mut xdot = f0;
        if !lu.solve_mut(&mut xdot) {
            return Err(StageError::SingularIterationMatrix);
        }
        return Ok(xdot);
    }

    // consistency of the algebraic rows
    let g_norm = {
        let sum: f64 = (0..n)
            .filter(|&i| algebraic[i])
            .map(|i| (f0[i] / scale[i]).powi(2))
            .sum();
        sum.sqrt()
    };
    if g_norm > 1e-6 {
        return Err(StageError::InconsistentInitialConditions { residual: g_norm });
    }

    let j = jac(t0, x0);
    // f_t by forward difference, needed for the algebraic rows only
    let dt = f64::EPSILON.sqrt() * t0.abs().max(1.0);
    let f_dt = f(t0 + dt, x0);

    let mut sys = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        if algebraic[i] {
            sys.row_mut(i).copy_from(&j.row(i));
            rhs[i] = -(f_dt[i] - f0[i]) / dt;
        } else {
            sys.row_mut(i).copy_from(&m.row(i));
            rhs[i] = f0[i];
        }
    }
    let lu = sys.lu();
    let mut xdot = rhs;
    if !lu.solve_mut(&mut xdot) || xdot.iter().any(|v| !v.is_finite()) {
        return Err(StageError::NotIndexOne);
    }
    Ok(xdot)
}
