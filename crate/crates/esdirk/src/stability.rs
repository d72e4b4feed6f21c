//! Stability functions R(z) = P(z)/Q(z), R(∞), the Laguerre L-stability
//! condition, and an A-stability boundary scan.

use crate::linalg::{abs2_on_imaginary_axis, interpolate_polynomial};
use crate::tableau::ButcherTableau;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative magnitude below which interpolated numerator coefficients are
/// truncated to zero before degree determination.
pub const COEFF_TRUNCATION_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("degenerate tableau: singular diagonal block (γ = 0)")]
    DegenerateTableau,
    #[error("tableau is not stiffly accurate with respect to the given weights")]
    NotStifflyAccurate,
}

/// Rational stability function with numerator P and denominator Q stored
/// as ascending-degree coefficient vectors.
#[derive(Debug, Clone)]
pub struct StabilityFunction {
    pub p_coeffs: Vec<f64>,
    pub q_coeffs: Vec<f64>,
    /// |R(∞)|: finite ratio when deg P = deg Q, 0 when deg P < deg Q,
    /// infinite when deg P > deg Q.
    pub r_inf: f64,
}

impl StabilityFunction {
    pub fn deg_p(&self) -> usize {
        self.p_coeffs.len().saturating_sub(1)
    }

    pub fn deg_q(&self) -> usize {
        self.q_coeffs.len().saturating_sub(1)
    }

    /// Evaluates R at a real argument.
    pub fn eval_real(&self, z: f64) -> f64 {
        poly_eval(&self.p_coeffs, z) / poly_eval(&self.q_coeffs, z)
    }

    /// Evaluates R at a complex argument given as (re, im).
    pub fn eval_complex(&self, z: (f64, f64)) -> (f64, f64) {
        let p = poly_eval_complex(&self.p_coeffs, z);
        let q = poly_eval_complex(&self.q_coeffs, z);
        let denom = q.0 * q.0 + q.1 * q.1;
        (
            (p.0 * q.0 + p.1 * q.1) / denom,
            (p.1 * q.0 - p.0 * q.1) / denom,
        )
    }
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_eval_complex(coeffs: &[f64], z: (f64, f64)) -> (f64, f64) {
    let (mut re, mut im) = (0.0_f64, 0.0_f64);
    for &c in coeffs.iter().rev() {
        let nre = re * z.0 - im * z.1 + c;
        let nim = re * z.1 + im * z.0;
        re = nre;
        im = nim;
    }
    (re, im)
}

/// Default determinant sample points: 0, ±1/2, ±1, ±2, ±4, ...
pub fn default_sample_points(n: usize) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut mag = 0.5;
    while pts.len() < n {
        pts.push(mag);
        if pts.len() < n {
            pts.push(-mag);
        }
        mag *= 2.0;
    }
    pts
}

/// Stability function for the given quadrature weights, with P obtained by
/// determinant evaluation at `points` followed by polynomial interpolation
/// and Q = (1 − γz)^{s−1} built analytically.
pub fn stability_function_with_points(
    t: &ButcherTableau,
    weights: &DVector<f64>,
    points: &[f64],
) -> StabilityFunction {
    let s = t.s;
    assert!(points.len() > s, "need s+1 distinct sample points");
    let e = DVector::from_element(s, 1.0);
    let samples: Vec<(f64, f64)> = points[..s + 1]
        .iter()
        .map(|&z| {
            // det(I − zA + z e wᵀ)
            let m = DMatrix::identity(s, s) - z * &t.a + z * &e * weights.transpose();
            (z, m.determinant())
        })
        .collect();
    let mut p_coeffs = interpolate_polynomial(&samples);

    let scale = p_coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    for c in &mut p_coeffs {
        if c.abs() < COEFF_TRUNCATION_TOL * scale {
            *c = 0.0;
        }
    }
    while p_coeffs.len() > 1 && *p_coeffs.last().unwrap() == 0.0 {
        p_coeffs.pop();
    }

    // Q(z) = (1 − γz)^{s−1}, binomial expansion
    let mut q_coeffs = vec![1.0];
    for _ in 0..s - 1 {
        let mut next = vec![0.0; q_coeffs.len() + 1];
        for (k, &c) in q_coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= t.gamma * c;
        }
        q_coeffs = next;
    }
    while q_coeffs.len() > 1 && *q_coeffs.last().unwrap() == 0.0 {
        q_coeffs.pop();
    }

    let deg_p = p_coeffs.len() - 1;
    let deg_q = q_coeffs.len() - 1;
    let r_inf = match deg_p.cmp(&deg_q) {
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => (p_coeffs.last().unwrap() / q_coeffs.last().unwrap()).abs(),
        std::cmp::Ordering::Greater => f64::INFINITY,
    };

    StabilityFunction {
        p_coeffs,
        q_coeffs,
        r_inf,
    }
}

/// Stability function using the default sample points.
pub fn stability_function(t: &ButcherTableau, weights: &DVector<f64>) -> StabilityFunction {
    let pts = default_sample_points(t.s + 1);
    stability_function_with_points(t, weights, &pts)
}

/// R(∞) = −e_{m−1}ᵀ Ã⁻¹ ã for a stiffly accurate method, by back-solving the
/// lower-triangular system Ã y = ã.
///
/// The effective final stage is the last stage i with cᵢ = 1 whose A-row
/// equals `weights`; stages past it carry zero weight and are dropped. This
/// covers the builtin advancing weights as well as the Kværnø embedded rows.
pub fn r_infinity_weights(
    t: &ButcherTableau,
    weights: &DVector<f64>,
) -> Result<f64, StabilityError> {
    let m = (0..t.s)
        .rev()
        .find(|&i| {
            (t.c[i] - 1.0).abs() <= 1e-13
                && (0..t.s).all(|j| (t.a[(i, j)] - weights[j]).abs() <= 1e-13)
                && (i + 1..t.s).all(|j| weights[j].abs() <= 1e-13)
        })
        .ok_or(StabilityError::NotStifflyAccurate)?
        + 1; // effective stage count
    if t.gamma == 0.0 {
        return Err(StabilityError::DegenerateTableau);
    }
    // Ã is rows/cols 2..m of A; ã is column 1 of those rows
    let n = m - 1;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut rhs = t.a[(i + 1, 0)];
        for (j, yj) in y.iter().enumerate().take(i) {
            rhs -= t.a[(i + 1, j + 1)] * yj;
        }
        y[i] = rhs / t.a[(i + 1, i + 1)];
    }
    Ok(-y[n - 1])
}

/// R(∞) of the advancing method of a stiffly accurate tableau.
pub fn r_infinity_stiffly_accurate(t: &ButcherTableau) -> Result<f64, StabilityError> {
    r_infinity_weights(t, &t.b)
}

/// Laguerre polynomial Lₙ(x) = Σ (−1)ʲ C(n,j) xʲ/j! for 0 ≤ n ≤ 8.
pub fn laguerre(n: usize, x: f64) -> f64 {
    assert!(n <= 8);
    let mut sum = 0.0;
    let mut term = 1.0; // (−1)^j C(n,j) x^j / j! at j = 0
    for j in 0..=n {
        sum += term;
        if j < n {
            term *= -(x * (n - j) as f64) / ((j + 1) * (j + 1)) as f64;
        }
    }
    sum
}

/// Result of the E-polynomial boundary scan along the imaginary axis.
#[derive(Debug, Clone)]
pub struct ScanReport {
    pub min_e: f64,
    pub deg_p: usize,
    pub deg_q: usize,
    /// min E ≥ −1e-9 and deg P ≤ deg Q: a necessary condition for
    /// A-stability, not a proof.
    pub a_stable_consistent: bool,
}

/// Evaluates E(y) = |Q(iy)|² − |P(iy)|² on a log-spaced grid
/// y ∈ [10⁻³, 10⁶] plus y = 0 and reports the minimum.
pub fn a_stability_scan(sf: &StabilityFunction, n_samples: usize) -> ScanReport {
    assert!(n_samples >= 100);
    let e_at =
        |y: f64| abs2_on_imaginary_axis(&sf.q_coeffs, y) - abs2_on_imaginary_axis(&sf.p_coeffs, y);
    let grid: Vec<f64> = (0..n_samples)
        .map(|i| {
            let frac = i as f64 / (n_samples - 1) as f64;
            10f64.powf(-3.0 + 9.0 * frac)
        })
        .collect();

    #[cfg(feature = "parallel")]
    let min_grid = {
        use rayon::prelude::*;
        grid.par_iter()
            .map(|&y| e_at(y))
            .reduce(|| f64::INFINITY, f64::min)
    };
    #[cfg(not(feature = "parallel"))]
    let min_grid = grid.iter().map(|&y| e_at(y)).fold(f64::INFINITY, f64::min);

    let min_e = min_grid.min(e_at(0.0));
    ScanReport {
        min_e,
        deg_p: sf.deg_p(),
        deg_q: sf.deg_q(),
        a_stable_consistent: min_e >= -1e-9 && sf.deg_p() <= sf.deg_q(),
    }
}

/// Sequential scan used by the criterion bench as the baseline; identical
/// result to [`a_stability_scan`].
pub fn a_stability_scan_seq(sf: &StabilityFunction, n_samples: usize) -> ScanReport {
    assert!(n_samples >= 100);
    let e_at =
        |y: f64| abs2_on_imaginary_axis(&sf.q_coeffs, y) - abs2_on_imaginary_axis(&sf.p_coeffs, y);
    let mut min_e = e_at(0.0);
    for i in 0..n_samples {
        let frac = i as f64 / (n_samples - 1) as f64;
        min_e = min_e.min(e_at(10f64.powf(-3.0 + 9.0 * frac)));
    }
    ScanReport {
        min_e,
        deg_p: sf.deg_p(),
        deg_q: sf.deg_q(),
        a_stable_consistent: min_e >= -1e-9 && sf.deg_p() <= sf.deg_q(),
    }
}
