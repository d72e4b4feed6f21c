//! Small dense linear-algebra helpers shared by the verification modules.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-12;

/// Minimum-norm least-squares solution of `A x = b` via SVD.
///
/// Returns the solution, the residual norm `‖A x − b‖₂`, and the numerical
/// rank of `A` (singular values below `RANK_TOL` times the largest are
/// treated as zero).
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64, usize) {
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = RANK_TOL * s_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();

    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let utb = u.transpose() * b;
    let mut y = DVector::zeros(svd.singular_values.len());
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > tol {
            y[i] = utb[i] / svd.singular_values[i];
        }
    }
    let x = vt.transpose() * y;
    let residual = (a * &x - b).norm();
    (x, residual, rank)
}

/// Coefficients (ascending degree) of the unique polynomial of degree
/// `points.len() - 1` through the given `(x, y)` points, computed by
/// Newton divided differences.
pub fn interpolate_polynomial(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    assert!(n > 0);
    // divided-difference table, in place
    let mut dd: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
    for j in 1..n {
        for i in (j..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (points[i].0 - points[i - j].0);
        }
    }
    // expand the Newton form into monomial coefficients
    let mut coeffs = vec![0.0; n];
    for j in (0..n).rev() {
        // coeffs <- coeffs * (x - x_j) + dd[j]
        for i in (1..n).rev() {
            coeffs[i] = coeffs[i - 1] - points[j].0 * coeffs[i];
        }
        coeffs[0] = dd[j] - points[j].0 * coeffs[0];
    }
    coeffs
}

/// Evaluates `|p(iy)|²` for a real-coefficient polynomial `p` (ascending
/// coefficients) at the purely imaginary point `z = iy`.
pub fn abs2_on_imaginary_axis(coeffs: &[f64], y: f64) -> f64 {
    let (mut re, mut im) = (0.0_f64, 0.0_f64);
    // Horner with z = iy
    for &c in coeffs.iter().rev() {
        let (nre, nim) = (-y * im + c, y * re);
        re = nre;
        im = nim;
    }
    re * re + im * im
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_recovers_cubic() {
        // p(x) = 2 - x + 3x^3
        let p = |x: f64| 2.0 - x + 3.0 * x * x * x;
        let pts: Vec<(f64, f64)> = [-1.0, 0.0, 1.0, 2.0].iter().map(|&x| (x, p(x))).collect();
        let c = interpolate_polynomial(&pts);
        assert!((c[0] - 2.0).abs() < 1e-13);
        assert!((c[1] + 1.0).abs() < 1e-13);
        assert!(c[2].abs() < 1e-13);
        assert!((c[3] - 3.0).abs() < 1e-13);
    }

    #[test]
    fn min_norm_picks_shortest_solution() {
        // x1 + x2 = 2 has min-norm solution (1, 1)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_row_slice(&[2.0]);
        let (x, res, rank) = lstsq_min_norm(&a, &b);
        assert_eq!(rank, 1);
        assert!(res < 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn abs2_matches_direct_complex_evaluation() {
        let coeffs = [1.0, -0.5, 0.25];
        let y = 1.7;
        // p(iy) = 1 - 0.5iy + 0.25(iy)^2 = (1 - 0.25 y^2) - 0.5 y i
        let re = 1.0 - 0.25 * y * y;
        let im = -0.5 * y;
        assert!((abs2_on_imaginary_axis(&coeffs, y) - (re * re + im * im)).abs() < 1e-13);
    }
}
