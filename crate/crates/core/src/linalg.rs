//! Small dense least-squares helpers over nalgebra.

use nalgebra::DMatrix;

pub(crate) struct LeastSquares {
    /// p × k coefficients.
    pub coef: DMatrix<f64>,
    pub rank: usize,
}

/// Minimum-norm least squares of `y` (n × k) on `x` (n × p).
pub(crate) fn lstsq(x: &DMatrix<f64>, y: &DMatrix<f64>) -> LeastSquares {
    let (n, p) = x.shape();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = (n.max(p) as f64) * f64::EPSILON * smax.max(1e-300);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coef = svd.solve(y, tol).unwrap_or_else(|_| DMatrix::zeros(p, y.ncols()));
    LeastSquares { coef, rank }
}

/// Ratio of smallest to largest singular value.
pub(crate) fn reciprocal_condition(a: &DMatrix<f64>) -> f64 {
    let s = a.clone().singular_values();
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_and_rank() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 3.0, 5.0]);
        let ls = lstsq(&x, &y);
        assert_eq!(ls.rank, 2);
        assert!((ls.coef[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((ls.coef[(1, 0)] - 2.0).abs() < 1e-12);

        let collinear = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(lstsq(&collinear, &y).rank, 1);
    }
}
