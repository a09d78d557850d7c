//! Small dense linear-algebra helpers on top of faer.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Condition number above which normal equations get a ridge term.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Ridge strength relative to `trace(Gram) / m`.
pub const RIDGE_FACTOR: f64 = 1e-10;

/// Neumaier-compensated running sum. Supports removal for sliding windows.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Solver {
        message: format!("symmetric eigen-decomposition did not converge: {e:?}"),
        max_residual: f64::NAN,
        residuals: Vec::new(),
    })?;
    let values = evd.S().column_vector().iter().copied().collect();
    Ok((values, evd.U().to_owned()))
}

/// `aᵀ a`.
pub fn gram(a: MatRef<'_, f64>) -> Mat<f64> {
    a.transpose() * a
}

#[derive(Clone, Debug)]
pub struct LeastSquares {
    /// `features x targets`.
    pub coefficients: Mat<f64>,
    /// Ridge added to the Gram diagonal, zero when none was needed.
    pub ridge: f64,
    pub condition: f64,
}

/// Minimizes `‖design · coef − target‖_F` through the normal equations.
///
/// `design` is `samples x features`, `target` is `samples x targets`.
pub fn least_squares(design: MatRef<'_, f64>, target: MatRef<'_, f64>) -> Result<LeastSquares> {
    if design.nrows() != target.nrows() {
        return Err(Error::Fit(format!(
            "{} design rows but {} target rows",
            design.nrows(),
            target.nrows()
        )));
    }
    let m = design.ncols();
    let g = gram(design);
    let rhs = design.transpose() * target;
    let (eig, _) = sym_eigen(g.as_ref())?;
    let (lo, hi) = (eig[0], eig[m - 1]);
    let trace: f64 = (0..m).map(|i| g[(i, i)]).sum();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::Fit("design matrix is zero or non-finite".into()));
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let ridge = if condition > RIDGE_CONDITION {
        RIDGE_FACTOR * trace / m as f64
    } else {
        0.0
    };
    let mut reg = g;
    for i in 0..m {
        reg[(i, i)] += ridge;
    }
    let llt = reg
        .llt(Side::Lower)
        .map_err(|e| Error::Fit(format!("Gram matrix not positive definite after ridge: {e:?}")))?;
    let coefficients = llt.solve(&rhs);
    if coefficients.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite coefficients".into()));
    }
    Ok(LeastSquares {
        coefficients,
        ridge,
        condition,
    })
}

/// Orthogonal projector onto the column space of `a`, equal to `a a⁺`.
pub fn column_space_projector(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let svd = a.thin_svd().map_err(|e| Error::Solver {
        message: format!("SVD did not converge: {e:?}"),
        max_residual: f64::NAN,
        residuals: Vec::new(),
    })?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let u = svd.U().subcols(0, rank);
    Ok(u * u.transpose())
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn least_squares_exact_system() {
        let x = Mat::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = Mat::from_fn(6, 1, |i, _| 3.0 - 0.5 * i as f64);
        let fit = least_squares(x.as_ref(), y.as_ref()).unwrap();
        assert!((fit.coefficients[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((fit.coefficients[(1, 0)] + 0.5).abs() < 1e-12);
        assert_eq!(fit.ridge, 0.0);
    }

    #[test]
    fn duplicate_columns_get_ridge() {
        let x = Mat::from_fn(5, 2, |i, _| i as f64 + 1.0);
        let y = Mat::from_fn(5, 1, |i, _| 2.0 * (i as f64 + 1.0));
        let fit = least_squares(x.as_ref(), y.as_ref()).unwrap();
        assert!(fit.ridge > 0.0);
        let pred = &x * &fit.coefficients;
        for i in 0..5 {
            assert!((pred[(i, 0)] - y[(i, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_design_is_fit_error() {
        let x = Mat::<f64>::zeros(4, 2);
        let y = Mat::<f64>::zeros(4, 1);
        assert!(matches!(least_squares(x.as_ref(), y.as_ref()), Err(Error::Fit(_))));
    }

    #[test]
    fn projector_is_idempotent_and_rank_aware() {
        // third column is twice the first, so the rank is 2
        let a = Mat::from_fn(5, 3, |i, j| match j {
            0 => (i * i) as f64,
            1 => 1.0 - i as f64,
            _ => 2.0 * (i * i) as f64,
        });
        let p = column_space_projector(a.as_ref()).unwrap();
        let pp = &p * &p;
        assert!((&pp - &p).norm_l2() < 1e-12);
        let trace: f64 = (0..5).map(|i| p[(i, i)]).sum();
        assert!((trace - 2.0).abs() < 1e-10);
    }
}
