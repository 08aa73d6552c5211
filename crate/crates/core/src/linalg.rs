//! Small dense least-squares toolkit shared by every regression in the crate.
//!
//! Designs are column-equilibrated before the SVD so that the rank test is
//! insensitive to the units of individual regressors.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold below which a design counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum DesignError {
    /// More regressors than observations.
    Underdetermined { rows: usize, cols: usize },
    /// A column is identically zero or the scaled design is numerically singular.
    RankDeficient { condition: f64 },
}

/// A factored regression design `X` (rows = observations).
#[derive(Debug, Clone)]
pub struct OlsDesign {
    x: DMatrix<f64>,
    basis: DMatrix<f64>,
    pinv: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    condition: f64,
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub resid: DVector<f64>,
}

impl OlsDesign {
    pub fn new(x: DMatrix<f64>) -> Result<Self, DesignError> {
        let (rows, cols) = x.shape();
        if cols == 0 || rows < cols {
            return Err(DesignError::Underdetermined { rows, cols });
        }
        let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
        if norms.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(DesignError::RankDeficient { condition: f64::INFINITY });
        }
        let mut scaled = x.clone();
        for (j, &nj) in norms.iter().enumerate() {
            scaled.column_mut(j).scale_mut(1.0 / nj);
        }
        let svd = scaled.svd(true, true);
        let s = &svd.singular_values;
        let smax = s.max();
        let smin = s.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(smin > RANK_TOL * smax) {
            return Err(DesignError::RankDeficient { condition });
        }
        let u = svd.u.expect("left singular vectors requested");
        let v = svd.v_t.expect("right singular vectors requested").transpose();
        let dinv = DMatrix::from_diagonal(&DVector::from_iterator(
            cols,
            norms.iter().map(|v| 1.0 / v),
        ));
        let sinv = DMatrix::from_diagonal(&s.map(|v| 1.0 / v));
        let v_sinv = &v * &sinv;
        let pinv = &dinv * &v_sinv * u.transpose();
        let xtx_inv = &dinv * &v_sinv * v_sinv.transpose() * &dinv;
        Ok(Self {
            x,
            basis: u,
            pinv,
            xtx_inv,
            condition,
        })
    }

    pub fn nobs(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Orthonormal basis of the column space.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `(X'X)^{-1}` in the original column units.
    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }

    /// Condition number of the column-equilibrated design.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn fit(&self, y: &DVector<f64>) -> OlsFit {
        let coef = &self.pinv * y;
        let fitted = &self.basis * (self.basis.transpose() * y);
        let resid = y - &fitted;
        OlsFit { coef, fitted, resid }
    }

    /// `I - P_X`, the residual-maker matrix.
    pub fn annihilator(&self) -> DMatrix<f64> {
        let n = self.nobs();
        DMatrix::identity(n, n) - &self.basis * self.basis.transpose()
    }
}

/// Column vector of ones.
pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// Horizontally stack columns into a matrix.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
