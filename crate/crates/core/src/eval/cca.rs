use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};

/// Ridge added to covariance diagonals, relative to the mean variance.
pub const CCA_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    /// Canonical correlations, non-increasing, clamped to `[0, 1]`.
    pub correlations: Vec<f64>,
    /// `(p, k)` projection for the first input.
    pub basis_a: Array2<f64>,
    /// `(q, k)` projection for the second input.
    pub basis_b: Array2<f64>,
    /// First input mapped into the coordinates of the second, `(N, q)`.
    /// Not serialised; it is as long as the inputs.
    #[serde(skip, default)]
    pub aligned_a: Array2<f64>,
    /// Pearson correlation between every column of the second input and the
    /// matching column of `aligned_a`.
    pub per_dim_pearson: Vec<f64>,
    /// Some covariance eigenvalue fell below `1e-10` of the largest.
    pub rank_deficient: bool,
}

impl CcaResult {
    pub fn mean(&self) -> f64 {
        self.correlations.iter().sum::<f64>() / self.correlations.len().max(1) as f64
    }
}

pub(crate) fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn centered(a: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = a.mean_axis(Axis(0)).expect("non-empty");
    (&a - &mean, mean)
}

/// Inverse square root of a symmetric positive semi-definite matrix plus a
/// relative ridge. Also reports whether the raw spectrum was degenerate.
fn inv_sqrt(c: &DMatrix<f64>, ridge: f64) -> (DMatrix<f64>, bool) {
    let n = c.nrows();
    let scale = c.trace() / n as f64;
    let eig = SymmetricEigen::new(c.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let deficient = eig.eigenvalues.iter().any(|&v| v <= 1e-10 * max) || max <= 0.0;
    let eps = ridge * scale.max(f64::MIN_POSITIVE);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / (v.max(0.0) + eps).sqrt()));
    (&eig.eigenvectors * d * eig.eigenvectors.transpose(), deficient)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Top-`k` canonical correlations between the rows of `za` `(N, p)` and
/// `zb` `(N, q)` via the SVD of the whitened cross-covariance.
pub fn cca_align(za: ArrayView2<f64>, zb: ArrayView2<f64>, k: usize) -> Result<CcaResult> {
    cca_align_with_ridge(za, zb, k, CCA_RIDGE)
}

pub fn cca_align_with_ridge(za: ArrayView2<f64>, zb: ArrayView2<f64>, k: usize, ridge: f64) -> Result<CcaResult> {
    let (n, p) = za.dim();
    let q = zb.ncols();
    if zb.nrows() != n {
        return Err(SpireError::shape(format!("CCA inputs have {n} and {} rows", zb.nrows())));
    }
    if p == 0 || q == 0 {
        return Err(SpireError::shape("CCA inputs need at least one column"));
    }
    if n <= p.max(q) + 1 {
        return Err(SpireError::Argument(format!("CCA needs more than {} samples, got {n}", p.max(q) + 1)));
    }
    if k == 0 || k > p.min(q) {
        return Err(SpireError::Argument(format!("k = {k} must lie in 1..={}", p.min(q))));
    }
    let (xa, _) = centered(za);
    let (xb, mean_b) = centered(zb);
    let denom = (n - 1) as f64;
    let a = to_dmatrix(xa.view());
    let b = to_dmatrix(xb.view());
    let caa = a.transpose() * &a / denom;
    let cbb = b.transpose() * &b / denom;
    let cab = a.transpose() * &b / denom;
    let (wa, da) = inv_sqrt(&caa, ridge);
    let (wb, db) = inv_sqrt(&cbb, ridge);
    let m = &wa * cab * &wb;
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let order = &order[..k];
    let correlations: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].clamp(0.0, 1.0)).collect();
    let u_k = DMatrix::from_fn(p, k, |r, c| u[(r, order[c])]);
    let v_k = DMatrix::from_fn(q, k, |r, c| v_t[(order[c], r)]);
    let basis_a = &wa * u_k;
    let basis_b = &wb * v_k;

    // Canonical variates of A, scaled by ρ, regressed back into B's coordinates.
    let ua = &a * &basis_a;
    let rho = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(correlations.clone()));
    let back = cbb.clone() * &basis_b;
    let mapped = ua * rho * back.transpose();
    let mut aligned_a = to_array(&mapped);
    aligned_a += &mean_b;
    let per_dim_pearson = (0..q)
        .map(|j| {
            let x: Vec<f64> = aligned_a.column(j).to_vec();
            let y: Vec<f64> = zb.column(j).to_vec();
            pearson(&x, &y)
        })
        .collect();

    Ok(CcaResult {
        correlations,
        basis_a: to_array(&basis_a),
        basis_b: to_array(&basis_b),
        aligned_a,
        per_dim_pearson,
        rank_deficient: da || db,
    })
}
