//! Shrinkage operators and the SVD plumbing behind them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SVD_MAX_ITER: usize = 10_000;

/// Scalar soft-threshold `sign(x)·max(|x| − λ, 0)`.
#[inline]
pub fn shrink(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Entrywise soft-thresholding, the prox of `λ‖·‖₁`.
pub fn soft_threshold(x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "soft-threshold level must be nonnegative, got {lambda}"
        )));
    }
    Ok(x.map(|v| shrink(v, lambda)))
}

/// Thin SVD: `u` is `rows × r`, `v` is `cols × r`, `r = min(rows, cols)`,
/// singular values in nonincreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.column_iter_mut().zip(self.singular_values.iter()) {
            col *= *s;
        }
        us * self.v.transpose()
    }
}

/// Thin SVD of `x`.
///
/// Strongly rectangular inputs (one side at least twice the other) go
/// through the eigendecomposition of the small Gram matrix: with
/// `XᵀX = V Λ Vᵀ`, each `σᵢ = ‖X vᵢ‖` and `uᵢ = X vᵢ / σᵢ`. Left vectors
/// of numerically zero singular values are returned as zero columns.
pub fn economy_svd(x: &DMatrix<f64>) -> Result<Svd> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input".into()));
    }
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    if rows >= 2 * cols {
        gram_svd(x)
    } else if cols >= 2 * rows {
        let t = gram_svd(&x.transpose())?;
        Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    } else {
        direct_svd(x)
    }
}

fn gram_svd(x: &DMatrix<f64>) -> Result<Svd> {
    let cols = x.ncols();
    let gram = tr_mul(x, x);
    let eig = gram
        .try_symmetric_eigen(f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::NoConvergence("Gram eigendecomposition"))?;

    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let v = DMatrix::from_fn(cols, cols, |r, c| eig.eigenvectors[(r, order[c])]);

    let mut u = x * &v;
    let mut sigma = DVector::zeros(cols);
    for (i, mut col) in u.column_iter_mut().enumerate() {
        sigma[i] = col.norm();
        if sigma[i] > 0.0 {
            col /= sigma[i];
        }
    }
    // Rounding leaves O(eps·σ_max) residue in null directions.
    let floor = sigma.max() * f64::EPSILON * (8 * x.nrows().max(cols)) as f64;
    for (i, mut col) in u.column_iter_mut().enumerate() {
        if sigma[i] <= floor {
            sigma[i] = 0.0;
            col.fill(0.0);
        }
    }
    sort_triplets(u, sigma, v)
}

// nalgebra's bidiagonal SVD returns inconsistent factors for some
// rank-deficient square-ish inputs, so this path goes through faer.
fn direct_svd(x: &DMatrix<f64>) -> Result<Svd> {
    let (rows, cols) = x.shape();
    let r = rows.min(cols);
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| x[(i, j)]);
    let svd = a.thin_svd().map_err(|_| Error::NoConvergence("SVD"))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let u = DMatrix::from_fn(rows, r, |i, j| fu[(i, j)]);
    let v = DMatrix::from_fn(cols, r, |i, j| fv[(i, j)]);
    let sigma = DVector::from_fn(r, |i, _| fs[i]);
    sort_triplets(u, sigma, v)
}

fn sort_triplets(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>) -> Result<Svd> {
    let r = sigma.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return Ok(Svd {
            u,
            singular_values: sigma,
            v,
        });
    }
    Ok(Svd {
        u: u.select_columns(&order),
        singular_values: DVector::from_iterator(r, order.iter().map(|&i| sigma[i])),
        v: v.select_columns(&order),
    })
}

/// Result of singular value thresholding.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub matrix: DMatrix<f64>,
    /// Number of singular values that survived.
    pub rank: usize,
    /// Largest input singular value.
    pub sigma_max: f64,
    /// Surviving singular values after shrinkage, nonincreasing.
    pub shrunk: Vec<f64>,
}

impl Thresholded {
    pub fn nuclear_norm(&self) -> f64 {
        self.shrunk.iter().sum()
    }
}

/// `SVT_η(X) = U S_η(Σ) Vᵀ`, the prox of `η‖·‖_*`.
pub fn svt(x: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    svt_with_rank(x, eta).map(|t| t.matrix)
}

pub fn svt_with_rank(x: &DMatrix<f64>, eta: f64) -> Result<Thresholded> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "SVT level must be nonnegative, got {eta}"
        )));
    }
    let svd = economy_svd(x)?;
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep = svd.singular_values.iter().take_while(|&&s| s > eta).count();
    if keep == 0 {
        return Ok(Thresholded {
            matrix: DMatrix::zeros(x.nrows(), x.ncols()),
            rank: 0,
            sigma_max,
            shrunk: Vec::new(),
        });
    }
    let mut us = svd.u.columns(0, keep).into_owned();
    for (i, mut col) in us.column_iter_mut().enumerate() {
        col *= svd.singular_values[i] - eta;
    }
    let matrix = us * svd.v.columns(0, keep).transpose();
    Ok(Thresholded {
        matrix,
        rank: keep,
        sigma_max,
        shrunk: svd
            .singular_values
            .iter()
            .take(keep)
            .map(|s| s - eta)
            .collect(),
    })
}

/// `Σ σᵢ`. Returns NaN when the SVD cannot be computed (non-finite input).
pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    match economy_svd(x) {
        Ok(svd) => svd.singular_values.sum(),
        Err(_) => f64::NAN,
    }
}

/// `AᵀB` through a blocked kernel that reads `A` transposed in place.
/// nalgebra's `tr_mul` forms every entry as a separate dot product, which
/// is several times slower on tall operands.
pub fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = a.shape();
    let (mb, n) = b.shape();
    assert_eq!(m, mb, "tr_mul: {m} rows against {mb}");
    let mut c = DMatrix::zeros(k, n);
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    // SAFETY: all three buffers are contiguous column-major storage of the
    // stated shapes, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            m as isize,
            1,
            b.as_ptr(),
            1,
            m as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            k as isize,
        );
    }
    c
}

/// Largest singular value estimated by power iteration on `XᵀX`.
///
/// The start vector is fixed, so the estimate is deterministic.
pub fn spectral_norm(x: &DMatrix<f64>, iterations: usize) -> f64 {
    let cols = x.ncols();
    if cols == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    let norm = v.norm();
    v /= norm;
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        let xv = x * &v;
        let mut w = x.tr_mul(&xv);
        let wn = w.norm();
        if wn == 0.0 || !wn.is_finite() {
            return xv.norm();
        }
        w /= wn;
        let next = (x * &w).norm();
        let done = (next - sigma).abs() <= 1e-10 * next;
        sigma = next;
        v = w;
        if done {
            break;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn soft_threshold_arithmetic() {
        let x = DMatrix::from_row_slice(1, 2, &[1.2, -0.3]);
        let s = soft_threshold(&x, 0.5).unwrap();
        assert!((s[0] - 0.7).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert_eq!(soft_threshold(&x, 0.0).unwrap(), x);
        assert!(soft_threshold(&x, -0.1).is_err());
        assert!(soft_threshold(&x, f64::NAN).is_err());
    }

    #[test]
    fn svt_basic_cases() {
        assert_eq!(
            svt(&DMatrix::zeros(3, 2), 0.4).unwrap(),
            DMatrix::zeros(3, 2)
        );
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&d, 2.0).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((out - want).norm() < 1e-14);
        assert!(svt(&d, -1.0).is_err());
    }

    #[test]
    fn svd_of_identity_and_rank_one() {
        let s = economy_svd(&DMatrix::identity(3, 3)).unwrap();
        assert!((s.singular_values.clone() - DVector::from_element(3, 1.0)).norm() < 1e-14);

        let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 3.0, 1.0, 2.0]);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let x = &u * v.transpose();
        for m in [x.clone(), x.transpose()] {
            let s = economy_svd(&m).unwrap();
            assert!((s.singular_values[0] - u.norm() * v.norm()).abs() < 1e-12);
            assert!(s.singular_values.iter().skip(1).all(|&z| z.abs() < 1e-12));
        }
    }

    #[test]
    fn tall_reconstruction_error() {
        let x = random(500, 20, 1);
        let s = economy_svd(&x).unwrap();
        assert_eq!(s.rank(), 20);
        assert!((s.recompose() - &x).norm() / x.norm() <= 1e-10);
        let wide = economy_svd(&x.transpose()).unwrap();
        assert!((wide.recompose() - x.transpose()).norm() / x.norm() <= 1e-10);
        assert!((wide.singular_values - s.singular_values).norm() < 1e-10);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut x = random(4, 3, 2);
        x[(1, 1)] = f64::INFINITY;
        assert!(matches!(economy_svd(&x), Err(Error::NonFinite(_))));
        assert!(svt(&x, 0.1).is_err());
        assert!(nuclear_norm(&x).is_nan());
    }

    #[test]
    fn nuclear_norm_values() {
        assert_eq!(nuclear_norm(&DMatrix::zeros(4, 3)), 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((nuclear_norm(&d) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn nuclear_norm_matches_trace_sqrt_gram() {
        let x = random(7, 5, 11);
        let eig = x.tr_mul(&x).symmetric_eigen();
        let oracle: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
        assert!((nuclear_norm(&x) - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn power_iteration_estimate() {
        let x = random(60, 9, 5);
        let exact = economy_svd(&x).unwrap().singular_values[0];
        assert!((spectral_norm(&x, 500) - exact).abs() < 1e-6 * exact);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3), 10), 0.0);
    }
}
