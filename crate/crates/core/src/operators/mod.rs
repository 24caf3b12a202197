//! Linear maps, whitening and the increment machinery.
//!
//! Every operator used by the solvers is a [`LinearMap`]: something that can
//! apply itself and its transpose to a vector. Compositions are built lazily,
//! so `A ∘ D_θ^{1/2}` or `A ∘ L_θ^†` never materialize a product matrix.

mod graph;
mod pinv;
mod sparse;

use std::sync::Arc;

use nalgebra::{DMatrix, DVectorView, DVectorViewMut};

use crate::error::{Error, Result};

pub use graph::{circulation_residual, EdgeDirection, GridEdge, IncrementGraph};
pub use pinv::{InnerSolver, PinvMap, WeightedIncrements};
pub use sparse::CsrMatrix;

/// Shared handle to a linear map.
pub type Op = Arc<dyn LinearMap>;

/// Abstract matrix `A ∈ R^{m×n}` given by its forward and adjoint action.
///
/// Applications may fail only for maps that hide an inner iterative solve
/// (the pseudo-inverse map); plain matrices never return an error.
pub trait LinearMap: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `y = A x`
    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()>;

    /// `v = Aᵀ u`
    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()>;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("forward input", x.len(), self.cols())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y)?;
        Ok(y)
    }

    fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", u.len(), self.rows())?;
        let mut v = vec![0.0; self.cols()];
        self.apply_adjoint_into(u, &mut v)?;
        Ok(v)
    }

    /// Squared column norms `‖A e_j‖²`, by default through unit-vector probes.
    fn column_norms_sq(&self) -> Result<Vec<f64>> {
        let n = self.cols();
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; self.rows()];
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col)?;
            e[j] = 0.0;
            out.push(col.iter().map(|v| v * v).sum());
        }
        Ok(out)
    }

    /// Materialize as a dense matrix. Intended for tests and small problems.
    fn to_dense(&self) -> Result<DMatrix<f64>> {
        let (m, n) = (self.rows(), self.cols());
        let mut a = DMatrix::zeros(m, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col)?;
            e[j] = 0.0;
            a.column_mut(j).copy_from_slice(&col);
        }
        Ok(a)
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!("{what}: length {got}, expected {want}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Explicit dense matrix.
#[derive(Debug, Clone)]
pub struct DenseMatrix(pub DMatrix<f64>);

impl DenseMatrix {
    pub fn new(a: DMatrix<f64>) -> Self {
        DenseMatrix(a)
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        DenseMatrix(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn into_op(self) -> Op {
        Arc::new(self)
    }
}

impl LinearMap for DenseMatrix {
    fn rows(&self) -> usize {
        self.0.nrows()
    }

    fn cols(&self) -> usize {
        self.0.ncols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let xv = DVectorView::from_slice(x, x.len());
        let mut yv = DVectorViewMut::from_slice(y, self.0.nrows());
        yv.gemv(1.0, &self.0, &xv, 0.0);
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        let uv = DVectorView::from_slice(u, u.len());
        let mut vv = DVectorViewMut::from_slice(v, self.0.ncols());
        vv.gemv_tr(1.0, &self.0, &uv, 0.0);
        Ok(())
    }

    fn column_norms_sq(&self) -> Result<Vec<f64>> {
        Ok(self.0.column_iter().map(|c| c.norm_squared()).collect())
    }

    fn to_dense(&self) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }
}

/// `outer ∘ inner`, i.e. `x ↦ outer(inner(x))`.
pub struct Compose {
    outer: Op,
    inner: Op,
}

impl Compose {
    pub fn new(outer: Op, inner: Op) -> Result<Self> {
        if outer.cols() != inner.rows() {
            return Err(Error::dim(format!(
                "cannot compose {}x{} after {}x{}",
                outer.rows(),
                outer.cols(),
                inner.rows(),
                inner.cols()
            )));
        }
        Ok(Compose { outer, inner })
    }
}

impl LinearMap for Compose {
    fn rows(&self) -> usize {
        self.outer.rows()
    }

    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let mut mid = vec![0.0; self.inner.rows()];
        self.inner.apply_into(x, &mut mid)?;
        self.outer.apply_into(&mid, y)
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        let mut mid = vec![0.0; self.outer.cols()];
        self.outer.apply_adjoint_into(u, &mut mid)?;
        self.inner.apply_adjoint_into(&mid, v)
    }
}

/// Diagonal matrix `diag(d)`.
#[derive(Debug, Clone)]
pub struct Diagonal(pub Vec<f64>);

impl LinearMap for Diagonal {
    fn rows(&self) -> usize {
        self.0.len()
    }

    fn cols(&self) -> usize {
        self.0.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        for ((yi, xi), di) in y.iter_mut().zip(x).zip(&self.0) {
            *yi = di * xi;
        }
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        self.apply_into(u, v)
    }

    fn column_norms_sq(&self) -> Result<Vec<f64>> {
        Ok(self.0.iter().map(|d| d * d).collect())
    }
}

/// `c · A` for a scalar `c`.
pub struct Scaled {
    inner: Op,
    factor: f64,
}

impl Scaled {
    pub fn new(inner: Op, factor: f64) -> Self {
        Scaled { inner, factor }
    }
}

impl LinearMap for Scaled {
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.inner.apply_into(x, y)?;
        y.iter_mut().for_each(|v| *v *= self.factor);
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        self.inner.apply_adjoint_into(u, v)?;
        v.iter_mut().for_each(|w| *w *= self.factor);
        Ok(())
    }

    fn column_norms_sq(&self) -> Result<Vec<f64>> {
        let f2 = self.factor * self.factor;
        Ok(self.inner.column_norms_sq()?.into_iter().map(|c| c * f2).collect())
    }
}

/// `[A; I]`, the operator of the Tikhonov least-squares problem
/// `min ‖b − A w‖² + ‖w‖²`.
pub struct StackedIdentity {
    top: Op,
}

impl StackedIdentity {
    pub fn new(top: Op) -> Self {
        StackedIdentity { top }
    }
}

impl LinearMap for StackedIdentity {
    fn rows(&self) -> usize {
        self.top.rows() + self.top.cols()
    }

    fn cols(&self) -> usize {
        self.top.cols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let m = self.top.rows();
        self.top.apply_into(x, &mut y[..m])?;
        y[m..].copy_from_slice(x);
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        let m = self.top.rows();
        self.top.apply_adjoint_into(&u[..m], v)?;
        v.iter_mut().zip(&u[m..]).for_each(|(vi, ui)| *vi += ui);
        Ok(())
    }
}

/// Whitening with a general noise covariance: returns `(S A, S b)` where
/// `Σ^{-1} = SᵀS`.
///
/// With `Σ = LLᵀ` (Cholesky), `S = L^{-1}` satisfies `SᵀS = L^{-T}L^{-1} = Σ^{-1}`.
pub fn whiten(a: Op, b: &[f64], sigma: &DMatrix<f64>) -> Result<(Op, Vec<f64>)> {
    let m = a.rows();
    check_len("data", b.len(), m)?;
    if sigma.nrows() != m || sigma.ncols() != m {
        return Err(Error::dim(format!(
            "noise covariance is {}x{}, expected {m}x{m}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if (sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSpd);
    }
    let chol = sigma.clone().cholesky().ok_or(Error::NotSpd)?;
    let lower = chol.l();
    let s = lower.try_inverse().ok_or(Error::NotSpd)?;
    let sb = (&s * nalgebra::DVector::from_column_slice(b)).as_slice().to_vec();
    let sa: Op = Arc::new(Compose::new(DenseMatrix(s).into_op(), a)?);
    Ok((sa, sb))
}

/// Whitening for `Σ = σ² I`: division by `σ`.
pub fn whiten_scalar(a: Op, b: &[f64], sigma: f64) -> Result<(Op, Vec<f64>)> {
    if !(sigma > 0.0) {
        return Err(Error::NotSpd);
    }
    check_len("data", b.len(), a.rows())?;
    let wb = b.iter().map(|v| v / sigma).collect();
    Ok((Arc::new(Scaled::new(a, 1.0 / sigma)), wb))
}

/// Prior-whitened operator `A_θ = A D_θ^{1/2}`.
pub fn scale_by_prior(a: Op, theta: &[f64]) -> Result<Op> {
    check_len("theta", theta.len(), a.cols())?;
    if let Some(j) = theta.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::Domain(format!("theta[{j}] = {} is not positive", theta[j])));
    }
    let d = Diagonal(theta.iter().map(|t| t.sqrt()).collect());
    Ok(Arc::new(Compose::new(a, Arc::new(d))?))
}

/// Lower-bidiagonal first difference with the `x_0 = 0` convention.
#[derive(Debug, Clone, Copy)]
pub struct FirstDifference(pub usize);

/// Cumulative summation, the inverse of [`FirstDifference`].
#[derive(Debug, Clone, Copy)]
pub struct CumulativeSum(pub usize);

impl LinearMap for FirstDifference {
    fn rows(&self) -> usize {
        self.0
    }

    fn cols(&self) -> usize {
        self.0
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let mut prev = 0.0;
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi = xi - prev;
            prev = xi;
        }
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        let n = self.0;
        for j in 0..n {
            let next = if j + 1 < n { u[j + 1] } else { 0.0 };
            v[j] = u[j] - next;
        }
        Ok(())
    }
}

impl LinearMap for CumulativeSum {
    fn rows(&self) -> usize {
        self.0
    }

    fn cols(&self) -> usize {
        self.0
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let mut acc = 0.0;
        for (yi, &xi) in y.iter_mut().zip(x) {
            acc += xi;
            *yi = acc;
        }
        Ok(())
    }

    // Cᵀ sums from the tail.
    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        let mut acc = 0.0;
        for j in (0..self.0).rev() {
            acc += u[j];
            v[j] = acc;
        }
        Ok(())
    }
}

/// The 1D difference operator `L` and its inverse `C = L^{-1}`.
pub fn diff_1d(n: usize) -> (Op, Op) {
    (Arc::new(FirstDifference(n)), Arc::new(CumulativeSum(n)))
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn random_dense(seed: u64, m: usize, n: usize) -> DMatrix<f64> {
        let mut r = rng(seed);
        DMatrix::from_fn(m, n, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0))
    }

    #[test]
    fn every_basic_map_is_adjoint_consistent() {
        let a: Op = DenseMatrix(random_dense(1, 6, 9)).into_op();
        let maps: Vec<Op> = vec![
            a.clone(),
            Arc::new(Diagonal(vec![1.0, 2.0, -3.0, 0.5])),
            Arc::new(Scaled::new(a.clone(), 0.3)),
            Arc::new(FirstDifference(17)),
            Arc::new(CumulativeSum(17)),
            scale_by_prior(a.clone(), &[0.1, 1.0, 2.0, 3.0, 0.2, 0.5, 4.0, 1e-3, 7.0]).unwrap(),
            Arc::new(Compose::new(a.clone(), Arc::new(CumulativeSum(9))).unwrap()),
            Arc::new(StackedIdentity::new(a.clone())),
        ];
        for (i, m) in maps.iter().enumerate() {
            let d = adjoint_defect(m.as_ref(), 100 + i as u64);
            assert!(d <= 1e-10, "map {i}: defect {d}");
        }
    }

    #[test]
    fn compose_rejects_mismatched_dimensions() {
        let a = DenseMatrix(random_dense(2, 3, 4)).into_op();
        let b = DenseMatrix(random_dense(3, 5, 2)).into_op();
        assert!(matches!(Compose::new(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn whiten_identity_is_noop() {
        let a = DenseMatrix(random_dense(3, 4, 5)).into_op();
        let b = vec![1.0, -2.0, 3.0, 0.5];
        let (wa, wb) = whiten(a.clone(), &b, &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(wb, b);
        assert!((wa.to_dense().unwrap() - a.to_dense().unwrap()).amax() < 1e-15);
    }

    #[test]
    fn whiten_scalar_covariance_divides_by_sigma() {
        let a = DenseMatrix(random_dense(4, 4, 5)).into_op();
        let b = vec![1.0, -2.0, 3.0, 0.5];
        let sigma = 0.25;
        let cov = DMatrix::identity(4, 4) * (sigma * sigma);
        let (wa, wb) = whiten(a.clone(), &b, &cov).unwrap();
        let (sa, sb) = whiten_scalar(a.clone(), &b, sigma).unwrap();
        for (x, y) in wb.iter().zip(&sb) {
            assert!((x - y).abs() < 1e-12);
        }
        let expect = a.to_dense().unwrap() / sigma;
        assert!((wa.to_dense().unwrap() - &expect).amax() < 1e-12);
        assert!((sa.to_dense().unwrap() - &expect).amax() < 1e-12);
    }

    #[test]
    fn whiten_factor_inverts_covariance() {
        // S Σ Sᵀ = I  ⇔  SᵀS Σ = I
        let g = random_dense(5, 4, 4);
        let cov = &g * g.transpose() + DMatrix::identity(4, 4) * 0.5;
        let (sa, _) = whiten(DenseMatrix::identity(4).into_op(), &[0.0; 4], &cov).unwrap();
        let s = sa.to_dense().unwrap();
        let prod = s.transpose() * &s * &cov;
        assert!((prod - DMatrix::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn whiten_rejects_indefinite_covariance() {
        let a = DenseMatrix::identity(2).into_op();
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(whiten(a, &[0.0, 0.0], &cov), Err(Error::NotSpd)));
    }

    #[test]
    fn scale_by_prior_matches_dense_materialization() {
        let a = random_dense(6, 6, 9);
        let theta: Vec<f64> = (0..9).map(|j| 0.1 + j as f64 * 0.4).collect();
        let at = scale_by_prior(DenseMatrix(a.clone()).into_op(), &theta).unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            9,
            theta.iter().map(|t| t.sqrt()),
        ));
        let dense = &a * &d;
        let mut r = rng(7);
        let u = random_vec(&mut r, 6);
        let got = at.apply_adjoint(&u).unwrap();
        let want = dense.transpose() * nalgebra::DVector::from_column_slice(&u);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-13);
        }
        let norms = at.column_norms_sq().unwrap();
        for (j, c) in a.column_iter().enumerate() {
            assert!((norms[j] - theta[j] * c.norm_squared()).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_by_prior_unit_theta_is_identity_action() {
        let a = DenseMatrix(random_dense(8, 3, 4)).into_op();
        let at = scale_by_prior(a.clone(), &[1.0; 4]).unwrap();
        assert_eq!(at.to_dense().unwrap(), a.to_dense().unwrap());
    }

    #[test]
    fn scale_by_prior_rejects_nonpositive_theta() {
        let a = DenseMatrix::identity(2).into_op();
        assert!(matches!(scale_by_prior(a, &[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn diff_1d_examples() {
        let (l, c) = diff_1d(3);
        assert_eq!(l.apply(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let (_, c4) = diff_1d(4);
        assert_eq!(c4.apply(&[1.0, 0.0, -1.0, 0.0]).unwrap(), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(c.rows(), 3);
    }

    #[test]
    fn diff_1d_round_trip() {
        let (l, c) = diff_1d(100);
        let mut r = rng(11);
        let z = random_vec(&mut r, 100);
        let back = l.apply(&c.apply(&z).unwrap()).unwrap();
        let fwd = c.apply(&l.apply(&z).unwrap()).unwrap();
        for i in 0..100 {
            assert!((back[i] - z[i]).abs() <= 1e-14);
            assert!((fwd[i] - z[i]).abs() <= 1e-14);
        }
    }
}
