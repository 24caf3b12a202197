//! Application of `L_θ^†` and `(L_θ^†)ᵀ` for `L_θ = D_θ^{-1/2} L`.
//!
//! Both reduce to solves with the weighted graph matrix
//! `N = L_θᵀ L_θ = Lᵀ D_θ^{-1} L`, which is symmetric positive definite when
//! `L` has full column rank:
//!
//! * `L_θ^† β = N^{-1} L_θᵀ β`
//! * `(L_θ^†)ᵀ v = L_θ N^{-1} v`
//!
//! `N` is fixed for the whole inner Krylov solve of one outer iteration, so
//! the direct solver factors it once.

use std::sync::Arc;

use super::graph::IncrementGraph;
use super::{check_len, dot, norm, LinearMap};
use crate::error::{Error, Result};

/// How systems with `N = L_θᵀ L_θ` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InnerSolver {
    /// Banded Cholesky in the natural (row-major) node ordering.
    #[default]
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Cg { tol: f64, max_iters: usize },
}

impl InnerSolver {
    pub fn cg_default() -> Self {
        InnerSolver::Cg {
            tol: 1e-10,
            max_iters: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i][i-bw..=i] at offsets 0..=bw.
    band: Vec<f64>,
}

impl BandedCholesky {
    fn factor(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                if j > k0 {
                    let ri = &band[i * w + (k0 + bw - i)..i * w + (j + bw - i)];
                    let rj = &band[j * w + (k0 + bw - j)..j * w + bw];
                    s -= dot(ri, rj);
                }
                if i == j {
                    let orig = band[i * w + bw];
                    if !(s > 1e-13 * orig.abs()) || !s.is_finite() {
                        return Err(Error::RankDeficient(format!(
                            "pivot {s:e} at node {i} of the weighted normal matrix"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let row = &self.band[i * w + (j0 + bw - i)..i * w + bw];
            let s = dot(row, &y[j0..i]);
            y[i] = (y[i] - s) / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.band[i * w + bw];
            let yi = y[i];
            let j0 = i.saturating_sub(bw);
            for (k, yk) in (j0..i).zip(y[j0..i].iter_mut()) {
                *yk -= self.band[i * w + (k + bw - i)] * yi;
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
enum NormalSolve {
    Direct(BandedCholesky),
    Cg {
        inv_diag: Vec<f64>,
        tol: f64,
        max_iters: usize,
    },
}

/// `L_θ = D_θ^{-1/2} L` for a fixed variance vector on the edges, with the
/// normal matrix prepared for repeated solves.
#[derive(Debug, Clone)]
pub struct WeightedIncrements {
    graph: Arc<IncrementGraph>,
    inv_sqrt_theta: Vec<f64>,
    solve: NormalSolve,
}

impl WeightedIncrements {
    pub fn new(graph: Arc<IncrementGraph>, theta: &[f64], solver: InnerSolver) -> Result<Self> {
        check_len("edge variances", theta.len(), graph.n_e())?;
        if let Some(j) = theta.iter().position(|t| !(*t > 0.0)) {
            return Err(Error::Domain(format!("theta[{j}] = {} is not positive", theta[j])));
        }
        let inv_sqrt_theta: Vec<f64> = theta.iter().map(|t| 1.0 / t.sqrt()).collect();
        let n = graph.n_v();
        let l = graph.l();

        let solve = match solver {
            InnerSolver::Direct => {
                let bw = graph.normal_bandwidth();
                let w = bw + 1;
                let mut band = vec![0.0; n * w];
                for (e, s) in inv_sqrt_theta.iter().enumerate() {
                    let wt = s * s;
                    let ends: Vec<usize> = l.row(e).map(|(c, _)| c).collect();
                    for &a in &ends {
                        band[a * w + bw] += wt;
                    }
                    if let [a, b] = ends.as_slice() {
                        let (hi, lo) = if a > b { (*a, *b) } else { (*b, *a) };
                        // L entries of an edge have opposite signs.
                        band[hi * w + (lo + bw - hi)] -= wt;
                    }
                }
                NormalSolve::Direct(BandedCholesky::factor(n, bw, band)?)
            }
            InnerSolver::Cg { tol, max_iters } => {
                let mut diag = vec![0.0; n];
                for (e, s) in inv_sqrt_theta.iter().enumerate() {
                    for (c, v) in l.row(e) {
                        diag[c] += v * v * s * s;
                    }
                }
                if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
                    return Err(Error::RankDeficient(format!("node {i} has no incident edge")));
                }
                NormalSolve::Cg {
                    inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
                    tol,
                    max_iters: if max_iters == 0 { 20 * n.max(50) } else { max_iters },
                }
            }
        };
        Ok(WeightedIncrements {
            graph,
            inv_sqrt_theta,
            solve,
        })
    }

    pub fn graph(&self) -> &Arc<IncrementGraph> {
        &self.graph
    }

    pub fn n_v(&self) -> usize {
        self.graph.n_v()
    }

    pub fn n_e(&self) -> usize {
        self.graph.n_e()
    }

    /// `L_θ α`
    pub fn l_theta(&self, alpha: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_e()];
        self.graph.l().matvec(alpha, &mut y);
        y.iter_mut().zip(&self.inv_sqrt_theta).for_each(|(v, s)| *v *= s);
        y
    }

    /// `L_θᵀ β`
    pub fn l_theta_t(&self, beta: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = beta.iter().zip(&self.inv_sqrt_theta).map(|(b, s)| b * s).collect();
        let mut out = vec![0.0; self.n_v()];
        self.graph.l().matvec_transpose(&scaled, &mut out);
        out
    }

    fn normal_apply(&self, x: &[f64]) -> Vec<f64> {
        self.l_theta_t(&self.l_theta(x))
    }

    fn normal_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.solve {
            NormalSolve::Direct(chol) => Ok(chol.solve(rhs)),
            NormalSolve::Cg {
                inv_diag,
                tol,
                max_iters,
            } => self.pcg(rhs, inv_diag, *tol, *max_iters),
        }
    }

    fn pcg(&self, rhs: &[f64], inv_diag: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        let rhs_norm = norm(rhs);
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..max_iters {
            let q = self.normal_apply(&p);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::RankDeficient("non-positive curvature in inner CG".into()));
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if norm(&r) <= tol * rhs_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NonConvergence {
            what: "inner normal-equations CG",
            iters: max_iters,
        })
    }

    /// `α = L_θ^† β`, the least-squares solution of `L_θ α = β`.
    pub fn apply_pinv(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len("whitened increments", beta.len(), self.n_e())?;
        self.normal_solve(&self.l_theta_t(beta))
    }

    /// `(L_θ^†)ᵀ v = L_θ (L_θᵀ L_θ)^{-1} v`.
    pub fn apply_pinv_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("nodal vector", v.len(), self.n_v())?;
        if v.iter().all(|&x| x == 0.0) {
            return Ok(vec![0.0; self.n_e()]);
        }
        let w = self.normal_solve(v)?;
        Ok(self.l_theta(&w))
    }
}

/// `L_θ^†` as a linear map `R^{n_e} → R^{n_v}`.
#[derive(Debug, Clone)]
pub struct PinvMap(pub Arc<WeightedIncrements>);

impl LinearMap for PinvMap {
    fn rows(&self) -> usize {
        self.0.n_v()
    }

    fn cols(&self) -> usize {
        self.0.n_e()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(&self.0.apply_pinv(x)?);
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        v.copy_from_slice(&self.0.apply_pinv_adjoint(u)?);
        Ok(())
    }
}
