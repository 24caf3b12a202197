//! CGLS with the reduced-Krylov-subspace (RKS) early stopping rule.
//!
//! The iterate `w_k` minimizes `‖b − A w‖` over
//! `𝒦_k = span{(AᵀA)^j Aᵀb : 0 ≤ j < k}`. The solve stops at the first `k`
//! such that the *next* iterate satisfies both
//!
//! ```text
//! ‖b − A w_{k+1}‖ ≤ target      and      G(w_{k+1}) > τ G(w_k),
//! G(w) = ‖b − A w‖² + ‖w‖²,
//! ```
//!
//! and returns `w_k`: once the data are explained to the noise level, a jump
//! in `G` means the next step starts fitting noise. [`StopCombination::Either`]
//! instead stops at whichever test fires first.

use crate::error::{Error, Result};
use crate::operators::{dot, norm, LinearMap};

/// `‖Aᵀr_k‖ ≤ EXACT_TOL · ‖Aᵀb‖` counts as exact convergence.
pub const EXACT_TOL: f64 = 1e-13;

/// How the discrepancy test and the `G` safeguard combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopCombination {
    /// Stop when `w_{k+1}` meets the discrepancy *and* `G` jumps; return `w_k`.
    #[default]
    Both,
    /// Stop when `w_{k+1}` meets the discrepancy (return `w_{k+1}`) or when
    /// `G` jumps (return `w_k`), whichever happens first.
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    /// Discrepancy level, `√m` for whitened noise. Zero disables the rule.
    pub discrepancy_target: f64,
    /// Safeguard factor `τ > 1`.
    pub tau: f64,
    pub max_iters: usize,
    pub combination: StopCombination,
    /// Full reorthogonalization of the normal-equation residuals.
    pub reorthogonalize: bool,
}

impl StoppingRule {
    pub fn new(discrepancy_target: f64, tau: f64, max_iters: usize) -> Result<Self> {
        if !(tau > 1.0) {
            return Err(Error::InvalidModel(format!("tau must exceed 1, got {tau}")));
        }
        if !(discrepancy_target >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "discrepancy target must be nonnegative, got {discrepancy_target}"
            )));
        }
        Ok(StoppingRule {
            discrepancy_target,
            tau,
            max_iters,
            combination: StopCombination::Both,
            reorthogonalize: false,
        })
    }

    /// `√m` target, `τ = 1.1`, at most `min(m, n)` steps.
    pub fn whitened(m: usize, n: usize) -> Self {
        StoppingRule {
            discrepancy_target: (m as f64).sqrt(),
            tau: 1.1,
            max_iters: m.min(n),
            combination: StopCombination::Both,
            reorthogonalize: false,
        }
    }

    /// Run to (numerical) convergence of the plain least-squares problem.
    pub fn unrestricted(max_iters: usize) -> Self {
        StoppingRule {
            discrepancy_target: 0.0,
            tau: 1.1,
            max_iters,
            combination: StopCombination::Both,
            reorthogonalize: false,
        }
    }

    pub fn with_combination(mut self, c: StopCombination) -> Self {
        self.combination = c;
        self
    }

    pub fn with_reorthogonalization(mut self, on: bool) -> Self {
        self.reorthogonalize = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Discrepancy reached (with `G` jumping, under [`StopCombination::Both`]).
    Discrepancy,
    /// `G` jumped by more than `τ` before the discrepancy was reached.
    Safeguard,
    MaxIters,
    ExactConvergence,
    /// The search direction collapsed before any other condition fired.
    Breakdown,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::Safeguard => "safeguard",
            StopReason::MaxIters => "max_iters",
            StopReason::ExactConvergence => "exact",
            StopReason::Breakdown => "breakdown",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CglsResult {
    pub w: Vec<f64>,
    /// Krylov dimension of the returned iterate.
    pub iters: usize,
    /// `‖b − A w_k‖` for every computed iterate, starting at `k = 0`.
    pub residual_history: Vec<f64>,
    /// `G(w_k)` for every computed iterate.
    pub g_history: Vec<f64>,
    pub stop_reason: StopReason,
}

/// `G(w) = ‖b − A w‖² + ‖w‖²`.
pub fn g_functional(op: &dyn LinearMap, b: &[f64], w: &[f64]) -> Result<f64> {
    let aw = op.apply(w)?;
    let r2: f64 = b.iter().zip(&aw).map(|(bi, ai)| (bi - ai).powi(2)).sum();
    Ok(r2 + dot(w, w))
}

pub fn cgls(op: &dyn LinearMap, b: &[f64], rule: &StoppingRule) -> Result<CglsResult> {
    let (m, n) = (op.rows(), op.cols());
    if b.len() != m {
        return Err(Error::dim(format!("data has length {}, operator has {m} rows", b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("data vector is not finite".into()));
    }

    let mut w = vec![0.0; n];
    let mut w_prev = w.clone();
    let mut r = b.to_vec();
    let mut s = op.apply_adjoint(&r)?;
    let s0_norm = norm(&s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; m];

    let rho0 = norm(&r);
    let mut residual_history = vec![rho0];
    let mut g_history = vec![rho0 * rho0];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    if rule.reorthogonalize && s0_norm > 0.0 {
        basis.push(s.iter().map(|v| v / s0_norm).collect());
    }

    let finish = |w: Vec<f64>, iters, rh, gh, reason| CglsResult {
        w,
        iters,
        residual_history: rh,
        g_history: gh,
        stop_reason: reason,
    };

    if s0_norm == 0.0 {
        return Ok(finish(w, 0, residual_history, g_history, StopReason::ExactConvergence));
    }

    for k in 0..rule.max_iters {
        op.apply_into(&p, &mut q)?;
        let delta = dot(&q, &q);
        if !(delta > f64::MIN_POSITIVE) || !delta.is_finite() {
            return Ok(finish(w, k, residual_history, g_history, StopReason::Breakdown));
        }
        let alpha = gamma / delta;
        w_prev.copy_from_slice(&w);
        for (wi, pi) in w.iter_mut().zip(&p) {
            *wi += alpha * pi;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        let rho = norm(&r);
        let g = rho * rho + dot(&w, &w);
        residual_history.push(rho);
        g_history.push(g);

        let fits = rho <= rule.discrepancy_target;
        let jumps = g > rule.tau * g_history[k];
        match rule.combination {
            StopCombination::Both if fits && jumps => {
                return Ok(finish(w_prev, k, residual_history, g_history, StopReason::Discrepancy));
            }
            StopCombination::Either if jumps => {
                return Ok(finish(w_prev, k, residual_history, g_history, StopReason::Safeguard));
            }
            StopCombination::Either if fits => {
                return Ok(finish(w, k + 1, residual_history, g_history, StopReason::Discrepancy));
            }
            _ => {}
        }

        op.apply_adjoint_into(&r, &mut s)?;
        if rule.reorthogonalize {
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(&s, v);
                    s.iter_mut().zip(v).for_each(|(si, vi)| *si -= c * vi);
                }
            }
        }
        let gamma_new = dot(&s, &s);
        if gamma_new.sqrt() <= EXACT_TOL * s0_norm {
            return Ok(finish(w, k + 1, residual_history, g_history, StopReason::ExactConvergence));
        }
        if rule.reorthogonalize {
            let sn = gamma_new.sqrt();
            basis.push(s.iter().map(|v| v / sn).collect());
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
    }
    let iters = residual_history.len() - 1;
    Ok(finish(w, iters, residual_history, g_history, StopReason::MaxIters))
}
