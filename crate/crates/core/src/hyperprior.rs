//! Generalized gamma hypermodel `π(θ | r, β, ϑ)`.
//!
//! Conventions used throughout:
//!
//! * `η = rβ − 3/2`
//! * scaled variables `ξ = θ/ϑ`, `z = x/√ϑ`
//! * per-component penalty
//!   `p(x, θ) = x²/(2θ) − η log(θ/ϑ) + (θ/ϑ)^r`
//! * the θ-update `g(x)` is the positive root of
//!   `−x²/(2θ²) − η/θ + r θ^{r−1}/ϑ^r = 0`.

use crate::error::{Error, Result};
use crate::operators::LinearMap;

/// Relative floor applied to every θ-update: `θ_min = THETA_FLOOR · max_j ϑ_j`.
pub const THETA_FLOOR: f64 = 1e-16;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_BUDGET: usize = 100;

/// `η = rβ − 3/2`.
pub fn eta(r: f64, beta: f64) -> f64 {
    r * beta - 1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convexity {
    /// `r ≥ 1`: the Gibbs energy is convex everywhere.
    Global,
    /// `r < 1`: convex only where `θ_j < θ̄_j`.
    Local,
}

/// Hyperparameters `(r, β, ϑ)` with cached `η`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperModel {
    r: f64,
    beta: f64,
    vartheta: Vec<f64>,
    eta: f64,
    theta_min: f64,
}

impl HyperModel {
    pub fn new(r: f64, beta: f64, vartheta: Vec<f64>) -> Result<Self> {
        if r == 0.0 || !r.is_finite() {
            return Err(Error::InvalidModel(format!("r must be finite and nonzero, got {r}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidModel(format!("beta must be positive, got {beta}")));
        }
        if vartheta.is_empty() {
            return Err(Error::InvalidModel("vartheta is empty".into()));
        }
        if let Some(j) = vartheta.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "vartheta[{j}] = {} is not positive",
                vartheta[j]
            )));
        }
        let eta = eta(r, beta);
        // For r > 0 the background update g(0) = ϑ (η/r)^{1/r} needs η ≥ 0.
        if r > 0.0 && eta < 0.0 {
            return Err(Error::InvalidModel(format!(
                "r = {r} > 0 requires eta = r*beta - 3/2 >= 0, got {eta}"
            )));
        }
        let theta_min = THETA_FLOOR * vartheta.iter().cloned().fold(0.0, f64::max);
        Ok(HyperModel {
            r,
            beta,
            vartheta,
            eta,
            theta_min,
        })
    }

    /// Build from `(r, η)` instead of `(r, β)`.
    pub fn from_eta(r: f64, eta: f64, vartheta: Vec<f64>) -> Result<Self> {
        if r == 0.0 {
            return Err(Error::InvalidModel("r must be nonzero".into()));
        }
        let beta = (eta + 1.5) / r;
        let mut m = Self::new(r, beta, vartheta)?;
        // keep the requested η bit-exact rather than round-tripping through β
        m.eta = eta;
        Ok(m)
    }

    /// Same `(r, β)` with a uniform scale `ϑ_j = v` on `n` components.
    pub fn uniform(r: f64, beta: f64, v: f64, n: usize) -> Result<Self> {
        Self::new(r, beta, vec![v; n])
    }

    pub fn with_vartheta(&self, vartheta: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(self.r, self.beta, vartheta)?;
        m.eta = self.eta;
        Ok(m)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn vartheta(&self) -> &[f64] {
        &self.vartheta
    }

    pub fn len(&self) -> usize {
        self.vartheta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vartheta.is_empty()
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn convexity(&self) -> Convexity {
        if self.r >= 1.0 {
            Convexity::Global
        } else {
            Convexity::Local
        }
    }

    /// Scaled background update `φ(0) = (η/r)^{1/r}`.
    pub fn xi_at_zero(&self) -> f64 {
        let base = self.eta / self.r;
        if base > 0.0 {
            base.powf(1.0 / self.r)
        } else {
            0.0
        }
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.vartheta.len() {
            return Err(Error::dim(format!(
                "component {j} out of range for {} components",
                self.vartheta.len()
            )));
        }
        Ok(())
    }

    /// IAS θ-update `g_j(x_j)`, floored at `θ_min`.
    pub fn theta_update(&self, x: f64, j: usize) -> Result<f64> {
        self.check_index(j)?;
        if !x.is_finite() {
            return Err(Error::Domain(format!("x[{j}] = {x} is not finite")));
        }
        let vt = self.vartheta[j];
        let xi = solve_scaled(self.r, self.eta, x * x / vt)?;
        Ok((vt * xi).max(self.theta_min))
    }

    /// `g` applied componentwise.
    pub fn theta_update_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::dim(format!("x has {} entries, model has {}", x.len(), self.len())));
        }
        x.iter().enumerate().map(|(j, &xj)| self.theta_update(xj, j)).collect()
    }

    /// Convexity bound `θ̄_j = ϑ_j (η / (r|r−1|))^{1/r}` of a greedy model.
    pub fn convexity_bound(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.vartheta[j] * self.scaled_convexity_bound()?)
    }

    /// `θ̄_j / ϑ_j`, which depends only on `(r, η)`.
    pub fn scaled_convexity_bound(&self) -> Result<f64> {
        let r = self.r;
        if r >= 1.0 {
            return Err(Error::InvalidModel(format!(
                "r = {r} >= 1 is globally convex; no convexity bound"
            )));
        }
        if r > 0.0 && self.eta <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "0 < r < 1 requires eta > 0, got {}",
                self.eta
            )));
        }
        let base = self.eta / (r * (r - 1.0).abs());
        if !(base > 0.0) {
            return Err(Error::InvalidModel(format!("nonpositive bound base {base}")));
        }
        Ok(base.powf(1.0 / r))
    }

    /// Signal bound `x̄_j = g^{-1}(θ̄_j)`, from
    /// `x̄² = 2r θ̄^{r+1}/ϑ^r − 2η θ̄`.
    pub fn x_bound(&self, j: usize) -> Result<f64> {
        let xi_bar = self.scaled_convexity_bound()?;
        self.check_index(j)?;
        let r = self.r;
        let z2 = 2.0 * r * xi_bar.powf(r + 1.0) - 2.0 * self.eta * xi_bar;
        if !(z2 >= 0.0) {
            return Err(Error::InvalidModel(format!("negative radicand {z2} in x bound")));
        }
        Ok((z2 * self.vartheta[j]).sqrt())
    }

    /// Componentwise penalty `p(x_j, θ_j)`.
    pub fn penalty_term(&self, x: f64, theta: f64, j: usize) -> Result<f64> {
        if !(theta > 0.0) {
            return Err(Error::Domain(format!("theta[{j}] = {theta} is not positive")));
        }
        let ratio = theta / self.vartheta[j];
        Ok(x * x / (2.0 * theta) - self.eta * ratio.ln() + ratio.powf(self.r))
    }
}

/// Solve `−z²/(2ξ) − η + r ξ^r = 0` for `ξ > 0`, where `z2 = z²`.
///
/// `h(u) = −z²/(2e^u) − η + r e^{ru}` is strictly increasing in `u = log ξ`,
/// so the root is unique when it exists.
fn solve_scaled(r: f64, eta: f64, z2: f64) -> Result<f64> {
    if r == 1.0 {
        return Ok(0.5 * (eta + (eta * eta + 2.0 * z2).sqrt()));
    }
    if r == -1.0 {
        return Ok((0.5 * z2 + 1.0) / -eta);
    }
    if z2 == 0.0 {
        let base = eta / r;
        return Ok(if base > 0.0 { base.powf(1.0 / r) } else { 0.0 });
    }

    let h = |u: f64| -> (f64, f64) {
        let a = 0.5 * z2 * (-u).exp();
        let b = (r * u).exp();
        (-a - eta + r * b, a + r * r * b)
    };

    // Seed from the background root, or the large-|z| asymptote.
    let seed = {
        let base = eta / r;
        let bg = if base > 0.0 { base.powf(1.0 / r) } else { 1.0 };
        let asym = if r > 0.0 {
            (0.5 * z2 / r).powf(1.0 / (r + 1.0))
        } else {
            0.5 * z2 / -eta
        };
        bg.max(asym)
    };
    let mut u = seed.ln();

    // Bracket the root.
    let (mut lo, mut hi);
    let (h0, _) = h(u);
    if h0 == 0.0 {
        return Ok(u.exp());
    }
    let mut step = 1.0;
    if h0 < 0.0 {
        lo = u;
        hi = u + step;
        let mut k = 0;
        while h(hi).0 < 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
            k += 1;
            if k > 60 {
                return Err(Error::NonConvergence {
                    what: "theta-update bracketing",
                    iters: k,
                });
            }
        }
    } else {
        hi = u;
        lo = u - step;
        let mut k = 0;
        while h(lo).0 > 0.0 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            k += 1;
            if k > 60 {
                return Err(Error::NonConvergence {
                    what: "theta-update bracketing",
                    iters: k,
                });
            }
        }
    }

    u = u.clamp(lo, hi);
    for _ in 0..NEWTON_BUDGET {
        let (f, df) = h(u);
        if f == 0.0 {
            return Ok(u.exp());
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let mut next = u - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= NEWTON_TOL * u.abs().max(1.0) || hi - lo <= NEWTON_TOL * u.abs().max(1.0) {
            return Ok(next.exp());
        }
        u = next;
    }
    Err(Error::NonConvergence {
        what: "theta-update Newton iteration",
        iters: NEWTON_BUDGET,
    })
}

fn phi_rhs(z: f64, phi: f64, r: f64) -> f64 {
    2.0 * z * phi / (2.0 * r * r * phi.powf(r + 1.0) + z * z)
}

fn rk4_step(z: f64, phi: f64, h: f64, r: f64) -> f64 {
    let k1 = phi_rhs(z, phi, r);
    let k2 = phi_rhs(z + 0.5 * h, phi + 0.5 * h * k1, r);
    let k3 = phi_rhs(z + 0.5 * h, phi + 0.5 * h * k2, r);
    let k4 = phi_rhs(z + h, phi + h * k3, r);
    phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Scaled θ-update `ξ = φ(|z|)` obtained by integrating
/// `φ′(z) = 2zφ / (2r²φ^{r+1} + z²)` from `φ(0) = (η/r)^{1/r}`.
///
/// Classical RK4 with step `min(1e-3, z/1000)`; every step is compared with
/// two half steps and halved until they agree to 1e-10. This is an oracle for
/// [`HyperModel::theta_update`], not a production path.
pub fn phi_ivp(z_abs: f64, r: f64, eta: f64) -> Result<f64> {
    if r == 0.0 {
        return Err(Error::InvalidModel("r must be nonzero".into()));
    }
    if r > 0.0 && r < 1.0 && !(eta > 0.0) {
        return Err(Error::InvalidModel(format!("0 < r < 1 requires eta > 0, got {eta}")));
    }
    let base = eta / r;
    if !(base > 0.0) {
        return Err(Error::InvalidModel(format!("phi(0) = (eta/r)^(1/r) undefined for eta/r = {base}")));
    }
    let mut phi = base.powf(1.0 / r);
    let z_end = z_abs.abs();
    if z_end == 0.0 {
        return Ok(phi);
    }
    let h0 = (1e-3f64).min(z_end / 1000.0);
    let mut z = 0.0;
    let mut h = h0;
    while z < z_end {
        let step = h.min(z_end - z);
        let full = rk4_step(z, phi, step, r);
        let half = rk4_step(z, phi, 0.5 * step, r);
        let two = rk4_step(z + 0.5 * step, half, 0.5 * step, r);
        let err = (two - full).abs() / 15.0;
        if err <= 1e-10 * two.abs().max(1e-300) {
            phi = two + (two - full) / 15.0;
            z += step;
            h = (2.0 * h).min(h0);
        } else {
            h *= 0.5;
            if h < 1e-14 * z_end.max(1.0) {
                return Err(Error::IntegrationFailure { z });
            }
        }
        if !phi.is_finite() || phi <= 0.0 {
            return Err(Error::IntegrationFailure { z });
        }
    }
    Ok(phi)
}

/// Sensitivity scaling `ϑ_j = C / ‖A e_j‖²`.
pub fn sensitivity_scaling(a: &dyn LinearMap, c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::InvalidModel(format!("sensitivity constant must be positive, got {c}")));
    }
    a.column_norms_sq()?
        .into_iter()
        .enumerate()
        .map(|(j, n2)| if n2 > 0.0 { Ok(c / n2) } else { Err(Error::ZeroColumn(j)) })
        .collect()
}

/// Scale vector of the greedy model chosen so that both models agree on a
/// vanishing component: `g(0 | ℳ₁) = g(0 | ℳ₂)`.
pub fn match_vartheta2(m1: &HyperModel, r2: f64, beta2: f64) -> Result<Vec<f64>> {
    let eta2 = eta(r2, beta2);
    match_vartheta2_eta(m1, r2, eta2)
}

pub(crate) fn match_vartheta2_eta(m1: &HyperModel, r2: f64, eta2: f64) -> Result<Vec<f64>> {
    let b1 = m1.eta / m1.r;
    let b2 = r2 / eta2;
    if !(b1 > 0.0) || !(b2 > 0.0) {
        return Err(Error::InvalidModel(format!(
            "background matching needs eta1/r1 > 0 and r2/eta2 > 0, got {b1} and {b2}"
        )));
    }
    let factor = b1.powf(1.0 / m1.r) * b2.powf(1.0 / r2);
    Ok(m1.vartheta.iter().map(|v| factor * v).collect())
}

/// Total penalty `Σ_j p(x_j, θ_j)`.
pub fn penalty(x: &[f64], theta: &[f64], model: &HyperModel) -> Result<f64> {
    if x.len() != theta.len() || x.len() != model.len() {
        return Err(Error::dim(format!(
            "penalty: x {}, theta {}, model {}",
            x.len(),
            theta.len(),
            model.len()
        )));
    }
    let mut s = 0.0;
    for (j, (&xj, &tj)) in x.iter().zip(theta).enumerate() {
        s += model.penalty_term(xj, tj, j)?;
    }
    Ok(s)
}

/// A convex model `ℳ₁` (`r ≥ 1`) paired with a greedy model `ℳ₂` (`r < 1`)
/// whose scales are background-matched, plus the per-component bounds of ℳ₂.
#[derive(Debug, Clone)]
pub struct HybridPair {
    m1: HyperModel,
    m2: HyperModel,
    theta_bar: Vec<f64>,
    x_bar: Vec<f64>,
}

impl HybridPair {
    pub fn new(m1: HyperModel, r2: f64, beta2: f64) -> Result<Self> {
        Self::build(m1, r2, eta(r2, beta2), beta2)
    }

    /// Same as [`HybridPair::new`] with the greedy model given by `(r, η)`.
    pub fn from_eta(m1: HyperModel, r2: f64, eta2: f64) -> Result<Self> {
        Self::build(m1, r2, eta2, (eta2 + 1.5) / r2)
    }

    /// Pair with an explicitly scaled greedy model; no background matching.
    pub fn with_models(m1: HyperModel, m2: HyperModel) -> Result<Self> {
        if m1.len() != m2.len() {
            return Err(Error::dim(format!("hybrid pair: {} vs {}", m1.len(), m2.len())));
        }
        Self::check_orders(&m1, m2.r)?;
        Self::finish(m1, m2)
    }

    fn check_orders(m1: &HyperModel, r2: f64) -> Result<()> {
        if m1.r < 1.0 {
            return Err(Error::InvalidModel(format!("first model needs r >= 1, got {}", m1.r)));
        }
        if !(r2 < 1.0) || r2 == 0.0 {
            return Err(Error::InvalidModel(format!("second model needs r < 1, r != 0, got {r2}")));
        }
        Ok(())
    }

    fn build(m1: HyperModel, r2: f64, eta2: f64, beta2: f64) -> Result<Self> {
        Self::check_orders(&m1, r2)?;
        let v2 = match_vartheta2_eta(&m1, r2, eta2)?;
        let mut m2 = HyperModel::new(r2, beta2, v2)?;
        m2.eta = eta2;
        Self::finish(m1, m2)
    }

    fn finish(m1: HyperModel, m2: HyperModel) -> Result<Self> {
        let theta_bar = (0..m2.len()).map(|j| m2.convexity_bound(j)).collect::<Result<Vec<_>>>()?;
        let x_bar = (0..m2.len()).map(|j| m2.x_bound(j)).collect::<Result<Vec<_>>>()?;
        Ok(HybridPair {
            m1,
            m2,
            theta_bar,
            x_bar,
        })
    }

    pub fn m1(&self) -> &HyperModel {
        &self.m1
    }

    pub fn m2(&self) -> &HyperModel {
        &self.m2
    }

    pub fn theta_bar(&self) -> &[f64] {
        &self.theta_bar
    }

    pub fn x_bar(&self) -> &[f64] {
        &self.x_bar
    }

    pub fn len(&self) -> usize {
        self.m1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m1.is_empty()
    }
}

/// Local-hybrid switch: `(true, g⁽²⁾(x_j))` iff `g⁽²⁾(x_j) < θ̄_j`, otherwise
/// `(false, g⁽¹⁾(x_j))`.
pub fn switch_decision(x: f64, pair: &HybridPair, j: usize) -> Result<(bool, f64)> {
    let t2 = pair.m2.theta_update(x, j)?;
    if t2 < pair.theta_bar[j] {
        Ok((true, t2))
    } else {
        Ok((false, pair.m1.theta_update(x, j)?))
    }
}
