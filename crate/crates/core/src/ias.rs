//! The outer IAS iteration: plain, local hybrid and global hybrid.
//!
//! Each step alternates an x-update (a whitened least-squares solve, early
//! stopped by the RKS rule or solved exactly) with a componentwise θ-update.
//! The hybrid schemes differ only in which hypermodel drives each θ_j:
//!
//! * local: component `j` moves to ℳ₂ once ℳ₂'s update lands inside the
//!   convexity region `θ < θ̄_j`, and never returns;
//! * global: every component uses ℳ₁ for `t < t̄` and ℳ₂ afterwards.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{Problem, Representation};
use crate::hyperprior::{switch_decision, HybridPair, HyperModel};
use crate::krylov::{cgls, CglsResult, StopCombination, StopReason, StoppingRule};
use crate::operators::{
    check_len, norm, scale_by_prior, Compose, CumulativeSum, InnerSolver, LinearMap, Op, PinvMap, StackedIdentity,
    WeightedIncrements,
};

#[derive(Debug, Clone)]
pub enum Mode {
    Plain(HyperModel),
    LocalHybrid(HybridPair),
    GlobalHybrid { pair: HybridPair, switch_at: usize },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Plain(_) => "plain",
            Mode::LocalHybrid(_) => "local-hybrid",
            Mode::GlobalHybrid { .. } => "global-hybrid",
        }
    }

    fn len(&self) -> usize {
        match self {
            Mode::Plain(m) => m.len(),
            Mode::LocalHybrid(p) | Mode::GlobalHybrid { pair: p, .. } => p.len(),
        }
    }

    /// `θ⁰ = ϑ⁽¹⁾`.
    pub fn initial_theta(&self) -> Vec<f64> {
        match self {
            Mode::Plain(m) => m.vartheta().to_vec(),
            Mode::LocalHybrid(p) | Mode::GlobalHybrid { pair: p, .. } => p.m1().vartheta().to_vec(),
        }
    }

    fn theta_bar(&self) -> Option<Vec<f64>> {
        match self {
            Mode::Plain(m) => (0..m.len()).map(|j| m.convexity_bound(j)).collect::<Result<Vec<_>>>().ok(),
            Mode::LocalHybrid(p) | Mode::GlobalHybrid { pair: p, .. } => Some(p.theta_bar().to_vec()),
        }
    }
}

/// How the x-update is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XSolve {
    /// CGLS on `A_θ w = b` with the RKS stopping rule.
    #[default]
    Rks,
    /// CGLS on the stacked system `[A_θ; I] w = [b; 0]` run to convergence.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoxConstraint {
    Uniform { lower: f64, upper: f64 },
    PerComponent { lower: Vec<f64>, upper: Vec<f64> },
}

impl BoxConstraint {
    fn project(&self, x: &mut [f64]) -> Result<()> {
        match self {
            BoxConstraint::Uniform { lower, upper } => x.iter_mut().for_each(|v| *v = v.clamp(*lower, *upper)),
            BoxConstraint::PerComponent { lower, upper } => {
                check_len("box lower bounds", lower.len(), x.len())?;
                check_len("box upper bounds", upper.len(), x.len())?;
                for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
                    *v = v.clamp(*lo, *hi);
                }
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            BoxConstraint::Uniform { lower, upper } => lower <= upper,
            BoxConstraint::PerComponent { lower, upper } => {
                lower.len() == upper.len() && lower.iter().zip(upper).all(|(l, u)| l <= u)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel("box constraint has lower > upper".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverControls {
    pub mode: Mode,
    /// Stop when `max(‖Δx‖/‖x‖, ‖Δθ‖/‖θ‖)` falls below this.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// RKS safeguard factor.
    pub tau: f64,
    pub reorthogonalize: bool,
    pub stop_combination: StopCombination,
    pub x_solve: XSolve,
    /// Cap on CGLS steps per x-update; `None` means `min(m, n)` for RKS and
    /// `4 (m + n)` for exact solves.
    pub cgls_max_iters: Option<usize>,
    /// Projection of the signal after every x-update.
    pub box_constraint: Option<BoxConstraint>,
    /// Local hybrid only: clamp `x_j`, `j ∈ I`, to `[−x̄_j, x̄_j]`.
    pub projection: bool,
    pub inner: InnerSolver,
}

impl SolverControls {
    pub fn new(mode: Mode) -> Self {
        SolverControls {
            mode,
            outer_tol: 1e-6,
            max_outer: 200,
            tau: 1.1,
            reorthogonalize: false,
            stop_combination: StopCombination::Both,
            x_solve: XSolve::Rks,
            cgls_max_iters: None,
            box_constraint: None,
            projection: false,
            inner: InnerSolver::Direct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidModel(format!("outer_tol must be positive, got {}", self.outer_tol)));
        }
        if let Mode::GlobalHybrid { switch_at, .. } = self.mode {
            if switch_at < 1 {
                return Err(Error::InvalidModel("global hybrid switch iteration must be >= 1".into()));
            }
        }
        if let Some(b) = &self.box_constraint {
            b.validate()?;
        }
        Ok(())
    }

    fn stopping_rule(&self, m: usize, n: usize) -> Result<StoppingRule> {
        let rule = match self.x_solve {
            XSolve::Rks => {
                let mut r = StoppingRule::new((m as f64).sqrt(), self.tau, m.min(n))?
                    .with_combination(self.stop_combination);
                if let Some(k) = self.cgls_max_iters {
                    r.max_iters = k;
                }
                r
            }
            XSolve::Exact => StoppingRule::unrestricted(self.cgls_max_iters.unwrap_or(4 * (m + n))),
        };
        Ok(rule.with_reorthogonalization(self.reorthogonalize))
    }
}

/// Which hypermodel each component follows.
#[derive(Debug, Clone, Copy)]
pub enum Assignment<'a> {
    Single(&'a HyperModel),
    Hybrid { pair: &'a HybridPair, switched: &'a [bool] },
}

impl Assignment<'_> {
    fn model(&self, j: usize) -> &HyperModel {
        match self {
            Assignment::Single(m) => m,
            Assignment::Hybrid { pair, switched } => {
                if switched[j] {
                    pair.m2()
                } else {
                    pair.m1()
                }
            }
        }
    }
}

/// `ℱ = ½‖b − A x‖² + Σ_j p(z_j, θ_j | ℳ_j)`, with `x` the signal and `z`
/// its sparse coefficients.
pub fn objective(problem: &Problem, signal: &[f64], coeffs: &[f64], theta: &[f64], models: Assignment) -> Result<f64> {
    let n = problem.n();
    check_len("coefficients", coeffs.len(), n)?;
    check_len("theta", theta.len(), n)?;
    if let Assignment::Hybrid { switched, .. } = models {
        check_len("switch set", switched.len(), n)?;
    }
    let ax = problem.a.apply(signal)?;
    let misfit: f64 = problem.b.iter().zip(&ax).map(|(b, a)| (b - a).powi(2)).sum();
    let mut pen = 0.0;
    for j in 0..n {
        pen += models.model(j).penalty_term(coeffs[j], theta[j], j)?;
    }
    Ok(0.5 * misfit + pen)
}

/// Result of one x-update.
#[derive(Debug, Clone)]
pub struct XUpdate {
    /// Sparse coefficients (the IAS unknowns).
    pub coefficients: Vec<f64>,
    pub signal: Vec<f64>,
    pub cgls: CglsResult,
}

fn sqrt_theta(theta: &[f64]) -> Result<Vec<f64>> {
    if let Some(j) = theta.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::Domain(format!("theta[{j}] = {} is not positive", theta[j])));
    }
    Ok(theta.iter().map(|t| t.sqrt()).collect())
}

fn cumsum(z: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    z.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Solve for `w = D_θ^{-1/2} z` and map back: `z = D_θ^{1/2} w`.
///
/// In 2D `w = β` and the signal is `L_θ^† β`.
pub fn x_update(
    problem: &Problem,
    theta: &[f64],
    rule: &StoppingRule,
    solve: XSolve,
    inner: InnerSolver,
) -> Result<XUpdate> {
    check_len("theta", theta.len(), problem.n())?;
    let sq = sqrt_theta(theta)?;
    let mut pinv = None;
    let a_theta: Op = match &problem.representation {
        Representation::Direct => scale_by_prior(problem.a.clone(), theta)?,
        Representation::Increments1D => {
            let ac: Op = Arc::new(Compose::new(problem.a.clone(), Arc::new(CumulativeSum(problem.n())))?);
            scale_by_prior(ac, theta)?
        }
        Representation::Increments2D(g) => {
            let wi = Arc::new(WeightedIncrements::new(g.clone(), theta, inner)?);
            pinv = Some(wi.clone());
            Arc::new(Compose::new(problem.a.clone(), Arc::new(PinvMap(wi)))?)
        }
    };
    let res = match solve {
        XSolve::Rks => cgls(a_theta.as_ref(), &problem.b, rule)?,
        XSolve::Exact => {
            let stacked = StackedIdentity::new(a_theta.clone());
            let mut rhs = problem.b.clone();
            rhs.resize(stacked.rows(), 0.0);
            cgls(&stacked, &rhs, rule)?
        }
    };
    let coefficients: Vec<f64> = res.w.iter().zip(&sq).map(|(w, s)| w * s).collect();
    let signal = match (&problem.representation, pinv) {
        (Representation::Increments2D(_), Some(wi)) => wi.apply_pinv(&res.w)?,
        (Representation::Increments1D, _) => cumsum(&coefficients),
        _ => coefficients.clone(),
    };
    Ok(XUpdate {
        coefficients,
        signal,
        cgls: res,
    })
}

/// Signal whose coefficients best match `z` in the `θ`-weighted sense.
fn signal_from_coefficients(problem: &Problem, z: &[f64], theta: &[f64], inner: InnerSolver) -> Result<Vec<f64>> {
    Ok(match &problem.representation {
        Representation::Direct => z.to_vec(),
        Representation::Increments1D => cumsum(z),
        Representation::Increments2D(g) => {
            let wi = WeightedIncrements::new(g.clone(), theta, inner)?;
            let beta: Vec<f64> = z.iter().zip(theta).map(|(v, t)| v / t.sqrt()).collect();
            wi.apply_pinv(&beta)?
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IasState {
    /// Sparse coefficients.
    pub x: Vec<f64>,
    pub signal: Vec<f64>,
    pub theta: Vec<f64>,
    /// Membership in the switch set `I`.
    pub switched: Vec<bool>,
    /// Completed outer iterations.
    pub t: usize,
}

impl IasState {
    pub fn switched_count(&self) -> usize {
        self.switched.iter().filter(|s| **s).count()
    }
}

/// Diagnostics of one outer iteration `t`, recorded after `θ^{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub t: usize,
    /// `ℱ(x^{t+1}, θ^{t+1})` under the assignment after the θ-update.
    pub objective: f64,
    /// `ℱ(x^{t+1}, θ^t)` under the assignment before the θ-update.
    pub objective_after_x: f64,
    /// `‖b − A x^{t+1}‖`.
    pub residual: f64,
    pub cgls_iters: usize,
    pub stop_reason: StopReason,
    /// `|I|`.
    pub switched: usize,
    /// Incremented whenever the model assignment changes.
    pub epoch: usize,
    pub rel_change: f64,
    /// `θ_j < θ̄_j` per component; empty when no bound applies.
    pub convex: Vec<bool>,
}

impl IterRecord {
    pub fn convex_count(&self) -> usize {
        self.convex.iter().filter(|c| **c).count()
    }
}

#[derive(Debug, Clone)]
pub struct IasRun {
    pub state: IasState,
    pub trace: Vec<IterRecord>,
    pub converged: bool,
}

/// A failed run with the trace collected before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trace: Vec<IterRecord>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.trace.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for Box<RunFailure> {
    fn from(error: Error) -> Self {
        Box::new(RunFailure { error, trace: Vec::new() })
    }
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let d: f64 = new.iter().zip(old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let s = norm(new);
    if d == 0.0 {
        0.0
    } else {
        d / s.max(f64::MIN_POSITIVE)
    }
}

pub fn run(problem: &Problem, controls: &SolverControls) -> Result<IasRun, Box<RunFailure>> {
    run_from(problem, controls, controls.mode.initial_theta())
}

/// [`run`] from a given `θ⁰`.
pub fn run_from(problem: &Problem, controls: &SolverControls, theta0: Vec<f64>) -> Result<IasRun, Box<RunFailure>> {
    controls.validate()?;
    let n = problem.n();
    check_len("hypermodel", controls.mode.len(), n)?;
    check_len("initial theta", theta0.len(), n)?;
    sqrt_theta(&theta0)?;

    let rule = controls.stopping_rule(problem.m(), n)?;
    let theta_bar = controls.mode.theta_bar();
    let mut state = IasState {
        x: vec![0.0; n],
        signal: vec![0.0; problem.signal_len()],
        theta: theta0,
        switched: vec![false; n],
        t: 0,
    };
    let mut trace = Vec::new();
    let mut epoch = 0;
    let mut converged = false;

    for t in 0..controls.max_outer {
        match step(problem, controls, &rule, theta_bar.as_deref(), &mut state, t, &mut epoch) {
            Ok(rec) => {
                let done = rec.rel_change < controls.outer_tol
                    && match controls.mode {
                        Mode::GlobalHybrid { switch_at, .. } => t >= switch_at,
                        _ => true,
                    };
                trace.push(rec);
                if done {
                    converged = true;
                    break;
                }
            }
            Err(error) => return Err(Box::new(RunFailure { error, trace })),
        }
    }
    Ok(IasRun {
        state,
        trace,
        converged,
    })
}

fn step(
    problem: &Problem,
    controls: &SolverControls,
    rule: &StoppingRule,
    theta_bar: Option<&[f64]>,
    state: &mut IasState,
    t: usize,
    epoch: &mut usize,
) -> Result<IterRecord> {
    let upd = x_update(problem, &state.theta, rule, controls.x_solve, controls.inner)?;
    let (mut z, mut signal) = (upd.coefficients, upd.signal);

    if let Some(b) = &controls.box_constraint {
        b.project(&mut signal)?;
        z = problem.coefficients(&signal)?;
    }
    if let (Mode::LocalHybrid(pair), true) = (&controls.mode, controls.projection) {
        let mut changed = false;
        for (j, zj) in z.iter_mut().enumerate() {
            if state.switched[j] {
                let xb = pair.x_bar()[j];
                let c = zj.clamp(-xb, xb);
                changed |= c != *zj;
                *zj = c;
            }
        }
        if changed {
            signal = signal_from_coefficients(problem, &z, &state.theta, controls.inner)?;
        }
    }

    let objective_after_x = {
        let models = assignment(&controls.mode, &state.switched);
        objective(problem, &signal, &z, &state.theta, models)?
    };

    let old_switched = state.switched.clone();
    let theta_new = match &controls.mode {
        Mode::Plain(m) => m.theta_update_all(&z)?,
        Mode::GlobalHybrid { pair, switch_at } => {
            if t < *switch_at {
                pair.m1().theta_update_all(&z)?
            } else {
                state.switched.iter_mut().for_each(|s| *s = true);
                pair.m2().theta_update_all(&z)?
            }
        }
        Mode::LocalHybrid(pair) => {
            let mut th = Vec::with_capacity(z.len());
            for (j, &zj) in z.iter().enumerate() {
                if state.switched[j] {
                    th.push(pair.m2().theta_update(zj, j)?);
                } else {
                    let (sw, v) = switch_decision(zj, pair, j)?;
                    state.switched[j] = sw;
                    th.push(v);
                }
            }
            th
        }
    };
    if state.switched != old_switched {
        *epoch += 1;
    }

    let change = rel_change(&z, &state.x).max(rel_change(&theta_new, &state.theta));
    state.x = z;
    state.signal = signal;
    state.theta = theta_new;
    state.t = t + 1;

    let models = assignment(&controls.mode, &state.switched);
    let ax = problem.a.apply(&state.signal)?;
    let residual = problem.b.iter().zip(&ax).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt();
    let objective = objective(problem, &state.signal, &state.x, &state.theta, models)?;
    let convex = theta_bar.map_or_else(Vec::new, |tb| state.theta.iter().zip(tb).map(|(t, b)| t < b).collect());

    Ok(IterRecord {
        t,
        objective,
        objective_after_x,
        residual,
        cgls_iters: upd.cgls.iters,
        stop_reason: upd.cgls.stop_reason,
        switched: state.switched_count(),
        epoch: *epoch,
        rel_change: change,
        convex,
    })
}

fn assignment<'a>(mode: &'a Mode, switched: &'a [bool]) -> Assignment<'a> {
    match mode {
        Mode::Plain(m) => Assignment::Single(m),
        Mode::LocalHybrid(pair) | Mode::GlobalHybrid { pair, .. } => Assignment::Hybrid { pair, switched },
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::operators::testutil::{random_vec, rng};
    use crate::operators::{DenseMatrix, IncrementGraph};

    fn random_dense(seed: u64, m: usize, n: usize) -> DMatrix<f64> {
        let mut r = rng(seed);
        DMatrix::from_fn(m, n, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0))
    }

    fn direct_problem(a: DMatrix<f64>, b: Vec<f64>) -> Problem {
        Problem::new(DenseMatrix(a).into_op(), b, Representation::Direct).unwrap()
    }

    fn gamma(n: usize, eta: f64, v: f64) -> HyperModel {
        HyperModel::from_eta(1.0, eta, vec![v; n]).unwrap()
    }

    #[test]
    fn objective_of_zero_signal_is_penalty_constant() {
        let p = direct_problem(random_dense(1, 4, 6), vec![0.0; 4]);
        let m = gamma(6, 0.1, 0.3);
        let theta = vec![0.3; 6];
        let f = objective(&p, &[0.0; 6], &[0.0; 6], &theta, Assignment::Single(&m)).unwrap();
        assert!((f - 6.0).abs() < 1e-14);
        assert!(objective(&p, &[0.0; 6], &[0.0; 6], &[0.0; 6], Assignment::Single(&m)).is_err());
    }

    #[test]
    fn hybrid_with_empty_switch_set_matches_plain() {
        let p = direct_problem(random_dense(2, 5, 7), random_vec(&mut rng(3), 5));
        let m1 = gamma(7, 0.01, 1e-2);
        let pair = HybridPair::from_eta(m1.clone(), -1.0, -4.5).unwrap();
        let x = random_vec(&mut rng(4), 7);
        let theta: Vec<f64> = x.iter().map(|v| v * v + 0.1).collect();
        let none = vec![false; 7];
        let a = objective(&p, &x, &x, &theta, Assignment::Single(&m1)).unwrap();
        let b = objective(&p, &x, &x, &theta, Assignment::Hybrid { pair: &pair, switched: &none }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_update_is_tikhonov_solution() {
        let q = random_dense(5, 8, 8).qr().q();
        let b = random_vec(&mut rng(6), 8);
        let p = direct_problem(q.clone(), b.clone());
        let theta = vec![0.7; 8];
        let upd = x_update(&p, &theta, &StoppingRule::unrestricted(200), XSolve::Exact, InnerSolver::Direct).unwrap();
        let d_inv = DMatrix::from_diagonal(&DVector::from_vec(theta.iter().map(|t| 1.0 / t).collect()));
        let oracle = (q.transpose() * &q + d_inv)
            .lu()
            .solve(&(q.transpose() * DVector::from_column_slice(&b)))
            .unwrap();
        for (x, o) in upd.signal.iter().zip(oracle.iter()) {
            assert!((x - o).abs() < 1e-10, "{x} vs {o}");
        }
    }

    #[test]
    fn tiny_variances_shrink_the_update() {
        let a = random_dense(7, 10, 6);
        let b = random_vec(&mut rng(8), 10);
        let p = direct_problem(a.clone(), b.clone());
        let rule = StoppingRule::unrestricted(200);
        let big = x_update(&p, &[1e6; 6], &rule, XSolve::Exact, InnerSolver::Direct).unwrap();
        let small = x_update(&p, &[1e-12; 6], &rule, XSolve::Exact, InnerSolver::Direct).unwrap();
        assert!(norm(&small.signal) < 1e-4 * norm(&big.signal));
    }

    #[test]
    fn increments_1d_update_matches_direct_on_cumsum() {
        let a = random_dense(9, 12, 10);
        let b = random_vec(&mut rng(10), 12);
        let theta: Vec<f64> = (0..10).map(|j| 0.1 + 0.05 * j as f64).collect();
        let p = Problem::new(DenseMatrix(a.clone()).into_op(), b.clone(), Representation::Increments1D).unwrap();
        let upd = x_update(&p, &theta, &StoppingRule::unrestricted(200), XSolve::Exact, InnerSolver::Direct).unwrap();
        let c = DMatrix::from_fn(10, 10, |i, j| if j <= i { 1.0 } else { 0.0 });
        let ac = &a * &c;
        let d_inv = DMatrix::from_diagonal(&DVector::from_vec(theta.iter().map(|t| 1.0 / t).collect()));
        let z = (ac.transpose() * &ac + d_inv).lu().solve(&(ac.transpose() * DVector::from_column_slice(&b))).unwrap();
        let x = &c * &z;
        for j in 0..10 {
            assert!((upd.coefficients[j] - z[j]).abs() < 1e-9);
            assert!((upd.signal[j] - x[j]).abs() < 1e-9);
        }
        assert_eq!(p.coefficients(&upd.signal).unwrap().len(), 10);
    }

    #[test]
    fn increments_2d_update_is_compatible() {
        let g = Arc::new(IncrementGraph::for_image(4, 4).unwrap());
        let a = random_dense(11, 9, g.n_v());
        let b = random_vec(&mut rng(12), 9);
        let p = Problem::new(DenseMatrix(a).into_op(), b, Representation::Increments2D(g.clone())).unwrap();
        let theta: Vec<f64> = (0..g.n_e()).map(|j| 0.2 + 0.01 * j as f64).collect();
        let upd = x_update(&p, &theta, &StoppingRule::unrestricted(500), XSolve::Exact, InnerSolver::Direct).unwrap();
        let y = g.increments(&upd.signal).unwrap();
        for (yi, zi) in y.iter().zip(&upd.coefficients) {
            assert!((yi - zi).abs() < 1e-8 * (1.0 + yi.abs()));
        }
    }

    #[test]
    fn zero_data_converges_to_background() {
        let p = direct_problem(random_dense(13, 6, 8), vec![0.0; 6]);
        let m = gamma(8, 0.05, 2e-3);
        let run = run(&p, &SolverControls::new(Mode::Plain(m.clone()))).unwrap();
        assert!(run.converged);
        assert!(run.trace.len() <= 3);
        assert!(run.state.x.iter().all(|v| v.abs() < 1e-14));
        let g0 = m.theta_update(0.0, 0).unwrap();
        assert!(run.state.theta.iter().all(|t| (t - g0).abs() < 1e-15));
    }

    #[test]
    fn exact_plain_steps_decrease_objective() {
        let a = random_dense(14, 15, 20);
        let truth: Vec<f64> = (0..20).map(|j| if j % 7 == 0 { 2.0 } else { 0.0 }).collect();
        let clean = DenseMatrix(a.clone()).apply(&truth).unwrap();
        let noise = random_vec(&mut rng(15), 15);
        let b: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + 0.1 * e).collect();
        let p = direct_problem(a, b);
        let mut c = SolverControls::new(Mode::Plain(gamma(20, 0.1, 0.5)));
        c.x_solve = XSolve::Exact;
        c.max_outer = 30;
        let run = run(&p, &c).unwrap();
        let m = gamma(20, 0.1, 0.5);
        let theta0 = vec![0.5; 20];
        let f0 = objective(&p, &[0.0; 20], &[0.0; 20], &theta0, Assignment::Single(&m)).unwrap();
        let mut prev = f0;
        for rec in &run.trace {
            assert!(rec.objective_after_x <= prev * (1.0 + 1e-10) + 1e-12, "t={}", rec.t);
            assert!(rec.objective <= rec.objective_after_x * (1.0 + 1e-10) + 1e-12, "t={}", rec.t);
            prev = rec.objective;
        }
    }

    #[test]
    fn local_hybrid_switch_set_only_grows() {
        let a = random_dense(16, 20, 30);
        let truth: Vec<f64> = (0..30).map(|j| if j % 10 == 3 { 1.5 } else { 0.0 }).collect();
        let clean = DenseMatrix(a.clone()).apply(&truth).unwrap();
        let noise = random_vec(&mut rng(17), 20);
        let b: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + 0.05 * e).collect();
        let p = direct_problem(a, b);
        let pair = HybridPair::from_eta(gamma(30, 1e-2, 1e-2), -1.0, -4.5).unwrap();
        let mut c = SolverControls::new(Mode::LocalHybrid(pair.clone()));
        c.projection = true;
        let run = run(&p, &c).unwrap();
        let mut prev = 0;
        for rec in &run.trace {
            assert!(rec.switched >= prev);
            prev = rec.switched;
        }
        for (j, s) in run.state.switched.iter().enumerate() {
            if *s {
                assert!(run.state.theta[j] < pair.theta_bar()[j]);
            }
        }
    }

    #[test]
    fn global_hybrid_switches_once() {
        let a = random_dense(18, 12, 16);
        let truth: Vec<f64> = (0..16).map(|j| if j % 5 == 1 { 3.0 } else { 0.0 }).collect();
        let clean = DenseMatrix(a.clone()).apply(&truth).unwrap();
        let noise = random_vec(&mut rng(19), 12);
        let b: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| 20.0 * c + e).collect();
        let p = direct_problem(a, b);
        let pair = HybridPair::from_eta(gamma(16, 1e-2, 1e-2), -1.0, -4.5).unwrap();
        let mut c = SolverControls::new(Mode::GlobalHybrid { pair, switch_at: 4 });
        c.outer_tol = 1e-300;
        c.max_outer = 8;
        let run = run(&p, &c).unwrap();
        assert!(run.trace.len() > 4);
        for rec in &run.trace {
            assert_eq!(rec.epoch, usize::from(rec.t >= 4));
            assert_eq!(rec.switched, if rec.t >= 4 { 16 } else { 0 });
        }
    }

    #[test]
    fn controls_validation() {
        let pair = HybridPair::from_eta(gamma(3, 1e-2, 1e-2), -1.0, -4.5).unwrap();
        let mut c = SolverControls::new(Mode::GlobalHybrid { pair, switch_at: 0 });
        assert!(c.validate().is_err());
        c.mode = Mode::Plain(gamma(3, 0.1, 1.0));
        c.outer_tol = 0.0;
        assert!(c.validate().is_err());
        c.outer_tol = 1e-6;
        c.box_constraint = Some(BoxConstraint::Uniform { lower: 1.0, upper: 0.0 });
        assert!(c.validate().is_err());
        let p = direct_problem(random_dense(20, 3, 4), vec![1.0; 3]);
        c.box_constraint = None;
        assert!(run(&p, &c).is_err());
    }

    #[test]
    fn box_constraint_holds_on_signal() {
        let a = random_dense(21, 10, 10);
        let b: Vec<f64> = random_vec(&mut rng(22), 10).iter().map(|v| 20.0 * v).collect();
        let p = direct_problem(a, b);
        let mut c = SolverControls::new(Mode::Plain(gamma(10, 0.1, 1.0)));
        c.box_constraint = Some(BoxConstraint::Uniform { lower: 0.0, upper: 1.0 });
        c.max_outer = 10;
        let run = run(&p, &c).unwrap();
        assert!(run.state.signal.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
