//! Builds problems and solver controls from an [`ExperimentConfig`], runs
//! them and writes the artifacts; compares two run directories.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::config::{ExperimentConfig, MatrixFile, ModeKind, ModelSpec, ProblemConfig, ScaleSpec, XSolveKind};
use crate::error::{Error, Result};
use crate::forward::{Problem, Representation};
use crate::hyperprior::{sensitivity_scaling, HybridPair, HyperModel};
use crate::ias::{run, BoxConstraint, IasRun, IterRecord, Mode, SolverControls, XSolve};
use crate::io::{atomic_write, ensure_dir, read_key_values, read_matrix, read_vector, write_pgm16, write_vector};
use crate::operators::{Compose, CumulativeSum, DenseMatrix, Op};

pub const TRACE_SCHEMA: &str = "ias-trace/1";
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Process exit status for an error: 2 for configuration problems, 3 for
/// file problems, 4 for solver failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::Io(_) | Error::MissingArtifact(_) => 3,
        _ => 4,
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    match &cfg.problem {
        ProblemConfig::Deconv1d(p) => p.problem(),
        ProblemConfig::Deblur2d(p) => p.problem(),
        ProblemConfig::StarryNight(p) => p.problem(),
        ProblemConfig::MatrixFile(f) => matrix_file_problem(f),
    }
}

fn matrix_file_problem(f: &MatrixFile) -> Result<Problem> {
    if !(f.sigma > 0.0) {
        return Err(Error::config("sigma", "noise level must be positive"));
    }
    let rows = read_matrix(&f.matrix)?;
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(Error::config("matrix", "matrix file is empty"));
    }
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j] / f.sigma);
    let b: Vec<f64> = read_vector(&f.data)?.into_iter().map(|v| v / f.sigma).collect();
    let rep = if f.increments {
        Representation::Increments1D
    } else {
        Representation::Direct
    };
    let mut p = Problem::new(Arc::new(DenseMatrix(a)), b, rep)?;
    p.sigma = f.sigma;
    if let Some(t) = &f.truth {
        let truth = read_vector(t)?;
        if truth.len() != n {
            return Err(Error::dim(format!("truth has length {}, matrix has {n} columns", truth.len())));
        }
        p.truth = Some(truth);
    }
    Ok(p)
}

/// Forward map in the coordinates the hypermodel acts on.
fn coefficient_operator(problem: &Problem) -> Result<Op> {
    match &problem.representation {
        Representation::Direct => Ok(problem.a.clone()),
        Representation::Increments1D => {
            let n = problem.signal_len();
            Ok(Arc::new(Compose::new(problem.a.clone(), Arc::new(CumulativeSum(n)))?))
        }
        Representation::Increments2D(_) => Err(Error::config(
            "vartheta",
            "sensitivity scaling is not available for the 2D increment representation",
        )),
    }
}

fn scale_vector(spec: ScaleSpec, problem: &Problem, which: &str) -> Result<Vec<f64>> {
    match spec {
        ScaleSpec::Value(v) => Ok(vec![v; problem.n()]),
        ScaleSpec::Sensitivity(c) => sensitivity_scaling(coefficient_operator(problem)?.as_ref(), c),
        ScaleSpec::Matched => Err(Error::config(
            format!("{which}.vartheta"),
            "'matched' applies only to the second model of a hybrid",
        )),
    }
}

fn model(spec: &ModelSpec, problem: &Problem, which: &str) -> Result<HyperModel> {
    let v = scale_vector(spec.vartheta, problem, which)?;
    HyperModel::from_eta(spec.r, spec.eta, v).map_err(|e| Error::config(which, e.to_string()))
}

pub fn build_mode(cfg: &ExperimentConfig, problem: &Problem) -> Result<Mode> {
    let m1 = model(&cfg.model1, problem, "model1")?;
    if cfg.mode == ModeKind::Plain {
        return Ok(Mode::Plain(m1));
    }
    let pair = match cfg.model2.vartheta {
        ScaleSpec::Matched => HybridPair::from_eta(m1, cfg.model2.r, cfg.model2.eta),
        _ => HybridPair::with_models(m1, model(&cfg.model2, problem, "model2")?),
    }
    .map_err(|e| Error::config("model2", e.to_string()))?;
    Ok(match cfg.mode {
        ModeKind::LocalHybrid => Mode::LocalHybrid(pair),
        _ => Mode::GlobalHybrid {
            pair,
            switch_at: cfg.switch_at,
        },
    })
}

pub fn build_controls(cfg: &ExperimentConfig, problem: &Problem) -> Result<SolverControls> {
    let mut c = SolverControls::new(build_mode(cfg, problem)?);
    c.outer_tol = cfg.outer_tol;
    c.max_outer = cfg.max_outer;
    c.tau = cfg.tau;
    c.stop_combination = cfg.stop;
    c.reorthogonalize = cfg.reorthogonalize;
    c.x_solve = match cfg.x_solve {
        XSolveKind::Rks => XSolve::Rks,
        XSolveKind::Exact => XSolve::Exact,
    };
    c.cgls_max_iters = cfg.cgls_max_iters;
    c.box_constraint = cfg.box_bounds.map(|(lower, upper)| BoxConstraint::Uniform { lower, upper });
    c.projection = cfg.projection;
    c.inner = cfg.inner;
    c.validate().map_err(|e| Error::config("solver", e.to_string()))?;
    Ok(c)
}

/// Support-recovery and error summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub problem: String,
    pub mode: String,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub cgls_total: usize,
    pub cgls_final: usize,
    pub relative_error: Option<f64>,
    pub support: Vec<usize>,
    pub true_support: Option<Vec<usize>>,
    pub runtime_s: f64,
}

impl Metrics {
    pub fn false_positives(&self) -> Option<usize> {
        let t = self.true_support.as_ref()?;
        Some(self.support.iter().filter(|j| t.binary_search(j).is_err()).count())
    }

    pub fn true_positives(&self) -> Option<usize> {
        let t = self.true_support.as_ref()?;
        Some(self.support.iter().filter(|j| t.binary_search(j).is_ok()).count())
    }

    pub fn precision(&self) -> Option<f64> {
        let tp = self.true_positives()?;
        Some(if self.support.is_empty() { 1.0 } else { tp as f64 / self.support.len() as f64 })
    }

    pub fn recall(&self) -> Option<f64> {
        let t = self.true_support.as_ref()?;
        let tp = self.true_positives()?;
        Some(if t.is_empty() { 1.0 } else { tp as f64 / t.len() as f64 })
    }

    /// Ordered `(key, value)` pairs as written to `metrics.csv`.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or("na".into(), |x| format!("{x:?}"));
        let opt_n = |v: Option<usize>| v.map_or("na".into(), |x| x.to_string());
        let list = |v: &[usize]| v.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ");
        vec![
            ("problem", self.problem.clone()),
            ("mode", self.mode.clone()),
            ("n", self.n.to_string()),
            ("iterations", self.iterations.to_string()),
            ("converged", self.converged.to_string()),
            ("cgls_total", self.cgls_total.to_string()),
            ("cgls_final", self.cgls_final.to_string()),
            ("relative_error", opt(self.relative_error)),
            ("support_size", self.support.len().to_string()),
            ("true_support_size", opt_n(self.true_support.as_ref().map(Vec::len))),
            ("true_positives", opt_n(self.true_positives())),
            ("false_positives", opt_n(self.false_positives())),
            ("precision", opt(self.precision())),
            ("recall", opt(self.recall())),
            ("support", list(&self.support)),
            ("runtime_s", format!("{:.3}", self.runtime_s)),
        ]
    }
}

/// Indices with `|v_j| > SUPPORT_THRESHOLD · max|v|`.
pub fn support(v: &[f64]) -> Vec<usize> {
    let mx = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if mx == 0.0 {
        return Vec::new();
    }
    (0..v.len()).filter(|&j| v[j].abs() > SUPPORT_THRESHOLD * mx).collect()
}

pub fn metrics(problem: &Problem, mode: &Mode, result: &IasRun, runtime_s: f64) -> Result<Metrics> {
    let relative_error = problem.truth.as_ref().map(|t| {
        let num: f64 = t.iter().zip(&result.state.signal).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = t.iter().map(|a| a * a).sum();
        (num / den).sqrt()
    });
    let true_support = match &problem.truth {
        Some(t) => Some(support(&problem.coefficients(t)?)),
        None => None,
    };
    Ok(Metrics {
        problem: problem.representation.name().to_string(),
        mode: mode.name().to_string(),
        n: problem.n(),
        iterations: result.trace.len(),
        converged: result.converged,
        cgls_total: result.trace.iter().map(|r| r.cgls_iters).sum(),
        cgls_final: result.trace.last().map_or(0, |r| r.cgls_iters),
        relative_error,
        support: support(&result.state.x),
        true_support,
        runtime_s,
    })
}

pub fn trace_csv(trace: &[IterRecord]) -> String {
    let mut s = format!(
        "# schema {TRACE_SCHEMA}\nt,objective,objective_after_x,residual,cgls_iters,stop_reason,switched,epoch,rel_change,convex_count\n"
    );
    for r in trace {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{},{},{},{},{:?},{}\n",
            r.t,
            r.objective,
            r.objective_after_x,
            r.residual,
            r.cgls_iters,
            r.stop_reason.as_str(),
            r.switched,
            r.epoch,
            r.rel_change,
            r.convex_count()
        ));
    }
    s
}

/// One row per iteration: `t,` followed by a `0`/`1` string over components.
pub fn convexity_csv(trace: &[IterRecord]) -> String {
    let mut s = String::from("t,convex\n");
    for r in trace {
        s.push_str(&r.t.to_string());
        s.push(',');
        s.extend(r.convex.iter().map(|&c| if c { '1' } else { '0' }));
        s.push('\n');
    }
    s
}

/// Everything a finished (or failed) run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub problem: Problem,
    pub result: IasRun,
    pub metrics: Metrics,
}

/// Builds and solves `cfg` without touching the file system.
pub fn solve(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let problem = build_problem(cfg)?;
    let controls = build_controls(cfg, &problem)?;
    let t0 = Instant::now();
    let result = run(&problem, &controls).map_err(|f| f.error)?;
    let metrics = metrics(&problem, &controls.mode, &result, t0.elapsed().as_secs_f64())?;
    Ok(RunOutcome {
        problem,
        result,
        metrics,
    })
}

/// Solves `cfg` and writes config, reconstruction, variances, trace,
/// convexity map and metrics into `out`. A solver failure still writes the
/// partial trace before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let problem = build_problem(cfg)?;
    let controls = build_controls(cfg, &problem)?;
    ensure_dir(out)?;
    atomic_write(&out.join("config.txt"), cfg.serialize().as_bytes())?;
    let t0 = Instant::now();
    let result = match run(&problem, &controls) {
        Ok(r) => r,
        Err(f) => {
            atomic_write(&out.join("trace.csv"), trace_csv(&f.trace).as_bytes())?;
            return Err(f.error);
        }
    };
    let metrics = metrics(&problem, &controls.mode, &result, t0.elapsed().as_secs_f64())?;

    write_vector(&out.join("reconstruction.csv"), &result.state.signal)?;
    write_vector(&out.join("coefficients.csv"), &result.state.x)?;
    write_vector(&out.join("theta.csv"), &result.state.theta)?;
    atomic_write(&out.join("trace.csv"), trace_csv(&result.trace).as_bytes())?;
    atomic_write(&out.join("convexity.csv"), convexity_csv(&result.trace).as_bytes())?;
    if let Some((h, w)) = problem.image_shape {
        write_pgm16(&out.join("reconstruction.pgm"), w, h, &result.state.signal)?;
    }
    let mut m = String::new();
    for (k, v) in metrics.rows() {
        m.push_str(&format!("{k},{v}\n"));
    }
    atomic_write(&out.join("metrics.csv"), m.as_bytes())?;
    Ok(RunOutcome {
        problem,
        result,
        metrics,
    })
}

/// Synthesizes the data of `cfg` and writes it, with the generative signal,
/// into `out`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Problem> {
    let problem = build_problem(cfg)?;
    ensure_dir(out)?;
    atomic_write(&out.join("config.txt"), cfg.serialize().as_bytes())?;
    write_vector(&out.join("data.csv"), &problem.b)?;
    atomic_write(&out.join("sigma.txt"), format!("{:?}\n", problem.sigma).as_bytes())?;
    if let Some(t) = &problem.truth {
        write_vector(&out.join("truth.csv"), t)?;
        if let Some((h, w)) = problem.image_shape {
            write_pgm16(&out.join("truth.pgm"), w, h, t)?;
        }
    }
    Ok(problem)
}

const COMPARED: [&str; 9] = [
    "iterations",
    "cgls_total",
    "cgls_final",
    "relative_error",
    "support_size",
    "false_positives",
    "precision",
    "recall",
    "runtime_s",
];

/// Side-by-side metrics of two run directories as `metric,a,b,delta` rows.
pub fn compare(a: &Path, b: &Path) -> Result<String> {
    let ma = read_key_values(&a.join("metrics.csv"))?;
    let mb = read_key_values(&b.join("metrics.csv"))?;
    let get = |m: &[(String, String)], k: &str| m.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    let mut s = String::from("metric,a,b,delta\n");
    for k in COMPARED {
        let (va, vb) = (get(&ma, k), get(&mb, k));
        let delta = match (va.as_deref().and_then(|v| v.parse::<f64>().ok()), vb.as_deref().and_then(|v| v.parse::<f64>().ok())) {
            (Some(x), Some(y)) => format!("{:?}", y - x),
            _ => "na".into(),
        };
        s.push_str(&format!(
            "{k},{},{},{delta}\n",
            va.unwrap_or_else(|| "na".into()),
            vb.unwrap_or_else(|| "na".into())
        ));
    }
    Ok(s)
}
