//! Flat `key = value` experiment configuration with preset inheritance.
//!
//! A config file is a list of `key = value` lines; `#` starts a comment. A
//! `preset = NAME` line (anywhere in the file) selects the base configuration
//! and every other line overrides one field of it. Serialization writes every
//! field, so `parse(serialize(c)) == c`.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::forward::{Deblur2d, Deconv1d, StarryNight, StepSignal};
use crate::krylov::StopCombination;
use crate::operators::InnerSolver;

pub const PRESETS: [&str; 12] = [
    "example1-plain-gamma",
    "example1-plain-invgamma",
    "example1-local-hybrid",
    "example1-global-hybrid",
    "example2-plain-gamma",
    "example2-plain-invgamma",
    "example2-local-hybrid",
    "example2-global-hybrid",
    "example3-plain-gamma",
    "example3-plain-invgamma",
    "example3-local-hybrid",
    "example3-global-hybrid",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemConfig {
    Deconv1d(Deconv1d),
    Deblur2d(Deblur2d),
    StarryNight(StarryNight),
    MatrixFile(MatrixFile),
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Deconv1d(_) => "deconv1d",
            ProblemConfig::Deblur2d(_) => "deblur2d",
            ProblemConfig::StarryNight(_) => "starry-night",
            ProblemConfig::MatrixFile(_) => "matrix-file",
        }
    }

    fn default_for(kind: &str) -> Option<Self> {
        Some(match kind {
            "deconv1d" => ProblemConfig::Deconv1d(Deconv1d::default()),
            "deblur2d" => ProblemConfig::Deblur2d(Deblur2d::default()),
            "starry-night" => ProblemConfig::StarryNight(StarryNight::default()),
            "matrix-file" => ProblemConfig::MatrixFile(MatrixFile::default()),
            _ => return None,
        })
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            ProblemConfig::Deconv1d(p) => Some(p.seed),
            ProblemConfig::Deblur2d(p) => Some(p.seed),
            ProblemConfig::StarryNight(p) => Some(p.seed),
            ProblemConfig::MatrixFile(_) => None,
        }
    }
}

/// A user-supplied dense matrix and data vector, both as delimited text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatrixFile {
    pub matrix: PathBuf,
    pub data: PathBuf,
    pub truth: Option<PathBuf>,
    /// Noise standard deviation; matrix and data are divided by it.
    pub sigma: f64,
    pub increments: bool,
}

/// How the scale vector `ϑ` of a hypermodel is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleSpec {
    Value(f64),
    /// `ϑ_j = C / ‖A e_j‖²`.
    Sensitivity(f64),
    /// Background-matched to the first model (second model only).
    Matched,
}

impl ScaleSpec {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s == "matched" {
            return Ok(ScaleSpec::Matched);
        }
        if let Some(inner) = s.strip_prefix("sensitivity(").and_then(|r| r.strip_suffix(')')) {
            return parse_f64(inner.trim()).map(ScaleSpec::Sensitivity);
        }
        parse_f64(s).map(ScaleSpec::Value)
    }

    fn render(&self) -> String {
        match self {
            ScaleSpec::Value(v) => format!("{v:?}"),
            ScaleSpec::Sensitivity(c) => format!("sensitivity({c:?})"),
            ScaleSpec::Matched => "matched".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub r: f64,
    pub eta: f64,
    pub vartheta: ScaleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Plain,
    LocalHybrid,
    GlobalHybrid,
}

impl ModeKind {
    pub fn name(self) -> &'static str {
        match self {
            ModeKind::Plain => "plain",
            ModeKind::LocalHybrid => "local-hybrid",
            ModeKind::GlobalHybrid => "global-hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XSolveKind {
    Rks,
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Preset this config was derived from, if any. Informational only.
    pub preset: Option<String>,
    pub problem: ProblemConfig,
    pub mode: ModeKind,
    /// Plain mode uses only this model.
    pub model1: ModelSpec,
    pub model2: ModelSpec,
    pub switch_at: usize,
    pub tau: f64,
    pub stop: StopCombination,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub x_solve: XSolveKind,
    pub cgls_max_iters: Option<usize>,
    pub reorthogonalize: bool,
    pub box_bounds: Option<(f64, f64)>,
    pub projection: bool,
    pub inner: InnerSolver,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (example, variant) = name
            .split_once('-')
            .ok_or_else(|| Error::config("preset", format!("unknown preset '{name}'")))?;
        let (problem, gamma, invgamma, tau) = match example {
            "example1" => (ProblemConfig::Deconv1d(Deconv1d::default()), (1e-2, 1e-5), (-4.5, 1e-5), 1.1),
            "example2" => (ProblemConfig::Deblur2d(Deblur2d::default()), (1e-4, 1e-3), (-6.5, 1e-4), 1.01),
            "example3" => (ProblemConfig::StarryNight(StarryNight::default()), (1e-5, 1e-4), (-4.5, 1e-6), 1.01),
            _ => return Err(Error::config("preset", format!("unknown preset '{name}'"))),
        };
        let m_gamma = ModelSpec {
            r: 1.0,
            eta: gamma.0,
            vartheta: ScaleSpec::Value(gamma.1),
        };
        let m_inv = ModelSpec {
            r: -1.0,
            eta: invgamma.0,
            vartheta: ScaleSpec::Value(invgamma.1),
        };
        let matched = ModelSpec {
            vartheta: ScaleSpec::Matched,
            ..m_inv
        };
        let (mode, model1, model2) = match variant {
            "plain-gamma" => (ModeKind::Plain, m_gamma, matched),
            "plain-invgamma" => (ModeKind::Plain, m_inv, matched),
            "local-hybrid" => (ModeKind::LocalHybrid, m_gamma, matched),
            "global-hybrid" => (ModeKind::GlobalHybrid, m_gamma, matched),
            _ => return Err(Error::config("preset", format!("unknown preset '{name}'"))),
        };
        Ok(ExperimentConfig {
            preset: Some(name.to_string()),
            problem,
            mode,
            model1,
            model2,
            switch_at: 10,
            tau,
            stop: StopCombination::Both,
            outer_tol: 1e-6,
            max_outer: 200,
            x_solve: XSolveKind::Rks,
            cgls_max_iters: None,
            reorthogonalize: false,
            box_bounds: None,
            projection: false,
            inner: InnerSolver::Direct,
            out: None,
        })
    }

    /// Parses config text. Without a `preset` line the base is
    /// `example1-plain-gamma`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("line {}", i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&loc, format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(&loc, "empty key"));
            }
            entries.push((loc, k.to_string(), v.to_string()));
        }
        let presets: Vec<_> = entries.iter().filter(|e| e.1 == "preset").collect();
        if presets.len() > 1 {
            return Err(Error::config(&presets[1].0, "preset given more than once"));
        }
        let mut cfg = match presets.first() {
            Some((loc, _, v)) => Self::preset(v).map_err(|_| Error::config(loc, format!("unknown preset '{v}'")))?,
            None => {
                let mut c = Self::preset("example1-plain-gamma")?;
                c.preset = None;
                c
            }
        };
        // the problem kind resets problem parameters, so it goes first
        if let Some((loc, k, v)) = entries.iter().find(|e| e.1 == "problem") {
            cfg.set(k, v).map_err(|m| Error::config(format!("{loc}, field '{k}'"), m))?;
        }
        for (loc, k, v) in &entries {
            if k == "preset" || k == "problem" {
                continue;
            }
            cfg.set(k, v).map_err(|m| Error::config(format!("{loc}, field '{k}'"), m))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override, as given on a command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let loc = format!("override '{kv}'");
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(&loc, "expected key=value"))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "preset" {
            return Err(Error::config(&loc, "the preset cannot be overridden"));
        }
        self.set(k, v).map_err(|m| Error::config(format!("{loc}, field '{k}'"), m))
    }

    pub fn set_seed(&mut self, seed: u64) -> Result<()> {
        match &mut self.problem {
            ProblemConfig::Deconv1d(p) => p.seed = seed,
            ProblemConfig::Deblur2d(p) => p.seed = seed,
            ProblemConfig::StarryNight(p) => p.seed = seed,
            ProblemConfig::MatrixFile(_) => {
                return Err(Error::config("seed", "matrix-file problems have no generator seed"))
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        if let Some(field) = key.strip_prefix("model1.") {
            return set_model(&mut self.model1, field, v);
        }
        if let Some(field) = key.strip_prefix("model2.") {
            return set_model(&mut self.model2, field, v);
        }
        match key {
            "problem" => {
                if self.problem.kind() != v {
                    self.problem = ProblemConfig::default_for(v).ok_or_else(|| {
                        format!("unknown problem '{v}' (deconv1d, deblur2d, starry-night, matrix-file)")
                    })?;
                }
            }
            "mode" => {
                self.mode = match v {
                    "plain" => ModeKind::Plain,
                    "local-hybrid" => ModeKind::LocalHybrid,
                    "global-hybrid" => ModeKind::GlobalHybrid,
                    _ => return Err(format!("unknown mode '{v}' (plain, local-hybrid, global-hybrid)")),
                }
            }
            "switch_at" => self.switch_at = parse_usize(v)?,
            "tau" => self.tau = parse_f64(v)?,
            "stop" => {
                self.stop = match v {
                    "both" => StopCombination::Both,
                    "either" => StopCombination::Either,
                    _ => return Err(format!("unknown stop rule '{v}' (both, either)")),
                }
            }
            "outer_tol" => self.outer_tol = parse_f64(v)?,
            "max_outer" => self.max_outer = parse_usize(v)?,
            "x_solve" => {
                self.x_solve = match v {
                    "rks" => XSolveKind::Rks,
                    "exact" => XSolveKind::Exact,
                    _ => return Err(format!("unknown x_solve '{v}' (rks, exact)")),
                }
            }
            "cgls_max_iters" => self.cgls_max_iters = parse_opt(v, parse_usize)?,
            "reorthogonalize" => self.reorthogonalize = parse_bool(v)?,
            "box" => {
                self.box_bounds = parse_opt(v, |s| {
                    let (lo, hi) = s.split_once(',').ok_or("expected 'lower,upper' or 'none'")?;
                    Ok((parse_f64(lo.trim())?, parse_f64(hi.trim())?))
                })?
            }
            "projection" => self.projection = parse_bool(v)?,
            "inner" => {
                self.inner = if v == "direct" {
                    InnerSolver::Direct
                } else if let Some(args) = v.strip_prefix("cg(").and_then(|r| r.strip_suffix(')')) {
                    let (tol, it) = args.split_once(',').ok_or("expected cg(tol,max_iters)")?;
                    InnerSolver::Cg {
                        tol: parse_f64(tol.trim())?,
                        max_iters: parse_usize(it.trim())?,
                    }
                } else {
                    return Err(format!("unknown inner solver '{v}' (direct, cg(tol,max_iters))"));
                }
            }
            "out" => self.out = parse_opt(v, |s| Ok(PathBuf::from(s)))?,
            _ => return self.set_problem(key, v),
        }
        Ok(())
    }

    fn set_problem(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let kind = self.problem.kind();
        let unknown = || format!("unknown key for problem '{kind}'");
        match &mut self.problem {
            ProblemConfig::Deconv1d(p) => match key {
                "n" => p.n = parse_usize(v)?,
                "m" => p.m = parse_usize(v)?,
                "kappa" => p.kappa = parse_f64(v)?,
                "n_dense" => p.n_dense = parse_usize(v)?,
                "noise_pct" => p.noise_pct = parse_f64(v)?,
                "seed" => p.seed = parse_u64(v)?,
                "signal" => p.signal = parse_signal(v)?,
                _ => return Err(unknown()),
            },
            ProblemConfig::Deblur2d(p) => match key {
                "grid_n" => p.grid_n = parse_usize(v)?,
                "obs_m" => p.obs_m = parse_usize(v)?,
                "width" => p.width = parse_f64(v)?,
                "noise_pct" => p.noise_pct = parse_f64(v)?,
                "seed" => p.seed = parse_u64(v)?,
                "refine" => p.refine = parse_usize(v)?,
                _ => return Err(unknown()),
            },
            ProblemConfig::StarryNight(p) => match key {
                "grid_n" => p.grid_n = parse_usize(v)?,
                "obs_m" => p.obs_m = parse_usize(v)?,
                "width" => p.width = parse_f64(v)?,
                "stars" => p.stars = parse_usize(v)?,
                "noise_pct" => p.noise_pct = parse_f64(v)?,
                "seed" => p.seed = parse_u64(v)?,
                _ => return Err(unknown()),
            },
            ProblemConfig::MatrixFile(p) => match key {
                "matrix" => p.matrix = PathBuf::from(v),
                "data" => p.data = PathBuf::from(v),
                "truth" => p.truth = parse_opt(v, |s| Ok(PathBuf::from(s)))?,
                "sigma" => p.sigma = parse_f64(v)?,
                "representation" => {
                    p.increments = match v {
                        "direct" => false,
                        "increments" => true,
                        _ => return Err(format!("unknown representation '{v}' (direct, increments)")),
                    }
                }
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    /// Writes every field; the output parses back to an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.preset {
            kv("preset", p.clone());
        }
        kv("problem", self.problem.kind().into());
        match &self.problem {
            ProblemConfig::Deconv1d(p) => {
                kv("n", p.n.to_string());
                kv("m", p.m.to_string());
                kv("kappa", format!("{:?}", p.kappa));
                kv("n_dense", p.n_dense.to_string());
                kv("noise_pct", format!("{:?}", p.noise_pct));
                kv("seed", p.seed.to_string());
                kv("signal", render_signal(&p.signal));
            }
            ProblemConfig::Deblur2d(p) => {
                kv("grid_n", p.grid_n.to_string());
                kv("obs_m", p.obs_m.to_string());
                kv("width", format!("{:?}", p.width));
                kv("noise_pct", format!("{:?}", p.noise_pct));
                kv("seed", p.seed.to_string());
                kv("refine", p.refine.to_string());
            }
            ProblemConfig::StarryNight(p) => {
                kv("grid_n", p.grid_n.to_string());
                kv("obs_m", p.obs_m.to_string());
                kv("width", format!("{:?}", p.width));
                kv("stars", p.stars.to_string());
                kv("noise_pct", format!("{:?}", p.noise_pct));
                kv("seed", p.seed.to_string());
            }
            ProblemConfig::MatrixFile(p) => {
                kv("matrix", p.matrix.display().to_string());
                kv("data", p.data.display().to_string());
                kv("truth", p.truth.as_ref().map_or("none".into(), |t| t.display().to_string()));
                kv("sigma", format!("{:?}", p.sigma));
                kv("representation", if p.increments { "increments" } else { "direct" }.into());
            }
        }
        kv("mode", self.mode.name().into());
        for (name, m) in [("model1", &self.model1), ("model2", &self.model2)] {
            kv(&format!("{name}.r"), format!("{:?}", m.r));
            kv(&format!("{name}.eta"), format!("{:?}", m.eta));
            kv(&format!("{name}.vartheta"), m.vartheta.render());
        }
        kv("switch_at", self.switch_at.to_string());
        kv("tau", format!("{:?}", self.tau));
        kv(
            "stop",
            match self.stop {
                StopCombination::Both => "both",
                StopCombination::Either => "either",
            }
            .into(),
        );
        kv("outer_tol", format!("{:?}", self.outer_tol));
        kv("max_outer", self.max_outer.to_string());
        kv(
            "x_solve",
            match self.x_solve {
                XSolveKind::Rks => "rks",
                XSolveKind::Exact => "exact",
            }
            .into(),
        );
        kv("cgls_max_iters", self.cgls_max_iters.map_or("none".into(), |k| k.to_string()));
        kv("reorthogonalize", self.reorthogonalize.to_string());
        kv("box", self.box_bounds.map_or("none".into(), |(lo, hi)| format!("{lo:?},{hi:?}")));
        kv("projection", self.projection.to_string());
        kv(
            "inner",
            match self.inner {
                InnerSolver::Direct => "direct".into(),
                InnerSolver::Cg { tol, max_iters } => format!("cg({tol:?},{max_iters})"),
            },
        );
        kv("out", self.out.as_ref().map_or("none".into(), |p| p.display().to_string()));
        s
    }
}

fn set_model(m: &mut ModelSpec, field: &str, v: &str) -> std::result::Result<(), String> {
    match field {
        "r" => m.r = parse_f64(v)?,
        "eta" => m.eta = parse_f64(v)?,
        "beta" => m.eta = m.r * parse_f64(v)? - 1.5,
        "vartheta" => m.vartheta = ScaleSpec::parse(v)?,
        _ => return Err("unknown model field (r, eta, beta, vartheta)".into()),
    }
    Ok(())
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, got '{s}'")),
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    s.parse().map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn parse_opt<T>(
    s: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Option<T>, String> {
    if s == "none" {
        Ok(None)
    } else {
        f(s).map(Some)
    }
}

/// `pos:level,pos:level,...`
fn parse_signal(s: &str) -> std::result::Result<StepSignal, String> {
    let steps = s
        .split(',')
        .map(|item| {
            let (p, l) = item.split_once(':').ok_or_else(|| format!("expected 'position:level', got '{item}'"))?;
            Ok((parse_f64(p.trim())?, parse_f64(l.trim())?))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    StepSignal::new(steps).map_err(|e| e.to_string())
}

fn render_signal(s: &StepSignal) -> String {
    s.steps.iter().map(|(p, l)| format!("{p:?}:{l:?}")).collect::<Vec<_>>().join(",")
}
