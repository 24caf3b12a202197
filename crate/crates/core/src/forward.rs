//! Forward models and synthetic data for the three reference experiments.
//!
//! * 1D deconvolution with the Airy kernel `(J₁(κ|t|)/(κ|t|))²`, solved for
//!   the increments of a piecewise constant signal.
//! * 2D Gaussian deblurring of a piecewise constant phantom, solved for the
//!   edge increments of the image.
//! * Recovery of a sparse "starry night" impulse image through the same blur.
//!
//! Data are whitened: the returned forward map and data vector are divided by
//! the noise level, so the discrepancy target is `√m`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::operators::{check_len, norm, DenseMatrix, IncrementGraph, LinearMap, Op, Scaled};

/// How the IAS unknowns relate to the signal `x` seen by the forward map.
#[derive(Debug, Clone)]
pub enum Representation {
    /// The signal itself is sparse.
    Direct,
    /// 1D increments `z = L x` with `x₀ = 0`, so `x = L⁻¹ z`.
    Increments1D,
    /// Edge increments on a grid graph; the signal lives on free nodes.
    Increments2D(Arc<IncrementGraph>),
}

impl Representation {
    pub fn name(&self) -> &'static str {
        match self {
            Representation::Direct => "direct",
            Representation::Increments1D => "increments1d",
            Representation::Increments2D(_) => "increments2d",
        }
    }
}

/// A whitened linear inverse problem `b = A x + e`, `e ~ N(0, I)`.
#[derive(Clone)]
pub struct Problem {
    /// Whitened forward map acting on the signal.
    pub a: Op,
    /// Whitened data.
    pub b: Vec<f64>,
    pub representation: Representation,
    /// Generative signal on the inversion grid, when known.
    pub truth: Option<Vec<f64>>,
    /// Noise standard deviation used for whitening.
    pub sigma: f64,
    /// `(rows, cols)` when the signal is an image stored row-major.
    pub image_shape: Option<(usize, usize)>,
}

impl Problem {
    pub fn new(a: Op, b: Vec<f64>, representation: Representation) -> Result<Self> {
        check_len("data", b.len(), a.rows())?;
        if let Representation::Increments2D(g) = &representation {
            check_len("graph free nodes", g.n_v(), a.cols())?;
        }
        Ok(Problem {
            a,
            b,
            representation,
            truth: None,
            sigma: 1.0,
            image_shape: None,
        })
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// Length of the signal.
    pub fn signal_len(&self) -> usize {
        self.a.cols()
    }

    /// Number of IAS unknowns (and variances).
    pub fn n(&self) -> usize {
        match &self.representation {
            Representation::Increments2D(g) => g.n_e(),
            _ => self.a.cols(),
        }
    }

    /// Sparse coefficients of a signal in this problem's representation.
    pub fn coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("signal", x.len(), self.signal_len())?;
        Ok(match &self.representation {
            Representation::Direct => x.to_vec(),
            Representation::Increments1D => {
                let mut prev = 0.0;
                x.iter()
                    .map(|&v| {
                        let d = v - prev;
                        prev = v;
                        d
                    })
                    .collect()
            }
            Representation::Increments2D(g) => g.increments(x)?,
        })
    }
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("m", &self.m())
            .field("n", &self.n())
            .field("representation", &self.representation.name())
            .field("sigma", &self.sigma)
            .finish()
    }
}

/// Bessel function of the first kind, order one.
///
/// Power series for `|t| ≤ 12`, Hankel asymptotic expansion beyond.
pub fn bessel_j1(t: f64) -> f64 {
    let x = t.abs();
    let v = if x <= 12.0 { j1_series(x) } else { j1_asymptotic(x) };
    if t < 0.0 {
        -v
    } else {
        v
    }
}

fn j1_series(x: f64) -> f64 {
    let h = 0.5 * x;
    let q = -h * h;
    let mut term = h;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) {
            return sum;
        }
    }
}

fn j1_asymptotic(x: f64) -> f64 {
    // a_k = a_{k-1} (4 − (2k−1)²) / (8k); P collects even k, Q odd k
    let (mut p, mut q) = (1.0, 0.0);
    let mut term: f64 = 1.0;
    let mut k = 1usize;
    loop {
        let kf = k as f64;
        let next = term * (4.0 - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * x);
        if next.abs() >= term.abs() || next.abs() < 1e-17 {
            break;
        }
        term = next;
        let sign = if (k / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
        if k.is_multiple_of(2) {
            p += sign * term;
        } else {
            q += sign * term;
        }
        k += 1;
    }
    let chi = x - 0.75 * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// `A(t) = (J₁(κ|t|)/(κ|t|))²`, with `A(0) = 1/4`.
pub fn airy_kernel(t: f64, kappa: f64) -> f64 {
    let s = kappa * t.abs();
    if s == 0.0 {
        return 0.25;
    }
    let v = bessel_j1(s) / s;
    v * v
}

/// Trapezoid-rule discretization `A_{jk} = w_k A(s_j − t_k)` on
/// `t_k = k/(n−1)` with observation points `s_j = (4 + j)/100`, `j = 1..m`.
pub fn build_deconv_1d(n: usize, m: usize, kappa: f64) -> Result<DenseMatrix> {
    let s: Vec<f64> = (1..=m).map(|j| (4 + j) as f64 / 100.0).collect();
    deconv_matrix(n, &s, kappa)
}

fn deconv_matrix(n: usize, s: &[f64], kappa: f64) -> Result<DenseMatrix> {
    if n < 2 {
        return Err(Error::InvalidModel(format!("quadrature needs n >= 2, got {n}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidModel(format!("kappa must be positive, got {kappa}")));
    }
    let h = 1.0 / (n - 1) as f64;
    let a = DMatrix::from_fn(s.len(), n, |j, k| {
        let w = if k == 0 || k == n - 1 { 0.5 * h } else { h };
        w * airy_kernel(s[j] - k as f64 * h, kappa)
    });
    Ok(DenseMatrix(a))
}

/// Isotropic Gaussian `exp(−‖p − q‖²/(2w²)) / (2πw²)`.
pub fn gaussian_kernel(p: (f64, f64), q: (f64, f64), w: f64) -> f64 {
    let d2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
    (-d2 / (2.0 * w * w)).exp() / (2.0 * PI * w * w)
}

/// Separable 2D blur `A = c · K ⊗ K` between row-major images: the input is
/// `n × n`, the output `m × m`, and `K_{ik} = exp(−(s_i − c_k)²/(2w²))`.
#[derive(Debug, Clone)]
pub struct SeparableBlur {
    k: DMatrix<f64>,
    scale: f64,
}

impl SeparableBlur {
    /// Kernel between observation coordinates `s` and pixel centres `c`.
    pub fn new(s: &[f64], c: &[f64], w: f64, scale: f64) -> Self {
        let k = DMatrix::from_fn(s.len(), c.len(), |i, j| (-(s[i] - c[j]).powi(2) / (2.0 * w * w)).exp());
        SeparableBlur { k, scale }
    }

    pub fn grid_n(&self) -> usize {
        self.k.ncols()
    }

    pub fn obs_m(&self) -> usize {
        self.k.nrows()
    }
}

impl LinearMap for SeparableBlur {
    fn rows(&self) -> usize {
        self.obs_m() * self.obs_m()
    }

    fn cols(&self) -> usize {
        self.grid_n() * self.grid_n()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let (n, m) = (self.grid_n(), self.obs_m());
        // row-major n×n image is the column-major matrix Xᵀ
        let xt = DMatrix::from_column_slice(n, n, x);
        let yt = &self.k * xt * self.k.transpose() * self.scale;
        y.copy_from_slice(yt.as_slice());
        debug_assert_eq!(yt.len(), m * m);
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        let m = self.obs_m();
        let ut = DMatrix::from_column_slice(m, m, u);
        let vt = self.k.transpose() * ut * &self.k * self.scale;
        v.copy_from_slice(vt.as_slice());
        Ok(())
    }

    fn column_norms_sq(&self) -> Result<Vec<f64>> {
        let c: Vec<f64> = self.k.column_iter().map(|col| col.norm_squared()).collect();
        let s2 = self.scale * self.scale;
        Ok(c.iter().flat_map(|ci| c.iter().map(move |cj| s2 * ci * cj)).collect())
    }
}

fn cell_centres(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// `A_{jℓ} = |Ω_ℓ| G(q_j, q′_ℓ)` with pixel centres `q′_ℓ` of a
/// `grid_n × grid_n` partition of the unit square and observation points
/// `q_j` on a cell-centred `obs_m × obs_m` lattice.
pub fn build_blur_2d(grid_n: usize, obs_m: usize, w: f64) -> Result<SeparableBlur> {
    if grid_n == 0 || obs_m == 0 {
        return Err(Error::DegenerateGrid);
    }
    if !(w > 0.0) {
        return Err(Error::InvalidModel(format!("kernel width must be positive, got {w}")));
    }
    let area = 1.0 / (grid_n * grid_n) as f64;
    Ok(SeparableBlur::new(
        &cell_centres(obs_m),
        &cell_centres(grid_n),
        w,
        area / (2.0 * PI * w * w),
    ))
}

/// The seeded generator used for all synthetic data.
pub fn data_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Noise level `σ = (pct/100) · max|clean|`.
pub fn noise_sigma(clean: &[f64], noise_pct: f64) -> Result<f64> {
    if !(noise_pct >= 0.0) {
        return Err(Error::InvalidModel(format!("noise level must be nonnegative, got {noise_pct}")));
    }
    if noise_pct == 0.0 {
        return Ok(1.0);
    }
    let peak = clean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    Ok(noise_pct / 100.0 * peak)
}

/// Add seeded white noise to `clean` and whiten. Returns `(b/σ, σ)`; with
/// `noise_pct = 0` the data are returned unchanged with `σ = 1`.
pub fn add_noise(clean: &[f64], noise_pct: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    let sigma = noise_sigma(clean, noise_pct)?;
    if noise_pct == 0.0 {
        return Ok((clean.to_vec(), 1.0));
    }
    let mut rng = data_rng(seed, 1);
    let b = clean
        .iter()
        .map(|c| {
            let e: f64 = rng.sample(StandardNormal);
            c / sigma + e
        })
        .collect();
    Ok((b, sigma))
}

/// `clean = A x_true`, then [`add_noise`].
pub fn synth_data(a: &dyn LinearMap, x_true: &[f64], noise_pct: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    let clean = a.apply(x_true)?;
    add_noise(&clean, noise_pct, seed)
}

/// Power signal-to-noise ratio `‖clean‖² / ‖noisy − clean‖²`.
pub fn snr(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = clean.iter().zip(noisy).map(|(c, b)| b - c).collect();
    (norm(clean) / norm(&noise)).powi(2)
}

/// Piecewise constant signal on `[0, 1]`, zero left of the first jump;
/// each `(position, value)` sets the value from that position on.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSignal {
    pub steps: Vec<(f64, f64)>,
}

impl StepSignal {
    pub fn new(mut steps: Vec<(f64, f64)>) -> Result<Self> {
        if steps.iter().any(|(p, v)| !p.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidModel("step signal must be finite".into()));
        }
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(StepSignal { steps })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.steps.iter().take_while(|(p, _)| *p <= t).last().map_or(0.0, |s| s.1)
    }

    /// Samples on `t_k = k/(n−1)`.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        let h = 1.0 / (n.max(2) - 1) as f64;
        (0..n).map(|k| self.eval(k as f64 * h)).collect()
    }

    /// Grid index of each jump on `n` samples: first `k` with `t_k ≥ p`.
    pub fn jump_indices(&self, n: usize) -> Vec<usize> {
        let s = self.sample(n);
        let mut prev = 0.0;
        let mut out = Vec::new();
        for (k, &v) in s.iter().enumerate() {
            if v != prev {
                out.push(k);
            }
            prev = v;
        }
        out
    }
}

/// Parameters of the 1D deconvolution experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv1d {
    pub n: usize,
    pub m: usize,
    pub kappa: f64,
    /// Grid used to synthesize the data.
    pub n_dense: usize,
    pub noise_pct: f64,
    pub seed: u64,
    pub signal: StepSignal,
}

impl Default for Deconv1d {
    fn default() -> Self {
        Deconv1d {
            n: 500,
            m: 91,
            kappa: 40.0,
            n_dense: 1253,
            noise_pct: 2.0,
            seed: 2,
            signal: StepSignal {
                steps: vec![(0.10, -0.9), (0.15, 0.7), (0.40, -0.8), (0.65, 0.8), (0.85, 0.0)],
            },
        }
    }
}

impl Deconv1d {
    /// Clean data from the dense grid.
    pub fn clean_data(&self) -> Result<Vec<f64>> {
        let dense = build_deconv_1d(self.n_dense, self.m, self.kappa)?;
        dense.apply(&self.signal.sample(self.n_dense))
    }

    pub fn problem(&self) -> Result<Problem> {
        let clean = self.clean_data()?;
        let (b, sigma) = add_noise(&clean, self.noise_pct, self.seed)?;
        self.problem_from_data(b, sigma)
    }

    /// Problem for already whitened data `b` at noise level `sigma`.
    pub fn problem_from_data(&self, b: Vec<f64>, sigma: f64) -> Result<Problem> {
        let a = build_deconv_1d(self.n, self.m, self.kappa)?;
        let a: Op = Arc::new(Scaled::new(a.into_op(), 1.0 / sigma));
        let mut p = Problem::new(a, b, Representation::Increments1D)?;
        p.truth = Some(self.signal.sample(self.n));
        p.sigma = sigma;
        Ok(p)
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` or disk, with a grey value.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Rect { x0: f64, x1: f64, y0: f64, y1: f64, value: f64 },
    Disk { cx: f64, cy: f64, radius: f64, value: f64 },
}

/// Piecewise constant image on the unit square; later shapes paint over
/// earlier ones. `x` runs along columns, `y` down the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub shapes: Vec<Shape>,
}

impl Default for Phantom {
    fn default() -> Self {
        Phantom {
            shapes: vec![
                Shape::Rect { x0: 0.12, x1: 0.48, y0: 0.15, y1: 0.55, value: 0.5 },
                Shape::Rect { x0: 0.55, x1: 0.88, y0: 0.12, y1: 0.38, value: 1.0 },
                Shape::Rect { x0: 0.20, x1: 0.35, y0: 0.65, y1: 0.88, value: 0.8 },
                Shape::Disk { cx: 0.68, cy: 0.68, radius: 0.17, value: 0.7 },
            ],
        }
    }
}

impl Phantom {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        for s in &self.shapes {
            match *s {
                Shape::Rect { x0, x1, y0, y1, value } => {
                    if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                        v = value;
                    }
                }
                Shape::Disk { cx, cy, radius, value } => {
                    if (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius {
                        v = value;
                    }
                }
            }
        }
        v
    }

    /// Pixel-centre samples on an `n × n` grid, row-major.
    pub fn rasterize(&self, n: usize) -> Vec<f64> {
        let c = cell_centres(n);
        let mut out = Vec::with_capacity(n * n);
        for &y in &c {
            for &x in &c {
                out.push(self.eval(x, y));
            }
        }
        out
    }

    /// Pixel averages over `n × n` pixels from `f × f` sub-samples each.
    pub fn pixel_average(&self, n: usize, f: usize) -> Vec<f64> {
        let fine = self.rasterize(n * f);
        coarsen(&fine, n * f, f)
    }
}

fn coarsen(fine: &[f64], nf: usize, f: usize) -> Vec<f64> {
    let n = nf / f;
    let mut out = vec![0.0; n * n];
    for r in 0..nf {
        for c in 0..nf {
            out[(r / f) * n + c / f] += fine[r * nf + c];
        }
    }
    let w = 1.0 / (f * f) as f64;
    out.iter_mut().for_each(|v| *v *= w);
    out
}

/// Parameters of the 2D deblurring experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Deblur2d {
    pub grid_n: usize,
    pub obs_m: usize,
    pub width: f64,
    pub noise_pct: f64,
    pub seed: u64,
    /// Data are synthesized on a grid refined by this factor.
    pub refine: usize,
    pub phantom: Phantom,
}

impl Default for Deblur2d {
    fn default() -> Self {
        Deblur2d {
            grid_n: 136,
            obs_m: 68,
            width: 0.015,
            noise_pct: 2.0,
            seed: 1,
            refine: 2,
            phantom: Phantom::default(),
        }
    }
}

impl Deblur2d {
    pub fn clean_data(&self) -> Result<Vec<f64>> {
        let nf = self.grid_n * self.refine.max(1);
        let fine = build_blur_2d(nf, self.obs_m, self.width)?;
        fine.apply(&self.phantom.rasterize(nf))
    }

    pub fn problem(&self) -> Result<Problem> {
        let clean = self.clean_data()?;
        let (b, sigma) = add_noise(&clean, self.noise_pct, self.seed)?;
        self.problem_from_data(b, sigma)
    }

    pub fn problem_from_data(&self, b: Vec<f64>, sigma: f64) -> Result<Problem> {
        let n = self.grid_n;
        let a: Op = Arc::new(Scaled::new(Arc::new(build_blur_2d(n, self.obs_m, self.width)?), 1.0 / sigma));
        let graph = Arc::new(IncrementGraph::for_image(n, n)?);
        let mut p = Problem::new(a, b, Representation::Increments2D(graph))?;
        p.truth = Some(self.phantom.pixel_average(n, 4));
        p.sigma = sigma;
        p.image_shape = Some((n, n));
        Ok(p)
    }
}

/// Point sources `(x, y, amplitude)`, positions uniform on the unit square
/// and amplitudes uniform on `[1.5, 2]`.
pub fn star_sources(count: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = data_rng(seed, 0);
    (0..count)
        .map(|_| {
            let x = rng.random::<f64>();
            let y = rng.random::<f64>();
            let a = rng.random_range(1.5..=2.0);
            (x, y, a)
        })
        .collect()
}

/// Pixel-averaged density of the point sources on a `grid × grid` partition:
/// `x_ℓ = (1/|Ω_ℓ|) Σ_{p_k ∈ Ω_ℓ} a_k`.
pub fn bin_sources(sources: &[(f64, f64, f64)], grid: usize) -> Vec<f64> {
    let mut x = vec![0.0; grid * grid];
    let cells = (grid * grid) as f64;
    for &(px, py, a) in sources {
        let c = ((px * grid as f64) as usize).min(grid - 1);
        let r = ((py * grid as f64) as usize).min(grid - 1);
        x[r * grid + c] += a * cells;
    }
    x
}

/// Starry night image: `count` sources drawn with `seed`, binned on `grid`.
pub fn starry_night(count: usize, seed: u64, grid: usize) -> Result<Vec<f64>> {
    if count == 0 || grid == 0 {
        return Err(Error::InvalidModel("starry night needs at least one source and pixel".into()));
    }
    Ok(bin_sources(&star_sources(count, seed), grid))
}

/// Parameters of the impulse-image experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StarryNight {
    pub grid_n: usize,
    pub obs_m: usize,
    pub width: f64,
    pub stars: usize,
    pub noise_pct: f64,
    pub seed: u64,
}

impl Default for StarryNight {
    fn default() -> Self {
        StarryNight {
            grid_n: 128,
            obs_m: 64,
            width: 0.015,
            stars: 80,
            noise_pct: 1.8,
            seed: 5,
        }
    }
}

impl StarryNight {
    /// Exact observations `Σ_k a_k G(q_j, p_k)` of the point sources.
    pub fn clean_data(&self) -> Vec<f64> {
        let sources = star_sources(self.stars, self.seed);
        let q = cell_centres(self.obs_m);
        let mut out = Vec::with_capacity(self.obs_m * self.obs_m);
        for &qy in &q {
            for &qx in &q {
                out.push(sources.iter().map(|&(x, y, a)| a * gaussian_kernel((qx, qy), (x, y), self.width)).sum());
            }
        }
        out
    }

    pub fn problem(&self) -> Result<Problem> {
        let (b, sigma) = add_noise(&self.clean_data(), self.noise_pct, self.seed)?;
        self.problem_from_data(b, sigma)
    }

    /// The unknown is the source mass per pixel, `|Ω_ℓ| x_ℓ`, so the forward
    /// map drops the pixel-area factor.
    pub fn problem_from_data(&self, b: Vec<f64>, sigma: f64) -> Result<Problem> {
        let n = self.grid_n;
        let cells = (n * n) as f64;
        let blur = Arc::new(build_blur_2d(n, self.obs_m, self.width)?);
        let a: Op = Arc::new(Scaled::new(blur, cells / sigma));
        let mut p = Problem::new(a, b, Representation::Direct)?;
        let density = bin_sources(&star_sources(self.stars, self.seed), n);
        p.truth = Some(density.iter().map(|v| v / cells).collect());
        p.sigma = sigma;
        p.image_shape = Some((n, n));
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::testutil::{adjoint_defect, random_vec, rng};

    fn j1_oracle(t: f64) -> f64 {
        // direct series with factorials accumulated separately
        let mut sum = 0.0;
        let mut k = 0;
        let mut fk = 1.0;
        let mut fk1 = 1.0;
        loop {
            let term = (-1f64).powi(k) * (t / 2.0).powi(2 * k + 1) / (fk * fk1);
            sum += term;
            if term.abs() < 1e-18 {
                return sum;
            }
            k += 1;
            fk *= k as f64;
            fk1 *= (k + 1) as f64;
        }
    }

    #[test]
    fn bessel_small_arguments_match_series() {
        assert_eq!(bessel_j1(0.0), 0.0);
        assert!((bessel_j1(1.0) - j1_oracle(1.0)).abs() < 1e-14);
        assert!((bessel_j1(1.0) - 0.4400505857).abs() < 1e-10);
        for i in 0..=100 {
            let t = 0.1 * i as f64;
            assert!((bessel_j1(t) - j1_oracle(t)).abs() < 1e-12, "t = {t}");
            assert_eq!(bessel_j1(-t), -bessel_j1(t));
        }
    }

    #[test]
    fn bessel_reference_values() {
        let reference = [
            (0.5, 0.24226845767487387),
            (2.5, 0.497094102464274),
            (7.9, 0.21917939992175126),
            (8.1, 0.24760776698159287),
            (11.9, -0.22898324966192404),
            (12.1, -0.21574897337692486),
            (15.0, 0.20510403861352278),
            (33.3, 0.12386214790148016),
            (50.0, -0.09751182812517509),
            (77.7, 0.0904083967771848),
            (99.5, -0.07766319824307681),
            (100.0, -0.0771453520141123),
        ];
        for (t, v) in reference {
            assert!((bessel_j1(t) - v).abs() < 1e-9, "J1({t}) = {} vs {v}", bessel_j1(t));
        }
    }

    #[test]
    fn bessel_branches_agree_at_switch() {
        assert!((j1_series(12.0) - j1_asymptotic(12.0)).abs() < 1e-9);
    }

    #[test]
    fn airy_kernel_shape() {
        assert_eq!(airy_kernel(0.0, 40.0), 0.25);
        assert_eq!(airy_kernel(-0.013, 40.0), airy_kernel(0.013, 40.0));
        let (mut lo, mut hi) = (0.0, 0.1);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if airy_kernel(mid, 40.0) > 0.125 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let fwhm = 2.0 * lo;
        assert!((fwhm - 0.08).abs() < 0.005, "FWHM {fwhm}");
    }

    #[test]
    fn deconv_rows_integrate_kernel() {
        let a = build_deconv_1d(500, 91, 40.0).unwrap();
        assert_eq!((a.rows(), a.cols()), (91, 500));
        let fine = build_deconv_1d(5000, 91, 40.0).unwrap();
        let ones = vec![1.0; 500];
        let sums = a.apply(&ones).unwrap();
        let fine_sums = fine.apply(&vec![1.0; 5000]).unwrap();
        for (j, (s, f)) in sums.iter().zip(&fine_sums).enumerate() {
            assert!((s - f).abs() < 1e-4 * f, "row {j}: {s} vs {f}");
            let direct: f64 = a.0.row(j).iter().sum();
            assert!((s - direct).abs() < 1e-15);
        }
        assert!(a.0.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gaussian_kernel_values() {
        let w = 0.015;
        let peak = 1.0 / (2.0 * PI * w * w);
        assert!((gaussian_kernel((0.3, 0.3), (0.3, 0.3), w) - peak).abs() < 1e-12 * peak);
        let one_sigma = gaussian_kernel((0.5, 0.5), (0.5 + w, 0.5), w);
        assert!((one_sigma - peak * (-0.5f64).exp()).abs() < 1e-12 * peak);
        let n = 400;
        let h = 1.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                total += h * h * gaussian_kernel(p, (0.5, 0.5), w);
            }
        }
        assert!((total - 1.0).abs() < 0.02, "integral {total}");
    }

    #[test]
    fn blur_matches_pointwise_definition() {
        let (n, m, w) = (9, 5, 0.1);
        let blur = build_blur_2d(n, m, w).unwrap();
        assert!(adjoint_defect(&blur, 3) < 1e-12);
        let area = 1.0 / (n * n) as f64;
        let (q, c) = (cell_centres(m), cell_centres(n));
        let ell = 4 * n + 6;
        let mut e = vec![0.0; n * n];
        e[ell] = 1.0;
        let col = blur.apply(&e).unwrap();
        for (j, v) in col.iter().enumerate() {
            let expected = area * gaussian_kernel((q[j % m], q[j / m]), (c[ell % n], c[ell / n]), w);
            assert!((v - expected).abs() < 1e-12 * expected.max(1e-300), "obs {j}");
        }
    }

    #[test]
    fn blur_column_norms_closed_form() {
        let blur = build_blur_2d(7, 4, 0.12).unwrap();
        let fast = blur.column_norms_sq().unwrap();
        let mut e = vec![0.0; 49];
        for (l, f) in fast.iter().enumerate() {
            e[l] = 1.0;
            let slow: f64 = blur.apply(&e).unwrap().iter().map(|v| v * v).sum();
            e[l] = 0.0;
            assert!((f - slow).abs() <= 1e-13 * slow, "column {l}");
        }
    }

    #[test]
    fn blur_dimensions_of_the_experiments() {
        let b2 = build_blur_2d(136, 68, 0.015).unwrap();
        assert_eq!((b2.rows(), b2.cols()), (68 * 68, 136 * 136));
        let b3 = build_blur_2d(128, 64, 0.015).unwrap();
        assert_eq!((b3.rows(), b3.cols()), (4096, 16384));
    }

    #[test]
    fn noise_is_seeded_and_whitened() {
        let clean = random_vec(&mut rng(1), 50);
        let (b1, s1) = add_noise(&clean, 2.0, 9).unwrap();
        let (b2, s2) = add_noise(&clean, 2.0, 9).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(s1, s2);
        let peak = clean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((s1 - 0.02 * peak).abs() < 1e-15);
        let (b0, s0) = add_noise(&clean, 0.0, 9).unwrap();
        assert_eq!((b0, s0), (clean.clone(), 1.0));
        assert!(matches!(add_noise(&[0.0; 4], 1.0, 0), Err(Error::DegenerateSignal)));
    }

    #[test]
    fn step_signal_has_five_jumps() {
        let ex = Deconv1d::default();
        let x = ex.signal.sample(ex.n);
        assert_eq!(x[0], 0.0);
        let p = ex.problem().unwrap();
        let z = p.coefficients(&x).unwrap();
        let nz: Vec<usize> = z.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, _)| k).collect();
        assert_eq!(nz, ex.signal.jump_indices(ex.n));
        assert_eq!(nz.len(), 5);
        assert_ne!(ex.n_dense, ex.n);
        assert_eq!(p.m(), 91);
        assert_eq!(p.n(), 500);
    }

    #[test]
    fn starry_night_conserves_mass() {
        let sources = star_sources(80, 4);
        assert!(sources.iter().all(|&(x, y, a)| (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y) && (1.5..=2.0).contains(&a)));
        let img = starry_night(80, 4, 128).unwrap();
        let mass: f64 = img.iter().sum::<f64>() / (128.0 * 128.0);
        let total: f64 = sources.iter().map(|s| s.2).sum();
        assert!((mass - total).abs() < 1e-9 * total);
        assert!(img.iter().filter(|v| **v != 0.0).count() <= 80);
    }

    #[test]
    fn starry_night_data_snr() {
        let ex = StarryNight::default();
        let clean = ex.clean_data();
        let (b, sigma) = add_noise(&clean, ex.noise_pct, ex.seed).unwrap();
        let noisy: Vec<f64> = b.iter().map(|v| v * sigma).collect();
        let ratio = snr(&clean, &noisy);
        assert!((20.0..=30.0).contains(&ratio), "SNR {ratio}");
    }

    #[test]
    fn phantom_values_and_averaging() {
        let ph = Phantom::default();
        let img = ph.pixel_average(136, 4);
        assert_eq!(img.len(), 136 * 136);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        // border ring is empty so the zero boundary condition holds
        assert!(img[..136].iter().all(|&v| v == 0.0));
        assert_eq!(coarsen(&[1.0, 2.0, 3.0, 4.0], 2, 2), vec![2.5]);
    }

    #[test]
    fn problem_dimensions() {
        let ex = Deblur2d { grid_n: 12, obs_m: 6, ..Default::default() };
        let p = ex.problem().unwrap();
        assert_eq!(p.signal_len(), 144);
        assert_eq!(p.n(), 2 * 12 * 13);
        let s = StarryNight { grid_n: 16, obs_m: 8, stars: 5, ..Default::default() };
        let p = s.problem().unwrap();
        assert_eq!((p.m(), p.n()), (64, 256));
        let truth = p.truth.as_ref().unwrap();
        let total: f64 = star_sources(5, 5).iter().map(|s| s.2).sum();
        assert!((truth.iter().sum::<f64>() - total).abs() < 1e-12);
    }
}
