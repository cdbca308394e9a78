//! Fractional Brownian motion on uniform grids.
//!
//! Two generators share one distributional contract: [`ExactSampler`]
//! factorises the node covariance (cubic cost, capped), [`FftSampler`] embeds
//! the fractional Gaussian noise autocovariance in a circulant matrix and
//! draws increments with one FFT per component. A terminal node that falls
//! between grid points is drawn from its exact conditional law given the full
//! increments.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Error, Result};
use crate::linalg;
use crate::rng::{self, StreamRng};

/// Relative tolerance used to decide whether `n * t_end` is an integer.
const NODE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HurstIndex(f64);

impl HurstIndex {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            domain(format!("Hurst index must lie in (0, 1), got {value}"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The convergence results only cover H > 1/2.
    pub fn require_theorem_scope(self) -> Result<Self> {
        if self.0 > 0.5 {
            Ok(self)
        } else {
            Err(Error::Scope(format!("Hurst index {} must exceed 1/2", self.0)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    horizon: f64,
    points_per_unit: usize,
    t_end: f64,
}

impl GridSpec {
    pub fn new(horizon: f64, points_per_unit: usize, t_end: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("horizon must be positive, got {horizon}"));
        }
        if points_per_unit == 0 {
            return domain("points_per_unit must be at least 1");
        }
        if !(t_end > 0.0 && t_end <= horizon) {
            return domain(format!("t_end must lie in (0, {horizon}], got {t_end}"));
        }
        Ok(Self { horizon, points_per_unit, t_end })
    }

    /// Grid on `[0, t]` with `n` points per unit time.
    pub fn unit(n: usize, t: f64) -> Result<Self> {
        Self::new(t, n, t)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn points_per_unit(&self) -> usize {
        self.points_per_unit
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn step(&self) -> f64 {
        1.0 / self.points_per_unit as f64
    }

    fn scaled_end(&self) -> f64 {
        self.points_per_unit as f64 * self.t_end
    }

    /// Number of complete steps of length `1/n` inside `[0, t_end]`.
    pub fn full_steps(&self) -> usize {
        let x = self.scaled_end();
        let r = x.round();
        if (x - r).abs() <= NODE_TOL * x.max(1.0) {
            r as usize
        } else {
            x.floor() as usize
        }
    }

    /// Whether `t_end` is appended as an extra node after the last `k/n`.
    pub fn has_partial(&self) -> bool {
        let x = self.scaled_end();
        (x - x.round()).abs() > NODE_TOL * x.max(1.0)
    }

    /// Length of the terminal partial step, in units of `1/n`.
    pub fn partial_fraction(&self) -> f64 {
        if self.has_partial() {
            self.scaled_end() - self.full_steps() as f64
        } else {
            0.0
        }
    }

    pub fn node_count(&self) -> usize {
        self.full_steps() + 1 + usize::from(self.has_partial())
    }

    pub fn node_time(&self, k: usize) -> f64 {
        if k > self.full_steps() {
            self.t_end
        } else {
            k as f64 / self.points_per_unit as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.node_count()).map(|k| self.node_time(k)).collect()
    }

    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return domain("refinement factor must be positive");
        }
        Self::new(self.horizon, self.points_per_unit * factor, self.t_end)
    }

    /// Position of each node of `self` inside the node list of `fine`, or an
    /// alignment error when `fine` does not contain every node.
    pub fn embedding_in(&self, fine: &GridSpec) -> Result<Vec<usize>> {
        let ratio = fine.points_per_unit / self.points_per_unit;
        if !fine.points_per_unit.is_multiple_of(self.points_per_unit) {
            return Err(Error::Alignment(format!(
                "fine grid with {} points per unit does not refine {}",
                fine.points_per_unit, self.points_per_unit
            )));
        }
        if (fine.t_end - self.t_end).abs() > NODE_TOL * self.t_end.max(1.0) {
            return Err(Error::Alignment(format!(
                "grids end at different times {} and {}",
                self.t_end, fine.t_end
            )));
        }
        let last = fine.node_count() - 1;
        Ok((0..self.node_count())
            .map(|k| if k > self.full_steps() { last } else { k * ratio })
            .collect())
    }
}

/// A sampled path of one or two independent components on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub hurst: HurstIndex,
    pub grid: GridSpec,
    pub values: Vec<Vec<f64>>,
}

impl FbmPath {
    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.components()).map(|c| format!("B{c}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (k, t) in self.grid.nodes().into_iter().enumerate() {
            write!(out, "{t:.16e}")?;
            for c in &self.values {
                write!(out, ",{:.16e}", c[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn fbm_covariance(h: HurstIndex, s: f64, t: f64) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return domain(format!("times must be non-negative, got ({s}, {t})"));
    }
    let e = 2.0 * h.value();
    Ok(0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e)))
}

/// `E[(B_{a.0} - B_{a.1}) (B_{b.0} - B_{b.1})]`.
pub fn increment_covariance(h: HurstIndex, a: (f64, f64), b: (f64, f64)) -> f64 {
    let e = 2.0 * h.value();
    let p = |x: f64| x.abs().powf(e);
    0.5 * (p(a.0 - b.1) + p(a.1 - b.0) - p(a.0 - b.0) - p(a.1 - b.1))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(h: HurstIndex, k: usize) -> f64 {
    let e = 2.0 * h.value();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

pub const DEFAULT_EXACT_CAP: usize = 4096;

/// Cholesky sampler for an arbitrary increasing set of positive times.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    times: Vec<f64>,
    factor: DMatrix<f64>,
}

impl ExactSampler {
    pub fn from_times(h: HurstIndex, times: &[f64], cap: usize) -> Result<Self> {
        if times.len() > cap {
            return Err(Error::SizeCap { nodes: times.len(), cap });
        }
        if times.iter().any(|&t| !(t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("sampling times must be positive and strictly increasing");
        }
        let m = times.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = fbm_covariance(h, times[i], times[j])?;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let factor = match cov.clone().cholesky() {
            Some(c) => c.unpack(),
            None => {
                for i in 0..m {
                    cov[(i, i)] += 1e-12;
                }
                cov.cholesky()
                    .ok_or_else(|| Error::Factorisation(format!("node covariance of size {m} is not positive definite")))?
                    .unpack()
            }
        };
        Ok(Self { times: times.to_vec(), factor })
    }

    pub fn for_grid(h: HurstIndex, grid: &GridSpec, cap: usize) -> Result<Self> {
        if grid.node_count() > cap {
            return Err(Error::SizeCap { nodes: grid.node_count(), cap });
        }
        Self::from_times(h, &grid.nodes()[1..], cap)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Lower Cholesky factor of the covariance at `times()`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Values at `times()` (without the origin).
    pub fn draw(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z = DVector::from_fn(self.times.len(), |_, _| rng::standard_normal(rng));
        (&self.factor * z).as_slice().to_vec()
    }
}

pub fn sample_exact(h: HurstIndex, grid: &GridSpec, seed: u64, components: usize) -> Result<FbmPath> {
    check_components(components)?;
    let sampler = ExactSampler::for_grid(h, grid, DEFAULT_EXACT_CAP)?;
    let values = (0..components)
        .map(|c| {
            let mut rng = rng::stream(seed, 0, c as u32);
            let mut v = Vec::with_capacity(grid.node_count());
            v.push(0.0);
            v.extend(sampler.draw(&mut rng));
            v
        })
        .collect();
    Ok(FbmPath { hurst: h, grid: *grid, values })
}

fn check_components(components: usize) -> Result<()> {
    if components == 1 || components == 2 {
        Ok(())
    } else {
        domain(format!("components must be 1 or 2, got {components}"))
    }
}

/// Reusable buffers for [`FftSampler::fill`].
pub struct FftScratch {
    buf: Vec<Complex64>,
    work: Vec<Complex64>,
}

/// Conditional law of the terminal partial increment given the full ones,
/// in unit-step coordinates.
#[derive(Debug, Clone)]
struct PartialStep {
    weights: Vec<f64>,
    sd: f64,
}

/// Circulant-embedding generator bound to one `(H, grid)` pair.
pub struct FftSampler {
    hurst: HurstIndex,
    grid: GridSpec,
    steps: usize,
    size: usize,
    /// `sqrt(lambda_k / size)` after clamping.
    amplitude: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    partial: Option<PartialStep>,
    clamped: usize,
}

impl std::fmt::Debug for FftSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftSampler")
            .field("hurst", &self.hurst)
            .field("grid", &self.grid)
            .field("embedding", &self.size)
            .field("clamped", &self.clamped)
            .finish()
    }
}

const LEVINSON_LIMIT: usize = 4096;

impl FftSampler {
    pub fn new(h: HurstIndex, grid: &GridSpec) -> Result<Self> {
        let steps = grid.full_steps();
        let size = (2 * steps.saturating_sub(1)).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);

        let mut spectrum: Vec<Complex64> =
            (0..size).map(|j| Complex64::new(fgn_autocovariance(h, j.min(size - j)), 0.0)).collect();
        fft.process(&mut spectrum);
        let eig: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let total: f64 = eig.iter().map(|v| v.abs()).sum();
        let mut clamped = 0;
        let mut clamped_mass = 0.0;
        for &v in &eig {
            if v < 0.0 {
                clamped_mass -= v;
                if v < -1e-9 * max {
                    clamped += 1;
                }
            }
        }
        if clamped_mass > 1e-6 * total {
            return Err(Error::Embedding { clamped: clamped_mass, total });
        }
        let amplitude = eig.iter().map(|&v| (v.max(0.0) / size as f64).sqrt()).collect();

        let partial = if grid.has_partial() {
            Some(Self::partial_step(h, grid, &eig, fft.as_ref(), &mut planner)?)
        } else {
            None
        };

        Ok(Self { hurst: h, grid: *grid, steps, size, amplitude, fft, partial, clamped })
    }

    fn partial_step(
        h: HurstIndex,
        grid: &GridSpec,
        eig: &[f64],
        fwd: &dyn Fft<f64>,
        planner: &mut FftPlanner<f64>,
    ) -> Result<PartialStep> {
        let steps = grid.full_steps();
        let r = grid.partial_fraction();
        let end = steps as f64;
        let var = r.powf(2.0 * h.value());
        if steps == 0 {
            return Ok(PartialStep { weights: Vec::new(), sd: var.sqrt() });
        }
        let cross: Vec<f64> =
            (0..steps).map(|j| increment_covariance(h, (j as f64 + 1.0, j as f64), (end + r, end))).collect();
        let weights = if steps <= LEVINSON_LIMIT {
            let col: Vec<f64> = (0..steps).map(|k| fgn_autocovariance(h, k)).collect();
            linalg::levinson(&col, &cross)?
        } else {
            let size = eig.len();
            let inv = planner.plan_fft_inverse(size);
            let apply = |x: &[f64]| -> Vec<f64> {
                let mut buf: Vec<Complex64> =
                    (0..size).map(|i| Complex64::new(if i < x.len() { x[i] } else { 0.0 }, 0.0)).collect();
                fwd.process(&mut buf);
                for (z, &l) in buf.iter_mut().zip(eig) {
                    *z *= l / size as f64;
                }
                inv.process(&mut buf);
                buf[..x.len()].iter().map(|z| z.re).collect()
            };
            linalg::conjugate_gradient(apply, &cross, 1e-14, 20 * steps.max(100))?
        };
        let explained: f64 = weights.iter().zip(&cross).map(|(w, c)| w * c).sum();
        let sd = (var - explained).max(0.0).sqrt();
        Ok(PartialStep { weights, sd })
    }

    pub fn hurst(&self) -> HurstIndex {
        self.hurst
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn embedding_size(&self) -> usize {
        self.size
    }

    /// Eigenvalues that were clamped beyond the warning threshold.
    pub fn clamped_eigenvalues(&self) -> usize {
        self.clamped
    }

    pub fn scratch(&self) -> FftScratch {
        FftScratch {
            buf: vec![Complex64::new(0.0, 0.0); self.size],
            work: vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()],
        }
    }

    /// Write one component path (including `B_0 = 0`) into `out`.
    pub fn fill(&self, rng: &mut StreamRng, scratch: &mut FftScratch, out: &mut Vec<f64>) {
        let m = self.size;
        let half = m / 2;
        let buf = &mut scratch.buf;
        let amp = &self.amplitude;
        buf[0] = Complex64::new(amp[0] * rng::standard_normal(rng), 0.0);
        buf[half] = Complex64::new(amp[half] * rng::standard_normal(rng), 0.0);
        for k in 1..half {
            let s = amp[k] * std::f64::consts::FRAC_1_SQRT_2;
            let re = s * rng::standard_normal(rng);
            let im = s * rng::standard_normal(rng);
            buf[k] = Complex64::new(re, im);
            buf[m - k] = Complex64::new(re, -im);
        }
        self.fft.process_with_scratch(buf, &mut scratch.work);

        let scale = self.grid.step().powf(self.hurst.value());
        out.clear();
        out.reserve(self.grid.node_count());
        out.push(0.0);
        let mut acc = 0.0;
        for z in &buf[..self.steps] {
            acc += z.re * scale;
            out.push(acc);
        }
        if let Some(p) = &self.partial {
            let mean: f64 = p.weights.iter().zip(&buf[..self.steps]).map(|(w, z)| w * z.re).sum();
            let incr = mean + p.sd * rng::standard_normal(rng);
            out.push(acc + incr * scale);
        }
    }

    /// Path for one replicate; component `c` draws from stream `(seed, replicate, c)`.
    pub fn sample(&self, seed: u64, replicate: u64, components: usize) -> Result<FbmPath> {
        check_components(components)?;
        let mut scratch = self.scratch();
        let values = (0..components)
            .map(|c| {
                let mut rng = rng::stream(seed, replicate, c as u32);
                let mut v = Vec::new();
                self.fill(&mut rng, &mut scratch, &mut v);
                v
            })
            .collect();
        Ok(FbmPath { hurst: self.hurst, grid: self.grid, values })
    }
}

pub fn sample_fft(h: HurstIndex, grid: &GridSpec, seed: u64, components: usize) -> Result<FbmPath> {
    check_components(components)?;
    FftSampler::new(h, grid)?.sample(seed, 0, components)
}
