//! Local time estimators and exact moments.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::fgn::{FbmPath, GridSpec, HurstIndex};
use crate::integrals::{self, SignedMeasure};
use crate::quad::{self, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningEstimate {
    pub value: f64,
    /// Set when the window is narrower than four typical grid increments.
    pub under_resolved: bool,
}

/// Default window for the binning estimator at resolution `n`: `4 n^{-H}`.
pub fn default_window(h: HurstIndex, n: usize) -> f64 {
    4.0 * (n as f64).powf(-h.value())
}

/// `(1 / 2 eps) * time spent by the path within eps of a` on `[0, t]`,
/// with the left-point rule on the path grid.
pub fn binning_estimator(path: &FbmPath, comp: usize, a: f64, eps: f64, t: f64) -> Result<BinningEstimate> {
    if !(eps > 0.0) {
        return domain(format!("window half-width must be positive, got {eps}"));
    }
    let grid = &path.grid;
    if !(t > 0.0 && t <= grid.t_end() * (1.0 + 1e-12)) {
        return domain(format!("time {t} outside the sampled range (0, {}]", grid.t_end()));
    }
    let x = path.values.get(comp).ok_or_else(|| Error::Domain(format!("no component {}", comp + 1)))?;
    let nodes = grid.nodes();
    let mut occupied = 0.0;
    for k in 0..nodes.len() - 1 {
        if nodes[k] >= t {
            break;
        }
        if (x[k] - a).abs() <= eps {
            occupied += nodes[k + 1].min(t) - nodes[k];
        }
    }
    let under_resolved = eps < 4.0 * grid.step().powf(path.hurst.value());
    Ok(BinningEstimate { value: occupied / (2.0 * eps), under_resolved })
}

/// `2 n^{2H-1} sum_k |B_{k+1} - a|` over grid steps that cross `a`.
pub fn sign_change_estimator(path: &FbmPath, comp: usize, a: f64, grid: &GridSpec) -> Result<f64> {
    path.hurst.require_theorem_scope()?;
    Ok(2.0 * integrals::sign_change_error(path, comp, a, grid)?)
}

/// `(B_v - B_u)`-basis covariance determinant of `(B_u, B_v)` for
/// `v = u + d`, computed without cancellation.
fn pair_determinant(h: f64, u: f64, d: f64) -> f64 {
    let e = 2.0 * h;
    let pow_diff = |base: f64, add: f64| base.powf(e) * (e * (add / base).ln_1p()).exp_m1();
    let cross = if d <= u { 0.5 * (pow_diff(u, d) - d.powf(e)) } else { 0.5 * (pow_diff(d, u) - u.powf(e)) };
    (u.powf(e) * d.powf(e) - cross * cross).max(0.0)
}

/// Joint density of `(B_u, B_{u+d})` at `(a, a)`.
fn pair_density(h: f64, a: f64, u: f64, d: f64) -> f64 {
    if u <= 0.0 || d <= 0.0 {
        return 0.0;
    }
    let det = pair_determinant(h, u, d);
    if det <= 0.0 {
        return 0.0;
    }
    (-a * a * d.powf(2.0 * h) / (2.0 * det)).exp() / (2.0 * PI * det.sqrt())
}

/// Joint density of `(B_u, B_v)` at `(a, a)` for distinct positive times.
pub fn level_pair_density(h: HurstIndex, a: f64, u: f64, v: f64) -> f64 {
    pair_density(h.value(), a, u.min(v), (u - v).abs())
}

/// `E[L_t(a)^p]` for `p` in `{1, 2}` by adaptive quadrature of the Gaussian
/// occupation densities.
pub fn moment_oracle(h: HurstIndex, t: f64, a: f64, p: u32) -> Result<f64> {
    moment_oracle_with(h, t, a, p, Tolerance::relative(1e-9))
}

pub fn moment_oracle_with(h: HurstIndex, t: f64, a: f64, p: u32, tol: Tolerance) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("time must be positive, got {t}"));
    }
    let hv = h.value();
    match p {
        1 => {
            let g = |u: f64| {
                if u <= 0.0 {
                    return 0.0;
                }
                let var = u.powf(2.0 * hv);
                (-a * a / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
            };
            Ok(quad::integrate_power_singular(g, t, hv, tol)?.value)
        }
        2 => {
            let inner_tol = Tolerance { rel: tol.rel * 0.1, ..tol };
            // v * int_0^1 phi(v s, v) ds, split at 1/2 so that both endpoint
            // singularities are handled by the power substitution.
            let inner = |v: f64| -> Result<f64> {
                let left = quad::integrate_power_singular(|s| pair_density(hv, a, v * s, v * (1.0 - s)), 0.5, hv, inner_tol)?;
                let right =
                    quad::integrate_power_singular(|r| pair_density(hv, a, v * (1.0 - r), v * r), 0.5, hv, inner_tol)?;
                Ok(v * (left.value + right.value))
            };
            let failure = std::cell::Cell::new(None);
            let outer_gamma = (2.0 * hv - 1.0).max(0.0);
            let outer = quad::integrate_power_singular(
                |v| {
                    if v <= 0.0 {
                        return 0.0;
                    }
                    match inner(v) {
                        Ok(x) => x,
                        Err(e) => {
                            failure.set(Some(e));
                            f64::NAN
                        }
                    }
                },
                t,
                outer_gamma,
                tol,
            );
            if let Some(e) = failure.take() {
                return Err(e);
            }
            Ok(2.0 * outer?.value)
        }
        _ => domain(format!("moment order must be 1 or 2, got {p}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Binning { eps: f64 },
    SignChange { n: usize },
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Binning { .. } => "bin",
            Self::SignChange { .. } => "sign",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeProfile {
    pub levels: Vec<f64>,
    pub estimates: Vec<f64>,
    pub kind: EstimatorKind,
    pub t: f64,
    pub hurst: HurstIndex,
}

impl LocalTimeProfile {
    pub fn new(levels: Vec<f64>, estimates: Vec<f64>, kind: EstimatorKind, t: f64, hurst: HurstIndex) -> Result<Self> {
        if levels.len() != estimates.len() || levels.is_empty() {
            return domain("profile needs one estimate per level");
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return domain("profile levels must be strictly increasing");
        }
        if estimates.iter().any(|e| !(*e >= 0.0)) {
            return domain("local time estimates must be non-negative");
        }
        Ok(Self { levels, estimates, kind, t, hurst })
    }

    pub fn binning(path: &FbmPath, comp: usize, levels: &[f64], eps: f64) -> Result<Self> {
        let t = path.grid.t_end();
        let est = levels
            .iter()
            .map(|&a| binning_estimator(path, comp, a, eps, t).map(|b| b.value))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels.to_vec(), est, EstimatorKind::Binning { eps }, t, path.hurst)
    }

    pub fn sign_change(path: &FbmPath, comp: usize, levels: &[f64], grid: &GridSpec) -> Result<Self> {
        let est = levels
            .iter()
            .map(|&a| sign_change_estimator(path, comp, a, grid))
            .collect::<Result<Vec<_>>>()?;
        let kind = EstimatorKind::SignChange { n: grid.points_per_unit() };
        Self::new(levels.to_vec(), est, kind, grid.t_end(), path.hurst)
    }

    /// Estimate at `a`: exact level match, else linear interpolation.
    pub fn at(&self, a: f64) -> Result<f64> {
        let lo = self.levels[0];
        let hi = *self.levels.last().unwrap();
        let tol = 1e-12 * (1.0 + a.abs());
        if a < lo - tol || a > hi + tol {
            return Err(Error::Coverage { level: a, lo, hi });
        }
        let k = self.levels.partition_point(|&l| l < a - tol);
        if k < self.levels.len() && (self.levels[k] - a).abs() <= tol {
            return Ok(self.estimates[k]);
        }
        let (l0, l1) = (self.levels[k - 1], self.levels[k]);
        let w = (a - l0) / (l1 - l0);
        Ok((1.0 - w) * self.estimates[k - 1] + w * self.estimates[k])
    }
}

/// `sum_k c_k L(a_k)` over the atoms of `mu`.
pub fn limit_functional(profile: &LocalTimeProfile, mu: &SignedMeasure) -> Result<f64> {
    mu.atoms().iter().map(|&(a, c)| profile.at(a).map(|l| c * l)).sum()
}
