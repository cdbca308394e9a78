//! Riemann sums of `f(B^i) dB^j` for bounded-variation integrands.
//!
//! An integrand is stored through its sign representation
//! `f(x) = base + sum_k c_k sgn(x - a_k)` with `sgn(0) = -1`, which makes `f`
//! left-continuous. The indicator `1{x > a}` is `base = 1/2` with one atom
//! `(a, 1/2)`.

use crate::error::{domain, Error, Result};
use crate::fgn::{FbmPath, GridSpec};

/// Default cap on atoms produced from each sign part of a density.
pub const MAX_DENSITY_ATOMS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quantisation {
    /// Total variation carried by the quantised density part.
    pub mass: f64,
    pub atoms: usize,
    /// Largest distance between neighbouring quantile atoms of the same sign.
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    base: f64,
    /// Sorted by location, no repeated locations.
    atoms: Vec<(f64, f64)>,
    /// `prefix[k]` is the mass of `atoms[..k]`.
    prefix: Vec<f64>,
    quantisation: Quantisation,
}

impl SignedMeasure {
    pub fn new(base: f64, atoms: Vec<(f64, f64)>) -> Result<Self> {
        if !base.is_finite() || atoms.iter().any(|(a, c)| !a.is_finite() || !c.is_finite()) {
            return domain("measure atoms and base must be finite");
        }
        let mut atoms = atoms;
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (a, c) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == a => last.1 += c,
                _ => merged.push((a, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        let mut prefix = Vec::with_capacity(merged.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &(_, c) in &merged {
            acc += c;
            prefix.push(acc);
        }
        Ok(Self { base, atoms: merged, prefix, quantisation: Quantisation::default() })
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(value, Vec::new()).expect("finite constant")
    }

    /// `1{x > a}`.
    pub fn indicator_above(a: f64) -> Result<Self> {
        Self::new(0.5, vec![(a, 0.5)])
    }

    /// Add an absolutely continuous part, given as `(x, density)` samples on an
    /// increasing grid, by placing equal-mass atoms at the quantiles of its
    /// positive and negative parts.
    pub fn with_density(self, table: &[(f64, f64)], max_atoms: usize) -> Result<Self> {
        if table.len() < 2 || table.windows(2).any(|w| w[1].0 <= w[0].0) {
            return domain("density table needs at least two increasing abscissae");
        }
        if max_atoms == 0 || max_atoms > MAX_DENSITY_ATOMS {
            return domain(format!("atoms per sign part must lie in 1..={MAX_DENSITY_ATOMS}"));
        }
        let mut atoms = self.atoms.clone();
        let mut info = Quantisation::default();
        for sign in [1.0, -1.0] {
            let part: Vec<(f64, f64)> = table.iter().map(|&(x, d)| (x, (sign * d).max(0.0))).collect();
            let mut cum = vec![0.0];
            for w in part.windows(2) {
                let last = *cum.last().unwrap();
                cum.push(last + 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0));
            }
            let mass = *cum.last().unwrap();
            if !(mass > 0.0) {
                continue;
            }
            let k = max_atoms;
            let mut prev: Option<f64> = None;
            let mut seg = 0;
            for q in 0..k {
                let target = mass * (q as f64 + 0.5) / k as f64;
                while cum[seg + 1] < target {
                    seg += 1;
                }
                let (x0, x1) = (part[seg].0, part[seg + 1].0);
                let span = cum[seg + 1] - cum[seg];
                let frac = if span > 0.0 { (target - cum[seg]) / span } else { 0.5 };
                let x = x0 + frac * (x1 - x0);
                if let Some(p) = prev {
                    info.max_gap = info.max_gap.max(x - p);
                }
                prev = Some(x);
                atoms.push((x, sign * mass / k as f64));
            }
            info.mass += mass;
            info.atoms += k;
        }
        let mut out = Self::new(self.base, atoms)?;
        out.quantisation = Quantisation {
            mass: self.quantisation.mass + info.mass,
            atoms: self.quantisation.atoms + info.atoms,
            max_gap: self.quantisation.max_gap.max(info.max_gap),
        };
        Ok(out)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn quantisation(&self) -> Quantisation {
        self.quantisation
    }

    pub fn total_mass(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|(_, c)| c.abs()).sum()
    }

    /// `sum_k |c_k| exp(-p a_k^2 / 2)`.
    pub fn growth(&self, p: f64) -> f64 {
        self.atoms.iter().map(|(a, c)| c.abs() * (-p * a * a / 2.0).exp()).sum()
    }

    pub fn check_growth(&self, p: f64) -> Result<f64> {
        let g = self.growth(p);
        if p > 0.0 && g.is_finite() {
            Ok(g)
        } else {
            domain(format!("growth functional at P = {p} is not finite"))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.base == 0.0 && self.atoms.is_empty()
    }

    /// Sum of two integrands.
    pub fn add(&self, other: &Self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        let mut out = Self::new(self.base + other.base, atoms).expect("finite inputs");
        out.quantisation.mass = self.quantisation.mass + other.quantisation.mass;
        out.quantisation.atoms = self.quantisation.atoms + other.quantisation.atoms;
        out.quantisation.max_gap = self.quantisation.max_gap.max(other.quantisation.max_gap);
        out
    }

    pub fn eval(&self, x: f64) -> f64 {
        let below = self.atoms.partition_point(|&(a, _)| a < x);
        self.base + 2.0 * self.prefix[below] - self.total_mass()
    }
}

pub fn eval_integrand(f: &SignedMeasure, x: f64) -> f64 {
    f.eval(x)
}

fn component(path: &FbmPath, c: usize) -> Result<&[f64]> {
    path.values
        .get(c)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Domain(format!("path has no component {}", c + 1)))
}

/// Left-point Riemann sum of `f(B^i) dB^j` over the nodes of `grid`, which
/// must be a subset of the path's nodes. Components are zero-based.
pub fn riemann_sum(path: &FbmPath, f: &SignedMeasure, pair: (usize, usize), grid: &GridSpec) -> Result<f64> {
    let idx = grid.embedding_in(&path.grid)?;
    let xi = component(path, pair.0)?;
    let xj = component(path, pair.1)?;
    Ok(idx.windows(2).map(|w| f.eval(xi[w[0]]) * (xj[w[1]] - xj[w[0]])).sum())
}

/// Riemann sum over every node of the path.
pub fn path_riemann_sum(path: &FbmPath, f: &SignedMeasure, pair: (usize, usize)) -> Result<f64> {
    let xi = component(path, pair.0)?;
    let xj = component(path, pair.1)?;
    Ok(xi.windows(2).zip(xj.windows(2)).map(|(a, b)| f.eval(a[0]) * (b[1] - b[0])).sum())
}

pub const MIN_FINE_FACTOR: usize = 16;

/// Fine-grid Riemann sum standing in for the integral; the path must live
/// on `coarse` refined by `fine_factor`.
pub fn reference_integral(
    path: &FbmPath,
    f: &SignedMeasure,
    pair: (usize, usize),
    coarse: &GridSpec,
    fine_factor: usize,
) -> Result<f64> {
    if fine_factor < MIN_FINE_FACTOR {
        return Err(Error::Refinement(format!("fine factor {fine_factor} is below {MIN_FINE_FACTOR}")));
    }
    if path.grid.points_per_unit() != coarse.points_per_unit() * fine_factor {
        return Err(Error::Refinement(format!(
            "path has {} points per unit, expected {} x {}",
            path.grid.points_per_unit(),
            coarse.points_per_unit(),
            fine_factor
        )));
    }
    coarse.embedding_in(&path.grid)?;
    path_riemann_sum(path, f, pair)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub pair: (usize, usize),
    pub riemann_sum: f64,
    pub reference_integral: f64,
    /// `n^{2H-1} (reference - riemann)`.
    pub s_n: f64,
}

pub fn error_sample(
    path: &FbmPath,
    f: &SignedMeasure,
    pair: (usize, usize),
    coarse: &GridSpec,
    fine_factor: usize,
) -> Result<ErrorSample> {
    let reference = reference_integral(path, f, pair, coarse, fine_factor)?;
    let coarse_sum = riemann_sum(path, f, pair, coarse)?;
    let s_n = normaliser(path, coarse) * (reference - coarse_sum);
    if !s_n.is_finite() {
        return domain("normalised error is not finite");
    }
    Ok(ErrorSample { pair, riemann_sum: coarse_sum, reference_integral: reference, s_n })
}

fn normaliser(path: &FbmPath, grid: &GridSpec) -> f64 {
    (grid.points_per_unit() as f64).powf(2.0 * path.hurst.value() - 1.0)
}

/// `n^{2H-1} sum_k |x_{k+1} - a| 1{x_k, x_{k+1} on different sides of a}`,
/// the exact normalised error of the indicator integrand `1{x > a}` for
/// `i = j`. A value equal to `a` counts as below the level.
pub fn sign_change_error(path: &FbmPath, comp: usize, a: f64, grid: &GridSpec) -> Result<f64> {
    let idx = grid.embedding_in(&path.grid)?;
    let x = component(path, comp)?;
    Ok(normaliser(path, grid) * crossing_overshoot(x, &idx, a))
}

/// Unnormalised crossing sum over `x[idx[k]]`.
pub fn crossing_overshoot(x: &[f64], idx: &[usize], a: f64) -> f64 {
    let mut sum = 0.0;
    let mut prev_above = x[idx[0]] > a;
    for &k in &idx[1..] {
        let v = x[k];
        let above = v > a;
        if above != prev_above {
            sum += (v - a).abs();
        }
        prev_above = above;
    }
    sum
}

/// Same as [`crossing_overshoot`] over every entry of `x`.
pub fn crossing_overshoot_all(x: &[f64], a: f64) -> f64 {
    x.windows(2).filter(|w| (w[0] > a) != (w[1] > a)).map(|w| (w[1] - a).abs()).sum()
}

/// Exact value of `int_0^t 1{B > a} dB = (|B_t - a| - |B_0 - a| + B_t - B_0) / 2`.
pub fn indicator_integral(start: f64, end: f64, a: f64) -> f64 {
    0.5 * ((end - a).abs() - (start - a).abs() + end - start)
}

/// Normalised error for `i = j` and a pure-atom integrand, from the crossing
/// identity applied atom by atom.
pub fn closed_form_error(path: &FbmPath, comp: usize, f: &SignedMeasure, grid: &GridSpec) -> Result<f64> {
    let idx = grid.embedding_in(&path.grid)?;
    let x = component(path, comp)?;
    let raw: f64 = f.atoms().iter().map(|&(a, c)| 2.0 * c * crossing_overshoot(x, &idx, a)).sum();
    Ok(normaliser(path, grid) * raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgn::{sample_fft, HurstIndex};
    use approx::assert_abs_diff_eq;

    fn synthetic(n: usize, t: f64, values: Vec<f64>) -> FbmPath {
        FbmPath {
            hurst: HurstIndex::new(0.75).unwrap(),
            grid: GridSpec::unit(n, t).unwrap(),
            values: vec![values],
        }
    }

    #[test]
    fn indicator_is_left_continuous() {
        let f = SignedMeasure::new(0.5, vec![(0.0, 0.5)]).unwrap();
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(SignedMeasure::constant(1.0).eval(-3.0), 1.0);
        let g = SignedMeasure::new(0.0, vec![(-1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!(g.eval(0.0), 0.0);
        assert_eq!(g.eval(2.0), 2.0);
        assert_eq!(g.eval(-1.0), -2.0);
    }

    #[test]
    fn eval_matches_direct_sign_sum() {
        let atoms = vec![(0.3, 0.7), (-1.2, -0.4), (0.3, 0.1), (2.0, 1.5)];
        let f = SignedMeasure::new(0.25, atoms.clone()).unwrap();
        for &x in &[-2.0, -1.2, 0.0, 0.3, 0.31, 1.9, 2.0, 5.0] {
            let direct: f64 =
                0.25 + atoms.iter().map(|&(a, c)| c * if x - a > 0.0 { 1.0 } else { -1.0 }).sum::<f64>();
            assert_abs_diff_eq!(f.eval(x), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn hand_computed_two_step_sum() {
        let path = synthetic(2, 1.0, vec![0.0, 0.4, -0.1]);
        let f = SignedMeasure::indicator_above(0.0).unwrap();
        // f(0) * 0.4 + f(0.4) * (-0.5)
        assert_abs_diff_eq!(riemann_sum(&path, &f, (0, 0), &path.grid).unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn constant_integrand_telescopes() {
        let h = HurstIndex::new(0.7).unwrap();
        let coarse = GridSpec::unit(8, 0.9).unwrap();
        let path = sample_fft(h, &coarse.refine(16).unwrap(), 3, 2).unwrap();
        let one = SignedMeasure::constant(1.0);
        let end = *path.values[1].last().unwrap();
        assert_abs_diff_eq!(riemann_sum(&path, &one, (0, 1), &coarse).unwrap(), end, epsilon = 1e-12);
        assert_abs_diff_eq!(reference_integral(&path, &one, (0, 1), &coarse, 16).unwrap(), end, epsilon = 1e-12);
    }

    #[test]
    fn integrand_vanishing_along_path() {
        let path = synthetic(4, 1.0, vec![0.0, -0.2, -0.5, -0.1, -0.3]);
        let f = SignedMeasure::indicator_above(0.0).unwrap();
        assert_eq!(riemann_sum(&path, &f, (0, 0), &path.grid).unwrap(), 0.0);
        assert_eq!(sign_change_error(&path, 0, 0.0, &path.grid).unwrap(), 0.0);
    }

    #[test]
    fn single_step_sign_convention() {
        let path = synthetic(1, 1.0, vec![0.0, 0.5]);
        let v = sign_change_error(&path, 0, 0.0, &path.grid).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn crossing_identity_on_random_paths() {
        let h = HurstIndex::new(0.75).unwrap();
        let grid = GridSpec::unit(32, 1.0).unwrap();
        let sampler = crate::fgn::FftSampler::new(h, &grid).unwrap();
        for rep in 0..100 {
            let path = sampler.sample(11, rep, 1).unwrap();
            let a = 0.1 * (rep % 7) as f64 - 0.3;
            let x = &path.values[0];
            let f = SignedMeasure::indicator_above(a).unwrap();
            let rs = riemann_sum(&path, &f, (0, 0), &grid).unwrap();
            let exact = indicator_integral(x[0], *x.last().unwrap(), a);
            let expected = 32f64.powf(0.5) * (exact - rs);
            assert_abs_diff_eq!(sign_change_error(&path, 0, a, &grid).unwrap(), expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let path = synthetic(4, 1.0, vec![0.0; 5]);
        let g = GridSpec::unit(3, 1.0).unwrap();
        assert!(matches!(riemann_sum(&path, &SignedMeasure::zero(), (0, 0), &g), Err(Error::Alignment(_))));
    }

    #[test]
    fn reference_requires_refinement() {
        let coarse = GridSpec::unit(4, 1.0).unwrap();
        let path = synthetic(32, 1.0, vec![0.0; 33]);
        assert!(matches!(
            reference_integral(&path, &SignedMeasure::zero(), (0, 0), &coarse, 8),
            Err(Error::Refinement(_))
        ));
        assert!(reference_integral(&path, &SignedMeasure::zero(), (0, 0), &coarse, 16).is_err());
    }

    #[test]
    fn density_quantisation_preserves_mass() {
        let table: Vec<(f64, f64)> = (0..=200).map(|k| {
            let x = -2.0 + 0.02 * k as f64;
            (x, x)
        }).collect();
        let f = SignedMeasure::zero().with_density(&table, 500).unwrap();
        let q = f.quantisation();
        assert_eq!(q.atoms, 1000);
        assert_abs_diff_eq!(q.mass, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.total_mass(), 0.0, epsilon = 1e-9);
        assert!(q.max_gap < 0.1);
        assert!(SignedMeasure::zero().with_density(&table, 20_000).is_err());
    }

    #[test]
    fn growth_functional() {
        let f = SignedMeasure::new(0.0, vec![(0.0, 1.0), (2.0, -1.0)]).unwrap();
        assert_abs_diff_eq!(f.growth(1.0), 1.0 + (-2f64).exp(), epsilon = 1e-15);
        assert!(f.check_growth(0.0).is_err());
    }
}
