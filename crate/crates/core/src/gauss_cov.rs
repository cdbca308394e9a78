//! Covariance matrices of fBm increments and numerical certificates for the
//! bounds they satisfy.
//!
//! Bounds with an explicit constant are checked as hard inequalities. Bounds
//! that only assert the existence of a constant are reported as ratios or
//! small-parameter error terms, to be judged by positivity, finiteness or a
//! scaling regression.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{domain, Error, Result};
use crate::fgn::{increment_covariance, HurstIndex};
use crate::linalg::inverse_with_condition;
use crate::rng;

/// Condition number above which inverse-based checks are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Ordered list of increment windows `(start, end)`; window `i` stands for
/// `B_end - B_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementWindows {
    pairs: Vec<(f64, f64)>,
    allow_degenerate: bool,
}

impl IncrementWindows {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        Self::build(pairs, false)
    }

    /// Windows where zero-length increments are permitted.
    pub fn new_degenerate(pairs: Vec<(f64, f64)>) -> Result<Self> {
        Self::build(pairs, true)
    }

    fn build(pairs: Vec<(f64, f64)>, allow_degenerate: bool) -> Result<Self> {
        if pairs.is_empty() {
            return domain("at least one window is required");
        }
        for &(a, b) in &pairs {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return domain(format!("window ({a}, {b}) has a negative or non-finite endpoint"));
            }
            if a == b && !allow_degenerate {
                return domain(format!("window ({a}, {b}) is degenerate"));
            }
        }
        Ok(Self { pairs, allow_degenerate })
    }

    /// Windows `(t_{i-1}, t_i)` of a partition `0 = t_0 < t_1 < ...`.
    /// The leading zero may be omitted.
    pub fn consecutive(times: &[f64]) -> Result<Self> {
        let mut ts = Vec::with_capacity(times.len() + 1);
        if times.first() != Some(&0.0) {
            ts.push(0.0);
        }
        ts.extend_from_slice(times);
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return domain("partition times must be strictly increasing");
        }
        Self::new(ts.windows(2).map(|w| (w[0], w[1])).collect())
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.pairs.iter().map(|(a, b)| (b - a).abs()).collect()
    }

    pub fn has_degenerate(&self) -> bool {
        self.allow_degenerate && self.pairs.iter().any(|(a, b)| a == b)
    }

    /// `0 = s_0 < s_1 < ... < s_m` with window `i` equal to `(s_{i-1}, s_i)`.
    pub fn is_consecutive_from_origin(&self) -> bool {
        self.pairs[0].0 == 0.0
            && self.pairs.iter().all(|(a, b)| a < b)
            && self.pairs.windows(2).all(|w| w[0].1 == w[1].0)
    }

    /// `s_0 < s_1 <= s_2 < s_3 <= ...`: increasing windows that do not overlap.
    pub fn is_ordered_disjoint(&self) -> bool {
        self.pairs.iter().all(|(a, b)| a < b) && self.pairs.windows(2).all(|w| w[0].1 <= w[1].0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementCovariance {
    pub windows: IncrementWindows,
    pub hurst: HurstIndex,
    pub matrix: DMatrix<f64>,
}

impl IncrementCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `|window_i|^{2H}`, the diagonal of the covariance.
    pub fn scaled_lengths(&self) -> Vec<f64> {
        let e = 2.0 * self.hurst.value();
        self.windows.lengths().iter().map(|d| d.powf(e)).collect()
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues
    }
}

pub fn build_increment_cov(windows: &IncrementWindows, h: HurstIndex) -> IncrementCovariance {
    let p = windows.pairs();
    let m = p.len();
    let mut matrix = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = increment_covariance(h, (p[i].1, p[i].0), (p[j].1, p[j].0));
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    IncrementCovariance { windows: windows.clone(), hurst: h, matrix }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondeterminismCertificate {
    /// Smallest observed ratio of the increment-combination variance to the
    /// sum of individual increment variances.
    pub l_hat: f64,
    pub max_ratio: f64,
    /// Trials whose ratio exceeded the number of increments.
    pub violations: usize,
}

pub fn check_local_nondeterminism(cov: &IncrementCovariance, trials: usize, seed: u64) -> Result<NondeterminismCertificate> {
    if !cov.windows.is_consecutive_from_origin() {
        return domain("local non-determinism check needs consecutive non-degenerate increments from 0");
    }
    let m = cov.dim();
    let diag = cov.scaled_lengths();
    let mut rng = rng::stream(seed, 0, 0);
    let mut l_hat = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trials {
        let u = DVector::from_vec(rng::unit_sphere(&mut rng, m));
        let num = (&cov.matrix * &u).dot(&u);
        let den: f64 = u.iter().zip(&diag).map(|(x, d)| x * x * d).sum();
        let r = num / den;
        l_hat = l_hat.min(r);
        max_ratio = max_ratio.max(r);
        if r > m as f64 * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok(NondeterminismCertificate { l_hat, max_ratio, violations })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterminantSandwich {
    pub det: f64,
    /// `det / prod |window|^{2H}`; must be positive.
    pub lower_ratio: f64,
    /// `det / (m! prod |window|^{2H})`; must not exceed one.
    pub upper_ratio: f64,
    pub violation: bool,
}

pub fn determinant_sandwich(cov: &IncrementCovariance) -> Result<DeterminantSandwich> {
    if !cov.windows.is_ordered_disjoint() {
        return domain("determinant bounds need ordered disjoint windows");
    }
    let det = cov.matrix.clone().lu().determinant();
    let prod: f64 = cov.scaled_lengths().iter().product();
    let factorial: f64 = (1..=cov.dim()).map(|k| k as f64).product();
    let lower_ratio = det / prod;
    let upper_ratio = det / (factorial * prod);
    let violation = !(det > 0.0) || upper_ratio > 1.0 + 1e-9;
    Ok(DeterminantSandwich { det, lower_ratio, upper_ratio, violation })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBracket {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `lambda_min / min |window|^{2H}`, for logging.
    pub lower_ratio: f64,
    pub bracket_ok: bool,
}

pub fn eigenvalue_bracket(cov: &IncrementCovariance) -> EigenBracket {
    let eig = cov.eigenvalues();
    let lambda_min = eig.min();
    let lambda_max = eig.max();
    let scaled = cov.scaled_lengths();
    let smax = scaled.iter().cloned().fold(0.0, f64::max);
    let smin = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = cov.dim() as f64 * smax;
    let bracket_ok = lambda_min > 0.0 && lambda_max <= bound * (1.0 + 1e-12);
    EigenBracket { lambda_min, lambda_max, lower_ratio: lambda_min / smin, bracket_ok }
}

/// Split of `p + q` consecutive increments into small (`J`) and large ones.
/// Indices are zero-based: increment `i` is `(t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementPartition {
    total: usize,
    small: Vec<usize>,
    ratio: f64,
}

impl IncrementPartition {
    pub fn new(total: usize, small: Vec<usize>, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return domain(format!("separation ratio must lie in (0, 1), got {ratio}"));
        }
        if small.windows(2).any(|w| w[1] <= w[0]) {
            return domain("small increment indices must be strictly increasing");
        }
        if small.iter().any(|&i| i >= total) {
            return domain("small increment index out of range");
        }
        if small.first() == Some(&0) {
            return domain("the first increment cannot be small");
        }
        if small.windows(2).any(|w| w[1] - w[0] < 2) {
            return domain("small increments cannot be adjacent");
        }
        if small.len() == total {
            return domain("at least one increment must be large");
        }
        Ok(Self { total, small, ratio })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn small(&self) -> &[usize] {
        &self.small
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn large(&self) -> Vec<usize> {
        (0..self.total).filter(|i| !self.small.contains(i)).collect()
    }

    /// Check the length separation against concrete times `t_0 = 0 < ... < t_total`.
    pub fn check_times(&self, times: &[f64]) -> Result<()> {
        if times.len() != self.total + 1 || times[0] != 0.0 {
            return domain(format!("expected {} times starting at 0", self.total + 1));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("times must be strictly increasing");
        }
        let len = |i: usize| times[i + 1] - times[i];
        let shortest_large = self.large().into_iter().map(len).fold(f64::INFINITY, f64::min);
        for &i in &self.small {
            if len(i) > self.ratio * shortest_large * (1.0 + 1e-12) {
                return domain(format!(
                    "small increment {i} has length {} above {} times the shortest large increment",
                    len(i),
                    self.ratio
                ));
            }
        }
        Ok(())
    }

    /// Windows of the merged large increments: each large increment is
    /// extended back to the end of the previous large one.
    pub fn merged_windows(&self, times: &[f64]) -> Result<IncrementWindows> {
        let mut start = times[0];
        let mut pairs = Vec::new();
        for i in self.large() {
            pairs.push((start, times[i + 1]));
            start = times[i + 1];
        }
        IncrementWindows::new(pairs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub theta1: f64,
    /// `(i, theta)` for each small increment `i`.
    pub theta2: Vec<(usize, f64)>,
    /// `(i, j, theta)` for ordered pairs of distinct small increments.
    pub theta3: Vec<(usize, usize, f64)>,
    /// `(k, l, theta)` indexed by position in the large-increment list.
    pub theta4: Vec<(usize, usize, f64)>,
    /// Largest mixed inverse entry after scaling by its length weight.
    pub mixed_scaled_max: f64,
    pub cof_bound_ok: bool,
    pub condition: f64,
}

/// Error terms of the determinant and inverse factorisation of the increment
/// covariance when the small increments are split off.
pub fn decomp_factorisation_check(times: &[f64], part: &IncrementPartition, h: HurstIndex) -> Result<DecompositionReport> {
    part.check_times(times)?;
    let full = build_increment_cov(&IncrementWindows::consecutive(times)?, h);
    let merged = build_increment_cov(&part.merged_windows(times)?, h);
    let (inv, cond) = inverse_with_condition(&full.matrix)?;
    let (inv_merged, cond_merged) = inverse_with_condition(&merged.matrix)?;
    let condition = cond.max(cond_merged);
    if condition > MAX_CONDITION {
        return Err(Error::Conditioning { cond: condition });
    }

    let lengths: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let hv = h.value();
    let small = part.small();
    let large = part.large();

    let det = full.matrix.clone().lu().determinant();
    let det_merged = merged.matrix.clone().lu().determinant();
    let small_prod: f64 = small.iter().map(|&i| lengths[i].powf(2.0 * hv)).product();
    let theta1 = det / (det_merged * small_prod) - 1.0;

    let theta2 = small.iter().map(|&i| (i, inv[(i, i)] * lengths[i].powf(2.0 * hv) - 1.0)).collect();
    let mut theta3 = Vec::new();
    for &i in small {
        for &j in small {
            if i != j {
                theta3.push((i, j, inv[(i, j)] * lengths[i].powf(hv) * lengths[j].powf(hv)));
            }
        }
    }
    let mut theta4 = Vec::new();
    for (k, &i) in large.iter().enumerate() {
        for (l, &j) in large.iter().enumerate() {
            theta4.push((k, l, inv[(i, j)] / inv_merged[(k, l)] - 1.0));
        }
    }

    let mut mixed_scaled_max: f64 = 0.0;
    let mut cof_bound_ok = true;
    for &i in small {
        for &j in &large {
            let (di, dj) = (lengths[i], lengths[j]);
            let weight = (di * dj.powf(2.0 * hv - 1.0)).max(di.powf(2.0 * hv - 1.0) * dj);
            let scaled = inv[(i, j)].abs() * weight;
            cof_bound_ok &= scaled.is_finite();
            mixed_scaled_max = mixed_scaled_max.max(scaled);
        }
    }

    Ok(DecompositionReport { theta1, theta2, theta3, theta4, mixed_scaled_max, cof_bound_ok, condition })
}

/// Smallest observed `x' S^{-1} x / sum x_i^2 / |window_i|^{2H}` over random
/// unit vectors.
pub fn quadratic_form_floor(cov: &IncrementCovariance, trials: usize, seed: u64) -> Result<f64> {
    if !cov.windows.is_ordered_disjoint() {
        return domain("quadratic form floor needs ordered disjoint windows");
    }
    let (inv, cond) = inverse_with_condition(&cov.matrix)?;
    if cond > MAX_CONDITION {
        return Err(Error::Conditioning { cond });
    }
    let m = cov.dim();
    let diag = cov.scaled_lengths();
    let mut rng = rng::stream(seed, 0, 0);
    let mut floor = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let x = DVector::from_vec(rng::unit_sphere(&mut rng, m));
        let num = (&inv * &x).dot(&x);
        let den: f64 = x.iter().zip(&diag).map(|(v, d)| v * v / d).sum();
        floor = floor.min(num / den);
    }
    Ok(floor)
}

/// `|E[(B_v - B_u) B_t]|` together with the linear envelope `t^{2H-1} |v - u|`.
pub fn cross_covariance_envelope(h: HurstIndex, t: f64, u: f64, v: f64) -> (f64, f64) {
    let lhs = increment_covariance(h, (v, u), (t, 0.0)).abs();
    let rhs = t.powf(2.0 * h.value() - 1.0) * (v - u).abs();
    (lhs, rhs)
}

/// Supremum of `|E[(B_v - B_u) B_t]| / (t^{2H-1} |v - u|)` over all admissible
/// triples, attained as `v - u -> 0` around `t / 2`.
pub fn cross_covariance_sharp_constant(h: HurstIndex) -> f64 {
    let hv = h.value();
    hv * 2f64.powf(2.0 - 2.0 * hv)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TripleSurvey {
    pub triples: usize,
    /// Triples breaking the envelope with constant one.
    pub unit_violations: usize,
    /// Triples breaking the envelope with the sharp constant.
    pub sharp_violations: usize,
    pub max_ratio: f64,
}

/// Evaluate the cross-covariance envelope on uniformly random triples in
/// `[0, horizon]^3`.
pub fn survey_cross_covariance(h: HurstIndex, horizon: f64, triples: usize, seed: u64) -> TripleSurvey {
    use rand::Rng;
    let mut rng = rng::stream(seed, 0, 0);
    let sharp = cross_covariance_sharp_constant(h);
    let mut s = TripleSurvey { triples, ..Default::default() };
    for _ in 0..triples {
        let t = horizon * rng.random::<f64>();
        let a = horizon * rng.random::<f64>();
        let b = horizon * rng.random::<f64>();
        let (u, v) = if a <= b { (a, b) } else { (b, a) };
        let (lhs, rhs) = cross_covariance_envelope(h, t, u, v);
        if lhs > rhs + 1e-12 {
            s.unit_violations += 1;
        }
        if lhs > sharp * rhs + 1e-12 {
            s.sharp_violations += 1;
        }
        if rhs > 0.0 {
            s.max_ratio = s.max_ratio.max(lhs / rhs);
        }
    }
    s
}

/// Random ordered disjoint windows in `[0, horizon]`: `2m` sorted uniforms.
pub fn random_disjoint_windows(m: usize, horizon: f64, rng: &mut rng::StreamRng) -> Result<IncrementWindows> {
    use rand::Rng;
    let mut pts: Vec<f64> = (0..2 * m).map(|_| horizon * rng.random::<f64>()).collect();
    pts.sort_by(f64::total_cmp);
    IncrementWindows::new(pts.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

/// Random consecutive partition `0 < s_1 < ... < s_m <= horizon`.
pub fn random_partition(m: usize, horizon: f64, rng: &mut rng::StreamRng) -> Result<IncrementWindows> {
    use rand::Rng;
    let mut pts: Vec<f64> = (0..m).map(|_| horizon * rng.random::<f64>()).collect();
    pts.sort_by(f64::total_cmp);
    IncrementWindows::consecutive(&pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConfigurationSurvey {
    pub configurations: usize,
    /// Disjoint-window configurations with `det <= 0` or above `m! prod |Delta|^{2H}`.
    pub sandwich_violations: usize,
    /// Consecutive partitions breaking `lambda_max <= m max |Delta|^{2H}` or `lambda_min > 0`.
    pub bracket_violations: usize,
    pub min_lower_ratio: f64,
    pub max_upper_ratio: f64,
}

/// Determinant sandwich on random disjoint windows and the eigenvalue
/// bracket on random consecutive partitions, with `m` cycling through
/// `1..=max_m`.
pub fn survey_configurations(h: HurstIndex, configurations: usize, max_m: usize, horizon: f64, seed: u64) -> Result<ConfigurationSurvey> {
    if max_m == 0 {
        return domain("need at least one increment per configuration");
    }
    let mut rng = rng::stream(seed, 0, 1);
    let mut s = ConfigurationSurvey { configurations, min_lower_ratio: f64::INFINITY, ..Default::default() };
    for k in 0..configurations {
        let m = 1 + k % max_m;
        let cov = build_increment_cov(&random_disjoint_windows(m, horizon, &mut rng)?, h);
        let sandwich = determinant_sandwich(&cov)?;
        if sandwich.violation {
            s.sandwich_violations += 1;
        }
        s.min_lower_ratio = s.min_lower_ratio.min(sandwich.lower_ratio);
        s.max_upper_ratio = s.max_upper_ratio.max(sandwich.upper_ratio);
        let cov = build_increment_cov(&random_partition(m, horizon, &mut rng)?, h);
        if !eigenvalue_bracket(&cov).bracket_ok {
            s.bracket_violations += 1;
        }
    }
    Ok(s)
}

/// Times `{0, 1, 1 + h, 2 + h}` with the middle increment small.
pub fn separated_family(h: f64) -> Result<(Vec<f64>, IncrementPartition)> {
    let times = vec![0.0, 1.0, 1.0 + h, 2.0 + h];
    let part = IncrementPartition::new(3, vec![1], h)?;
    part.check_times(&times)?;
    Ok((times, part))
}

/// `(h, |theta1(h)|)` over `hs` for [`separated_family`] and the log-log
/// slope of `|theta1|` against `h`.
pub fn theta1_scaling(h: HurstIndex, hs: &[f64]) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut rows = Vec::with_capacity(hs.len());
    for &r in hs {
        let (times, part) = separated_family(r)?;
        rows.push((r, decomp_factorisation_check(&times, &part, h)?.theta1.abs()));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let slope = crate::stats::loglog_slope(&x, &y).ok_or(Error::Fit(rows.len()))?;
    Ok((rows, slope))
}
