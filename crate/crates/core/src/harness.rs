//! Monte Carlo rate experiments.
//!
//! Each replicate draws one fine path per component; every coarse grid in the
//! plan is an index subset of it, so all resolutions see the same path. The
//! normalised error at resolution `n` is compared with the limit
//! `delta_ij sum_k c_k L(a_k)`, where the local time comes from the
//! sign-change estimator on the fine grid.

use std::io::Write;
use std::time::Instant;

use serde_json::json;

use crate::error::{domain, Error, Result};
use crate::fgn::{FftSampler, FbmPath, GridSpec, HurstIndex};
use crate::integrals::{self, SignedMeasure, MIN_FINE_FACTOR};
use crate::local_time::{self, LocalTimeProfile};
use crate::par::{self, Schedule};
use crate::rng;
use crate::stats;

pub const DEFAULT_REPLICATES: usize = 1_000;
pub const MAX_REPLICATES: usize = 10_000;
/// Largest number of path values (replicates x fine nodes x components).
pub const DEFAULT_BUDGET: f64 = 2e10;
pub const LOCAL_TIME_FINE_FACTOR: usize = 16;
pub const MAX_INTEGRAL_FINE_FACTOR: usize = 256;
/// Target relative standard error of each `l2_error` when auto-scaling.
pub const TARGET_RELATIVE_SE: f64 = 0.1;
pub const SLOPE_SLACK: f64 = 0.2;
pub const CSV_HEADER: &str = "H,n,l2_error,stderr,replicates,slope,half_width,pass";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Exact integral from the crossing identity (`i = j` only).
    FineSignChange,
    /// Riemann sum on the fine grid as the integral.
    FineRiemann,
}

impl ReferenceKind {
    pub fn label(&self) -> &'static str {
        match self {
            ReferenceKind::FineSignChange => "fine_sign_change",
            ReferenceKind::FineRiemann => "fine_riemann",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fine_sign_change" => Ok(ReferenceKind::FineSignChange),
            "fine_riemann" => Ok(ReferenceKind::FineRiemann),
            other => domain(format!("unknown reference kind '{other}'")),
        }
    }
}

/// Smallest power of two at least `100^{1/(2H-1)}`, clamped to `[16, 256]`.
pub fn integral_fine_factor(h: HurstIndex) -> usize {
    let want = 100f64.powf(1.0 / (2.0 * h.value() - 1.0));
    if !(want < MAX_INTEGRAL_FINE_FACTOR as f64) {
        return MAX_INTEGRAL_FINE_FACTOR;
    }
    (want.ceil() as usize).next_power_of_two().clamp(MIN_FINE_FACTOR, MAX_INTEGRAL_FINE_FACTOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub hurst: Vec<f64>,
    pub n_values: Vec<usize>,
    pub t: f64,
    pub integrand: SignedMeasure,
    /// Zero-based component pair `(i, j)` of `f(B^i) dB^j`.
    pub pair: (usize, usize),
    /// Initial replicate count.
    pub replicates: usize,
    /// Double the replicate count until every cell reaches the target
    /// relative standard error or `max_replicates` is hit.
    pub auto_scale: bool,
    pub max_replicates: usize,
    pub master_seed: u64,
    /// `None` selects the default for the reference kind.
    pub fine_factor: Option<usize>,
    pub reference: ReferenceKind,
    pub budget: f64,
    pub schedule: Schedule,
}

impl ExperimentPlan {
    pub fn new(hurst: Vec<f64>, n_values: Vec<usize>, integrand: SignedMeasure, pair: (usize, usize)) -> Self {
        let reference = if pair.0 == pair.1 { ReferenceKind::FineSignChange } else { ReferenceKind::FineRiemann };
        Self {
            hurst,
            n_values,
            t: 1.0,
            integrand,
            pair,
            replicates: DEFAULT_REPLICATES,
            auto_scale: true,
            max_replicates: MAX_REPLICATES,
            master_seed: 0,
            fine_factor: None,
            reference,
            budget: DEFAULT_BUDGET,
            schedule: Schedule::default(),
        }
    }

    pub fn fine_factor_for(&self, h: HurstIndex) -> usize {
        self.fine_factor.unwrap_or(match self.reference {
            ReferenceKind::FineSignChange => LOCAL_TIME_FINE_FACTOR,
            ReferenceKind::FineRiemann => integral_fine_factor(h),
        })
    }

    fn components(&self) -> usize {
        self.pair.0.max(self.pair.1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hurst.is_empty() {
            return Err(Error::Plan("no Hurst values".into()));
        }
        for &h in &self.hurst {
            HurstIndex::new(h)?.require_theorem_scope()?;
        }
        let n = &self.n_values;
        if n.len() < 2 || n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Plan("resolutions must be strictly increasing".into()));
        }
        if n.iter().any(|v| !v.is_power_of_two()) {
            return Err(Error::Plan("resolutions must be powers of two".into()));
        }
        if n[n.len() - 1] < 4 * n[0] {
            return Err(Error::Plan("resolutions must span at least two octaves".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Plan(format!("time must be positive, got {}", self.t)));
        }
        if self.pair.0 > 1 || self.pair.1 > 1 {
            return Err(Error::Plan("component indices must be 1 or 2".into()));
        }
        if self.replicates < 2 || self.max_replicates < self.replicates {
            return Err(Error::Plan("need 2 <= replicates <= max_replicates".into()));
        }
        if self.reference == ReferenceKind::FineSignChange && self.pair.0 != self.pair.1 {
            return Err(Error::Plan("the sign-change reference needs i = j".into()));
        }
        if let Some(f) = self.fine_factor {
            if f < MIN_FINE_FACTOR || !f.is_power_of_two() {
                return Err(Error::Plan(format!("fine factor must be a power of two >= {MIN_FINE_FACTOR}")));
            }
        }
        for &h in &self.hurst {
            let h = HurstIndex::new(h)?;
            let nodes = (n[n.len() - 1] * self.fine_factor_for(h)) as f64 * self.t.max(1.0);
            let m = if self.auto_scale { self.max_replicates } else { self.replicates };
            let values = m as f64 * nodes * self.components() as f64;
            if values > self.budget {
                return Err(Error::Plan(format!("{values:.3e} path values exceed the budget of {:.3e}", self.budget)));
            }
        }
        Ok(())
    }

    /// Stream seed for Hurst value `h`, independent of the other entries.
    pub fn seed_for(&self, h: f64) -> u64 {
        rng::derive_seed(self.master_seed, h.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCell {
    pub n: usize,
    pub l2_error: f64,
    pub stderr: f64,
    pub replicates: usize,
    /// `stderr <= l2_error`; unusable cells are excluded from the fit.
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Slope of `log2 l2_error` against `log2 n`.
    pub slope: f64,
    pub intercept: f64,
    /// Twice the slope standard error.
    pub half_width: f64,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HurstRates {
    pub hurst: f64,
    pub seed: u64,
    pub fine_factor: usize,
    pub cells: Vec<RateCell>,
    pub fit: Option<RateFit>,
    /// `-(1 - H) / 2`.
    pub target_slope: f64,
    pub pass: Option<bool>,
    /// Every replicate error was exactly zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub experiment: &'static str,
    pub rows: Vec<HurstRates>,
    pub wall_seconds: f64,
}

impl RateReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass == Some(true) || r.degenerate)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            let (slope, hw) = match &row.fit {
                Some(f) => (f.slope.to_string(), f.half_width.to_string()),
                None => (String::new(), String::new()),
            };
            let pass = match row.pass {
                Some(p) => p.to_string(),
                None => String::new(),
            };
            for c in &row.cells {
                writeln!(out, "{},{},{},{},{},{},{},{}", row.hurst, c.n, c.l2_error, c.stderr, c.replicates, slope, hw, pass)?;
            }
        }
        Ok(())
    }

    pub fn summary_json(&self, plan: &ExperimentPlan) -> serde_json::Value {
        json!({
            "experiment": self.experiment,
            "version": concat!("fbmlab ", env!("CARGO_PKG_VERSION")),
            "wall_seconds": self.wall_seconds,
            "plan": {
                "hurst": plan.hurst,
                "n_values": plan.n_values,
                "t": plan.t,
                "pair": [plan.pair.0 + 1, plan.pair.1 + 1],
                "integrand_base": plan.integrand.base(),
                "integrand_atoms": plan.integrand.atoms(),
                "replicates": plan.replicates,
                "auto_scale": plan.auto_scale,
                "max_replicates": plan.max_replicates,
                "master_seed": plan.master_seed,
                "reference": plan.reference.label(),
            },
            "results": self.rows.iter().map(|r| json!({
                "H": r.hurst,
                "seed": r.seed,
                "fine_factor": r.fine_factor,
                "target_slope": r.target_slope,
                "slope": r.fit.as_ref().map(|f| f.slope),
                "half_width": r.fit.as_ref().map(|f| f.half_width),
                "residuals": r.fit.as_ref().map(|f| f.residuals.clone()),
                "pass": r.pass,
                "degenerate": r.degenerate,
                "unusable_n": r.cells.iter().filter(|c| !c.usable).map(|c| c.n).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Weighted least squares of `log2 l2` on `log2 n` with weights from the
/// standard errors carried to the log scale. Points with zero standard
/// error everywhere fall back to an unweighted fit.
pub fn fit_rate(points: &[(usize, f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Fit(points.len()));
    }
    if points.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return domain("rate fit needs positive finite errors");
    }
    let x: Vec<f64> = points.iter().map(|p| (p.0 as f64).log2()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let se_log: Vec<f64> = points.iter().map(|p| p.2 / (p.1 * std::f64::consts::LN_2)).collect();
    let weights: Option<Vec<f64>> =
        if se_log.iter().all(|s| *s > 0.0) { Some(se_log.iter().map(|s| 1.0 / (s * s)).collect()) } else { None };
    let fit = stats::fit_line(&x, &y, weights.as_deref()).ok_or(Error::Fit(points.len()))?;
    let residuals = x.iter().zip(&y).map(|(x, y)| y - fit.intercept - fit.slope * x).collect();
    Ok(RateFit { slope: fit.slope, intercept: fit.intercept, half_width: 2.0 * fit.slope_se, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Integral,
    LocalTime { level: f64 },
}

pub fn run_rate_experiment(plan: &ExperimentPlan) -> Result<RateReport> {
    plan.validate()?;
    run(plan, Target::Integral, "rate")
}

/// Rate of `2 n^{2H-1} sum |B_{k+1} - a|` over crossings towards the fine
/// grid local time at `a`, the single atom of the plan's integrand.
pub fn run_localtime_experiment(plan: &ExperimentPlan) -> Result<RateReport> {
    plan.validate()?;
    let level = single_level(plan)?;
    if plan.reference != ReferenceKind::FineSignChange {
        return Err(Error::Plan("local time experiments use the sign-change reference".into()));
    }
    run(plan, Target::LocalTime { level }, "localtime")
}

fn single_level(plan: &ExperimentPlan) -> Result<f64> {
    if plan.pair.0 != plan.pair.1 {
        return Err(Error::Plan("local time experiments need i = j".into()));
    }
    match plan.integrand.atoms() {
        [(a, _)] => Ok(*a),
        _ => Err(Error::Plan("local time experiments need a single-atom integrand".into())),
    }
}

fn run(plan: &ExperimentPlan, target: Target, name: &'static str) -> Result<RateReport> {
    let start = Instant::now();
    let mut rows = Vec::with_capacity(plan.hurst.len());
    for &hv in &plan.hurst {
        rows.push(run_one(plan, HurstIndex::new(hv)?, target)?);
    }
    Ok(RateReport { experiment: name, rows, wall_seconds: start.elapsed().as_secs_f64() })
}

struct Setup<'a> {
    plan: &'a ExperimentPlan,
    target: Target,
    sampler: FftSampler,
    fine: GridSpec,
    coarse: Vec<GridSpec>,
    fine_ppu: usize,
    seed: u64,
}

impl Setup<'_> {
    fn replicate(&self, scratch: &mut crate::fgn::FftScratch, r: usize) -> Result<Vec<f64>> {
        let comps = self.plan.components();
        let values = (0..comps)
            .map(|c| {
                let mut stream = rng::stream(self.seed, r as u64, c as u32);
                let mut v = Vec::new();
                self.sampler.fill(&mut stream, scratch, &mut v);
                v
            })
            .collect();
        let path = FbmPath { hurst: self.sampler.hurst(), grid: self.fine, values };
        match self.target {
            Target::LocalTime { level } => {
                let reference = local_time::sign_change_estimator(&path, 0, level, &self.fine)?;
                self.coarse
                    .iter()
                    .map(|g| Ok(local_time::sign_change_estimator(&path, 0, level, g)? - reference))
                    .collect()
            }
            Target::Integral => {
                let (i, j) = self.plan.pair;
                let mu = &self.plan.integrand;
                let limit = if i == j && !mu.atoms().is_empty() {
                    let levels: Vec<f64> = mu.atoms().iter().map(|a| a.0).collect();
                    let profile = LocalTimeProfile::sign_change(&path, i, &levels, &self.fine)?;
                    local_time::limit_functional(&profile, mu)?
                } else {
                    0.0
                };
                self.coarse
                    .iter()
                    .map(|g| {
                        let s_n = match self.plan.reference {
                            ReferenceKind::FineSignChange => integrals::closed_form_error(&path, i, mu, g)?,
                            ReferenceKind::FineRiemann => {
                                let factor = self.fine_ppu / g.points_per_unit();
                                integrals::error_sample(&path, mu, (i, j), g, factor)?.s_n
                            }
                        };
                        Ok(s_n - limit)
                    })
                    .collect()
            }
        }
    }

    fn batch(&self, range: std::ops::Range<usize>) -> Result<Vec<Vec<f64>>> {
        par::map_indexed_init(self.plan.schedule, range, || self.sampler.scratch(), |s, r| self.replicate(s, r))
            .into_iter()
            .collect()
    }
}

fn summarise(errors: &[Vec<f64>], n_values: &[usize]) -> Vec<RateCell> {
    let m = errors.len();
    n_values
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let sq: Vec<f64> = errors.iter().map(|e| e[k] * e[k]).collect();
            let ms = par::pairwise_sum(&sq) / m as f64;
            let l2 = ms.sqrt();
            let stderr = if l2 > 0.0 { stats::std_error(&sq) / (2.0 * l2) } else { 0.0 };
            RateCell { n, l2_error: l2, stderr, replicates: m, usable: stderr <= l2 }
        })
        .collect()
}

fn run_one(plan: &ExperimentPlan, h: HurstIndex, target: Target) -> Result<HurstRates> {
    let fine_factor = plan.fine_factor_for(h);
    let n_max = *plan.n_values.last().expect("validated");
    let fine_ppu = n_max * fine_factor;
    let fine = GridSpec::unit(fine_ppu, plan.t)?;
    let coarse = plan.n_values.iter().map(|&n| GridSpec::unit(n, plan.t)).collect::<Result<Vec<_>>>()?;
    let seed = plan.seed_for(h.value());
    let setup = Setup { plan, target, sampler: FftSampler::new(h, &fine)?, fine, coarse, fine_ppu, seed };

    let mut errors = setup.batch(0..plan.replicates)?;
    let mut cells = summarise(&errors, &plan.n_values);
    while plan.auto_scale && errors.len() < plan.max_replicates {
        let settled = cells.iter().all(|c| c.l2_error == 0.0 || c.stderr <= TARGET_RELATIVE_SE * c.l2_error);
        if settled {
            break;
        }
        let m = errors.len();
        let next = (2 * m).min(plan.max_replicates);
        errors.extend(setup.batch(m..next)?);
        cells = summarise(&errors, &plan.n_values);
    }

    let degenerate = cells.iter().all(|c| c.l2_error == 0.0);
    let target_slope = -(1.0 - h.value()) / 2.0;
    let points: Vec<(usize, f64, f64)> =
        cells.iter().filter(|c| c.usable && c.l2_error > 0.0).map(|c| (c.n, c.l2_error, c.stderr)).collect();
    let fit = if degenerate { None } else { fit_rate(&points).ok() };
    let pass = fit.as_ref().map(|f| f.slope <= target_slope + SLOPE_SLACK);
    Ok(HurstRates { hurst: h.value(), seed, fine_factor, cells, fit, target_slope, pass, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDecay {
    pub n: usize,
    pub low_level: f64,
    pub high_level: f64,
    pub l2_low: f64,
    pub l2_high: f64,
    pub decays: bool,
}

/// Local-time `l2_error` at two levels and one resolution with paired seeds.
pub fn level_decay(h: f64, n: usize, t: f64, levels: (f64, f64), replicates: usize, seed: u64) -> Result<LevelDecay> {
    let cell = |a: f64| -> Result<RateCell> {
        let mut plan = ExperimentPlan::new(vec![h], vec![n / 4, n / 2, n], SignedMeasure::indicator_above(a)?, (0, 0));
        plan.t = t;
        plan.replicates = replicates;
        plan.max_replicates = replicates;
        plan.auto_scale = false;
        plan.master_seed = seed;
        let report = run_localtime_experiment(&plan)?;
        Ok(*report.rows[0].cells.last().expect("three cells"))
    };
    if n < 4 {
        return domain("resolution must be at least 4");
    }
    let lo = cell(levels.0)?;
    let hi = cell(levels.1)?;
    Ok(LevelDecay {
        n,
        low_level: levels.0,
        high_level: levels.1,
        l2_low: lo.l2_error,
        l2_high: hi.l2_error,
        decays: hi.l2_error < lo.l2_error,
    })
}

/// Mean of the sign-change local time estimator `2 S_n` at level `a`.
pub fn sign_change_mean(h: f64, n: usize, t: f64, a: f64, paths: usize, seed: u64) -> Result<(f64, f64)> {
    let h = HurstIndex::new(h)?;
    let grid = GridSpec::unit(n, t)?;
    let sampler = FftSampler::new(h, &grid)?;
    let values = par::map_indexed_init(Schedule::default(), 0..paths, || sampler.scratch(), |s, r| {
        let mut stream = rng::stream(seed, r as u64, 0);
        let mut v = Vec::new();
        sampler.fill(&mut stream, s, &mut v);
        let path = FbmPath { hurst: h, grid, values: vec![v] };
        // Scope is checked by the estimator; H = 1/2 exactly is rejected there.
        local_time::sign_change_estimator(&path, 0, a, &grid)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(stats::mean_se(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_plan(pair: (usize, usize), mu: SignedMeasure) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(vec![0.75], vec![16, 32, 64, 128], mu, pair);
        p.replicates = 64;
        p.max_replicates = 64;
        p.master_seed = 11;
        p
    }

    #[test]
    fn fine_factor_rule() {
        assert_eq!(integral_fine_factor(HurstIndex::new(0.75).unwrap()), 256);
        // 100^{1/0.8} = 316 -> capped
        assert_eq!(integral_fine_factor(HurstIndex::new(0.9).unwrap()), 256);
        // 100^{1/0.98} = 110 -> 128
        assert_eq!(integral_fine_factor(HurstIndex::new(0.99).unwrap()), 128);
    }

    #[test]
    fn plan_validation() {
        let mu = SignedMeasure::indicator_above(0.0).unwrap();
        let mut p = small_plan((0, 0), mu.clone());
        assert!(p.validate().is_ok());
        p.n_values = vec![16, 32];
        assert!(matches!(p.validate(), Err(Error::Plan(_))));
        p.n_values = vec![16, 24, 64];
        assert!(matches!(p.validate(), Err(Error::Plan(_))));
        let mut p = small_plan((0, 0), mu.clone());
        p.hurst = vec![0.5];
        assert!(matches!(p.validate(), Err(Error::Scope(_))));
        let mut p = small_plan((0, 1), mu.clone());
        p.reference = ReferenceKind::FineSignChange;
        assert!(matches!(p.validate(), Err(Error::Plan(_))));
        let mut p = small_plan((0, 0), mu);
        p.budget = 1e3;
        assert!(matches!(p.validate(), Err(Error::Plan(_))));
    }

    #[test]
    fn zero_integrand_is_degenerate() {
        let report = run_rate_experiment(&small_plan((0, 0), SignedMeasure::zero())).unwrap();
        let row = &report.rows[0];
        assert!(row.degenerate);
        assert!(row.cells.iter().all(|c| c.l2_error == 0.0));
        let report = run_rate_experiment(&small_plan((0, 1), SignedMeasure::zero())).unwrap();
        assert!(report.rows[0].degenerate);
    }

    #[test]
    fn fit_rate_exact_power_laws() {
        let pts: Vec<(usize, f64, f64)> = (4..10).map(|k| (1usize << k, (1usize << k) as f64 * 0.0 + 3.0 * ((1u64 << k) as f64).powf(-0.2), 0.0)).collect();
        let f = fit_rate(&pts).unwrap();
        assert_abs_diff_eq!(f.slope, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 3f64.log2(), epsilon = 1e-12);
        assert!(f.half_width < 1e-10);
        assert!(matches!(fit_rate(&pts[..2]), Err(Error::Fit(2))));
    }

    #[test]
    fn localtime_is_twice_the_indicator_rate() {
        let mu = SignedMeasure::indicator_above(0.0).unwrap();
        let rate = run_rate_experiment(&small_plan((0, 0), mu.clone())).unwrap();
        let lt = run_localtime_experiment(&small_plan((0, 0), mu)).unwrap();
        for (a, b) in rate.rows[0].cells.iter().zip(&lt.rows[0].cells) {
            assert!((2.0 * a.l2_error - b.l2_error).abs() < 1e-10 * b.l2_error, "{a:?} {b:?}");
        }
    }

    #[test]
    fn schedules_give_identical_reports() {
        let mu = SignedMeasure::indicator_above(0.2).unwrap();
        let mut p = small_plan((0, 1), mu);
        p.fine_factor = Some(16);
        p.schedule = Schedule::Sequential;
        let a = run_rate_experiment(&p).unwrap();
        p.schedule = Schedule::default();
        let b = run_rate_experiment(&p).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn csv_layout() {
        let report = run_rate_experiment(&small_plan((0, 0), SignedMeasure::indicator_above(0.0).unwrap())).unwrap();
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.75,16,"));
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
