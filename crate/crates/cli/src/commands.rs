use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use fbmlab::bound_lab::{self, Functional, ScalingStatus};
use fbmlab::gauss_cov;
use fbmlab::harness::{self, ExperimentPlan, ReferenceKind};
use fbmlab::local_time::{self, EstimatorKind};
use fbmlab::{sample_exact, sample_fft, stats, GridSpec, HurstIndex, SignedMeasure};

use crate::config::{parse_h_grid, parse_list, parse_pair, parse_resolutions, Command, RunConfig};
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A verification check failed.
    Failed,
    /// A verification was statistically under-powered.
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Failed => 1,
            Outcome::Inconclusive => 2,
        }
    }

    fn worst(self, other: Outcome) -> Outcome {
        use Outcome::*;
        match (self, other) {
            (Failed, _) | (_, Failed) => Failed,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Success,
        }
    }
}

pub struct Report {
    pub outcome: Outcome,
    /// Machine-readable result for stdout.
    pub stdout: String,
    /// Human-readable notes for stderr.
    pub notes: Vec<String>,
}

pub fn dispatch(cfg: &RunConfig) -> Result<Report> {
    let out = OutputDir::create(&cfg.output_dir)?;
    match cfg.command {
        Command::Simulate => simulate(cfg, &out),
        Command::Localtime => localtime(cfg, &out),
        Command::Rate => rate(cfg, &out),
        Command::VerifyBounds => verify_bounds(cfg, &out),
        Command::Oracle => oracle(cfg, &out),
    }
}

fn hurst(cfg: &RunConfig, key: &str) -> Result<HurstIndex> {
    Ok(HurstIndex::new(cfg.parse_value(key)?)?)
}

fn simulate(cfg: &RunConfig, out: &OutputDir) -> Result<Report> {
    let h = hurst(cfg, "H")?;
    let n: usize = cfg.parse_value("n")?;
    let horizon: f64 = cfg.parse_value("T")?;
    let t_end: f64 = cfg.parse_optional("t")?.unwrap_or(horizon);
    let components: usize = cfg.parse_value("components")?;
    let grid = GridSpec::new(horizon, n, t_end)?;
    let path = match cfg.require("method")? {
        "fft" => sample_fft(h, &grid, cfg.master_seed, components)?,
        "exact" => sample_exact(h, &grid, cfg.master_seed, components)?,
        other => bail!("method must be 'fft' or 'exact', got '{other}'"),
    };
    let mut csv = Vec::new();
    path.write_csv(&mut csv)?;
    let file = out.write_with_manifest("simulate", "csv", &csv, cfg)?;
    Ok(Report {
        outcome: Outcome::Success,
        stdout: String::from_utf8(csv)?,
        notes: vec![format!("wrote {} nodes to {}", grid.node_count(), file.display())],
    })
}

fn localtime(cfg: &RunConfig, out: &OutputDir) -> Result<Report> {
    let h = hurst(cfg, "H")?;
    let n: usize = cfg.parse_value("n")?;
    let t: f64 = cfg.parse_value("t")?;
    let mut levels: Vec<f64> = parse_list("levels", cfg.require("levels")?)?;
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let paths: usize = cfg.parse_value("paths")?;
    if paths == 0 {
        bail!("paths must be positive");
    }
    let grid = GridSpec::unit(n, t)?;
    let sampler = fbmlab::fgn::FftSampler::new(h, &grid)?;
    let estimator = cfg.require("estimator")?;
    let kind = match estimator {
        "sign" => {
            h.require_theorem_scope()?;
            EstimatorKind::SignChange { n }
        }
        "bin" => EstimatorKind::Binning { eps: cfg.parse_optional("eps")?.unwrap_or_else(|| local_time::default_window(h, n)) },
        other => bail!("estimator must be 'bin' or 'sign', got '{other}'"),
    };
    let mut per_level: Vec<Vec<f64>> = vec![Vec::with_capacity(paths); levels.len()];
    for r in 0..paths {
        let path = sampler.sample(cfg.master_seed, r as u64, 1)?;
        let profile = match kind {
            EstimatorKind::SignChange { .. } => local_time::LocalTimeProfile::sign_change(&path, 0, &levels, &grid)?,
            EstimatorKind::Binning { eps } => local_time::LocalTimeProfile::binning(&path, 0, &levels, eps)?,
        };
        for (acc, v) in per_level.iter_mut().zip(profile.estimates) {
            acc.push(v);
        }
    }
    let mut csv = String::from("a,estimate,stderr,estimator,n,H,t\n");
    for (a, values) in levels.iter().zip(&per_level) {
        let (mean, se) = stats::mean_se(values);
        let se = if paths > 1 { se.to_string() } else { String::new() };
        writeln!(csv, "{a},{mean},{se},{},{n},{},{t}", kind.label(), h.value())?;
    }
    out.write_with_manifest("localtime", "csv", csv.as_bytes(), cfg)?;
    Ok(Report { outcome: Outcome::Success, stdout: csv, notes: vec![] })
}

/// `delta:a`, `zero`, or `measure:a1@m1,a2@m2` (masses of the derivative measure).
pub fn parse_integrand(v: &str) -> Result<SignedMeasure> {
    if v == "zero" {
        return Ok(SignedMeasure::zero());
    }
    if let Some(a) = v.strip_prefix("delta:") {
        return Ok(SignedMeasure::indicator_above(a.trim().parse().context("bad level in integrand")?)?);
    }
    if let Some(list) = v.strip_prefix("measure:") {
        let mut atoms = Vec::new();
        let mut base = 0.0;
        for item in list.split(',') {
            let (a, m) = item.split_once('@').with_context(|| format!("expected level@mass, got '{item}'"))?;
            let a: f64 = a.trim().parse().context("bad atom level")?;
            let m: f64 = m.trim().parse().context("bad atom mass")?;
            atoms.push((a, 0.5 * m));
            base += 0.5 * m;
        }
        return Ok(SignedMeasure::new(base, atoms)?);
    }
    bail!("integrand must be 'zero', 'delta:a' or 'measure:a@m,...', got '{v}'")
}

pub fn build_plan(cfg: &RunConfig) -> Result<ExperimentPlan> {
    let hurst: Vec<f64> = parse_list("hurst", cfg.require("hurst")?)?;
    let n = parse_resolutions(cfg.require("n")?)?;
    let pair = parse_pair(cfg.require("pair")?)?;
    let mut plan = ExperimentPlan::new(hurst, n, parse_integrand(cfg.require("integrand")?)?, pair);
    plan.t = cfg.parse_value("t")?;
    plan.replicates = cfg.parse_value("replicates")?;
    plan.max_replicates = cfg.parse_value("max_replicates")?;
    plan.auto_scale = cfg.parse_value("auto_scale")?;
    plan.fine_factor = cfg.parse_optional("fine_factor")?;
    if let Some(r) = cfg.get("reference") {
        plan.reference = ReferenceKind::parse(r)?;
    }
    plan.budget = cfg.parse_value("budget")?;
    plan.master_seed = cfg.master_seed;
    Ok(plan)
}

fn rate(cfg: &RunConfig, out: &OutputDir) -> Result<Report> {
    let plan = build_plan(cfg)?;
    let report = match cfg.require("experiment")? {
        "rate" => harness::run_rate_experiment(&plan)?,
        "localtime" => harness::run_localtime_experiment(&plan)?,
        other => bail!("experiment must be 'rate' or 'localtime', got '{other}'"),
    };
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    out.write_with_manifest("rate", "csv", &csv, cfg)?;
    let json = serde_json::to_string_pretty(&report.summary_json(&plan))?;
    out.write("rate.json", json.as_bytes())?;
    let mut notes = Vec::new();
    for row in &report.rows {
        match &row.fit {
            Some(f) => notes.push(format!(
                "H={}: slope {:.4} +- {:.4} (bound {:.4} + {})",
                row.hurst, f.slope, f.half_width, row.target_slope, harness::SLOPE_SLACK
            )),
            None if row.degenerate => notes.push(format!("H={}: all errors are exactly zero", row.hurst)),
            None => notes.push(format!("H={}: too few usable cells for a fit", row.hurst)),
        }
    }
    let outcome = if report.rows.iter().any(|r| r.pass == Some(false)) {
        Outcome::Failed
    } else if report.rows.iter().any(|r| r.pass.is_none() && !r.degenerate) {
        Outcome::Inconclusive
    } else {
        Outcome::Success
    };
    Ok(Report { outcome, stdout: String::from_utf8(csv)?, notes })
}

const BOUNDS_HEADER: &str = "check,param_h,H,value\n";

fn row(csv: &mut String, check: &str, param: Option<f64>, h: f64, value: f64) {
    let p = param.map(|p| p.to_string()).unwrap_or_default();
    let _ = writeln!(csv, "{check},{p},{h},{value}");
}

fn verify_bounds(cfg: &RunConfig, out: &OutputDir) -> Result<Report> {
    let suite = cfg.require("suite")?;
    let (outcome, csv, notes) = match suite {
        "cov" => covariance_suite(cfg)?,
        "decoupling" => decoupling_suite(cfg)?,
        "lemmas" => lemma_suite(cfg)?,
        other => bail!("suite must be 'cov', 'decoupling' or 'lemmas', got '{other}'"),
    };
    out.write_with_manifest(&format!("verify-{suite}"), "csv", csv.as_bytes(), cfg)?;
    Ok(Report { outcome, stdout: csv, notes })
}

fn hurst_list(cfg: &RunConfig, default: &str) -> Result<Vec<HurstIndex>> {
    parse_list::<f64>("hurst", cfg.get("hurst").unwrap_or(default))?
        .into_iter()
        .map(|h| Ok(HurstIndex::new(h)?))
        .collect()
}

fn covariance_suite(cfg: &RunConfig) -> Result<(Outcome, String, Vec<String>)> {
    let hs = parse_h_grid(cfg.get("h_grid").unwrap_or("2^-4..2^-9"))?;
    let triples: usize = cfg.parse_value("triples")?;
    let configurations: usize = cfg.parse_value("configurations")?;
    let mut csv = String::from(BOUNDS_HEADER);
    let mut notes = Vec::new();
    let mut outcome = Outcome::Success;
    for h in hurst_list(cfg, "0.6,0.75")? {
        let hv = h.value();
        let (rows, slope) = gauss_cov::theta1_scaling(h, &hs)?;
        for (r, theta) in &rows {
            row(&mut csv, "theta1", Some(*r), hv, *theta);
        }
        row(&mut csv, "theta1_slope", None, hv, slope);
        let target = 2.0 - 2.0 * hv;
        if (slope - target).abs() > 0.3 {
            outcome = Outcome::Failed;
            notes.push(format!("H={hv}: theta1 slope {slope:.3} outside {target:.3} +- 0.3"));
        }
        let tri = gauss_cov::survey_cross_covariance(h, 1.0, triples, cfg.master_seed);
        row(&mut csv, "cross_cov_unit_violations", None, hv, tri.unit_violations as f64);
        row(&mut csv, "cross_cov_sharp_violations", None, hv, tri.sharp_violations as f64);
        row(&mut csv, "cross_cov_max_ratio", None, hv, tri.max_ratio);
        if tri.sharp_violations > 0 {
            outcome = Outcome::Failed;
        }
        if tri.unit_violations > 0 {
            notes.push(format!(
                "H={hv}: {} of {} triples exceed the unit-constant envelope (max ratio {:.4}, sharp constant {:.4})",
                tri.unit_violations,
                tri.triples,
                tri.max_ratio,
                gauss_cov::cross_covariance_sharp_constant(h)
            ));
        }
        let conf = gauss_cov::survey_configurations(h, configurations, 6, 1.0, cfg.master_seed)?;
        row(&mut csv, "sandwich_violations", None, hv, conf.sandwich_violations as f64);
        row(&mut csv, "sandwich_max_upper_ratio", None, hv, conf.max_upper_ratio);
        row(&mut csv, "sandwich_min_lower_ratio", None, hv, conf.min_lower_ratio);
        row(&mut csv, "eigen_bracket_violations", None, hv, conf.bracket_violations as f64);
        if conf.sandwich_violations > 0 || conf.bracket_violations > 0 {
            outcome = Outcome::Failed;
        }
    }
    Ok((outcome, csv, notes))
}

fn parse_functional(v: &str) -> Result<Functional> {
    Ok(match v {
        "local-crossing" => Functional::LocalCrossing { eps: 0.0 },
        "crossing-overshoot" => Functional::CrossingOvershoot,
        "indicator-product" => Functional::IndicatorProduct,
        other => bail!("unknown functional '{other}'"),
    })
}

fn decoupling_suite(cfg: &RunConfig) -> Result<(Outcome, String, Vec<String>)> {
    let hs = parse_h_grid(cfg.get("h_grid").unwrap_or("2^-2..2^-7"))?;
    let samples: usize = cfg.parse_optional("samples")?.unwrap_or(1 << 20);
    let functional = parse_functional(cfg.require("functional")?)?;
    let level: f64 = cfg.parse_value("level")?;
    let mut csv = String::from(BOUNDS_HEADER);
    let mut notes = Vec::new();
    let mut outcome = Outcome::Success;
    for h in hurst_list(cfg, "0.75")? {
        let hv = h.value();
        let rep = bound_lab::decoupling_scaling(functional, h, level, &hs, samples, cfg.master_seed)?;
        for r in &rep.rows {
            row(&mut csv, "true_mean", Some(r.h), hv, r.true_mean);
            row(&mut csv, "true_stderr", Some(r.h), hv, r.true_stderr);
            row(&mut csv, "surrogate", Some(r.h), hv, r.surrogate);
            row(&mut csv, "relative_discrepancy", Some(r.h), hv, r.relative);
        }
        row(&mut csv, "slope", None, hv, rep.slope.unwrap_or(f64::NAN));
        row(&mut csv, "slope_threshold", None, hv, rep.threshold);
        let status = match rep.status {
            ScalingStatus::Pass => Outcome::Success,
            ScalingStatus::Fail => Outcome::Failed,
            ScalingStatus::Inconclusive => Outcome::Inconclusive,
        };
        row(&mut csv, "status", None, hv, status.exit_code() as f64);
        notes.push(format!("H={hv}: {} (slope {:?}, threshold {:.3})", rep.status.label(), rep.slope, rep.threshold));
        outcome = outcome.worst(status);
    }
    Ok((outcome, csv, notes))
}

fn lemma_suite(cfg: &RunConfig) -> Result<(Outcome, String, Vec<String>)> {
    let samples: usize = cfg.parse_optional("samples")?.unwrap_or(1_000_000);
    let thetas: Vec<f64> = parse_list("theta", cfg.require("theta")?)?;
    let mut csv = String::from(BOUNDS_HEADER);
    let mut notes = Vec::new();
    let mut outcome = Outcome::Success;
    for (k, &theta) in thetas.iter().enumerate() {
        let oracle = bound_lab::lemma_a1_oracle(theta)?;
        let mc = bound_lab::lemma_a1_monte_carlo(theta, 0.3, samples, fbmlab::rng::derive_seed(cfg.master_seed, k as u64))?;
        row(&mut csv, "a1_oracle", Some(theta), f64::NAN, oracle);
        row(&mut csv, "a1_monte_carlo", Some(theta), f64::NAN, mc.mean);
        row(&mut csv, "a1_stderr", Some(theta), f64::NAN, mc.stderr);
        if oracle > 0.0 && (mc.mean - oracle).abs() > 0.01 * oracle {
            outcome = Outcome::Failed;
            notes.push(format!("theta={theta}: Monte Carlo {} vs {oracle}", mc.mean));
        }
    }
    for (k, (t1, t2)) in [(1.0, 1.0), (3.0, 0.1), (1.0, 0.0)].into_iter().enumerate() {
        let r = bound_lab::lemma_a2_check(t1, t2, samples.max(bound_lab::MIN_LEMMA_SAMPLES), fbmlab::rng::derive_seed(cfg.master_seed, 100 + k as u64))?;
        row(&mut csv, &format!("a2_lhs1_theta1={t1}"), Some(t2), f64::NAN, r.lhs1);
        row(&mut csv, &format!("a2_lhs2_theta1={t1}"), Some(t2), f64::NAN, r.lhs2);
        row(&mut csv, &format!("a2_pass_theta1={t1}"), Some(t2), f64::NAN, if r.pass { 1.0 } else { 0.0 });
        if !r.pass {
            outcome = Outcome::Failed;
        }
    }
    for h in hurst_list(cfg, "0.6,0.75")? {
        let ns: Vec<usize> = (4..10).map(|k| 1 << k).collect();
        let mut vals = Vec::new();
        for &n in &ns {
            let v = bound_lab::grid_density_discrepancy(h, 0.0, n, 1.0)?;
            row(&mut csv, "a3_discrepancy", Some(n as f64), h.value(), v);
            vals.push(v);
        }
        let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let slope = stats::loglog_slope(&x, &vals).unwrap_or(f64::NAN);
        row(&mut csv, "a3_slope", None, h.value(), slope);
        notes.push(format!("H={}: grid density discrepancy slope {slope:.3} (asymptotic {:.3})", h.value(), h.value() - 1.0));
    }
    Ok((outcome, csv, notes))
}

fn oracle(cfg: &RunConfig, out: &OutputDir) -> Result<Report> {
    let (name, value) = match cfg.require("lemma")? {
        "a1" => ("a1", bound_lab::lemma_a1_oracle(cfg.parse_value("theta")?)?),
        "moments" => {
            let h = hurst(cfg, "H")?;
            let p: u32 = cfg.parse_value("p")?;
            ("moments", local_time::moment_oracle(h, cfg.parse_value("t")?, cfg.parse_value("a")?, p)?)
        }
        other => bail!("lemma must be 'a1' or 'moments', got '{other}'"),
    };
    out.write_with_manifest("oracle", "csv", format!("oracle,value\n{name},{value:?}\n").as_bytes(), cfg)?;
    Ok(Report { outcome: Outcome::Success, stdout: format!("{value:?}\n"), notes: vec![] })
}
