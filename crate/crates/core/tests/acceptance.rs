//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use fbmlab::bound_lab::{self, Functional, ScalingStatus};
use fbmlab::fgn::{fgn_autocovariance, ExactSampler, FftSampler};
use fbmlab::harness::{self, ExperimentPlan, RateReport};
use fbmlab::par::Schedule;
use fbmlab::{fbm_covariance, gauss_cov, local_time, rng, stats, GridSpec, HurstIndex, SignedMeasure};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn hurst(v: f64) -> HurstIndex {
    HurstIndex::new(v).unwrap()
}

/// Mean and standard error of each column of `rows`.
fn column_stats(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    (0..rows[0].len())
        .map(|j| stats::mean_se(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

fn generator_fidelity() -> Check {
    const PATHS: usize = 100_000;
    const LAGS: usize = 10;
    let n = 1024;
    let mut worst: f64 = 0.0;
    for h in [0.55, 0.75, 0.9] {
        let hi = hurst(h);
        let grid = GridSpec::unit(n, 1.0).unwrap();
        let sampler = FftSampler::new(hi, &grid).unwrap();
        let scale = (n as f64).powf(2.0 * h);
        let mut scratch = sampler.scratch();
        let mut path = Vec::new();
        let rows: Vec<Vec<f64>> = (0..PATHS)
            .map(|r| {
                let mut s = rng::stream(11, r as u64, 0);
                sampler.fill(&mut s, &mut scratch, &mut path);
                let x: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
                (0..=LAGS)
                    .map(|k| scale * x.iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / (x.len() - k) as f64)
                    .collect()
            })
            .collect();
        for (k, (mean, se)) in column_stats(&rows).into_iter().enumerate() {
            let z = (mean - fgn_autocovariance(hi, k)).abs() / se;
            worst = worst.max(z);
            if z > 4.0 {
                return Err(format!("H={h} lag {k}: {mean} vs {} ({z:.2} se)", fgn_autocovariance(hi, k)));
            }
        }
    }
    // Exact and FFT samplers against the node covariance on a 64-node grid.
    let h = hurst(0.7);
    let grid = GridSpec::unit(63, 1.0).unwrap();
    let fft = FftSampler::new(h, &grid).unwrap();
    let exact = ExactSampler::for_grid(h, &grid, 256).unwrap();
    let nodes = grid.nodes();
    let probes = [(1usize, 1usize), (10, 40), (32, 33), (63, 63), (5, 63), (50, 60)];
    let products = |values: &[f64]| probes.iter().map(|&(i, j)| values[i] * values[j]).collect::<Vec<f64>>();
    let mut scratch = fft.scratch();
    let mut v = Vec::new();
    let mut fft_rows = Vec::new();
    let mut exact_rows = Vec::new();
    for r in 0..20_000u64 {
        fft.fill(&mut rng::stream(12, r, 0), &mut scratch, &mut v);
        fft_rows.push(products(&v));
        let mut e = vec![0.0];
        e.extend(exact.draw(&mut rng::stream(13, r, 0)));
        exact_rows.push(products(&e));
    }
    let mut cross: f64 = 0.0;
    for ((p, f), e) in probes.iter().zip(column_stats(&fft_rows)).zip(column_stats(&exact_rows)) {
        let truth = fbm_covariance(h, nodes[p.0], nodes[p.1]).unwrap();
        for (m, se) in [f, e] {
            let z = (m - truth).abs() / se;
            cross = cross.max(z);
            if z > 4.0 {
                return Err(format!("node covariance {p:?}: {m} vs {truth} ({z:.2} se)"));
            }
        }
    }
    Ok(format!("max |z| autocovariance {worst:.2}, node covariance {cross:.2}"))
}

fn local_time_mean() -> Check {
    let mut notes = Vec::new();
    for h in [0.51, 0.6, 0.75] {
        let (mean, se) = harness::sign_change_mean(h, 4096, 1.0, 0.0, 10_000, 21).map_err(|e| e.to_string())?;
        let oracle = local_time::moment_oracle(hurst(h), 1.0, 0.0, 1).map_err(|e| e.to_string())?;
        let rel = (mean - oracle).abs() / oracle;
        notes.push(format!("H={h}: {mean:.4}+-{se:.4} vs {oracle:.4}"));
        if rel > 0.05 {
            return Err(notes.join("; "));
        }
    }
    Ok(notes.join("; "))
}

fn second_moment() -> Check {
    let v = local_time::moment_oracle(hurst(0.5), 1.0, 0.0, 2).map_err(|e| e.to_string())?;
    if (v - 1.0).abs() <= 1e-3 {
        Ok(format!("{v:.6}"))
    } else {
        Err(format!("{v:.6}"))
    }
}

fn rate_plan(pair: (usize, usize)) -> ExperimentPlan {
    let mut p = ExperimentPlan::new(vec![0.6, 0.75], (6..=11).map(|k| 1 << k).collect(), SignedMeasure::indicator_above(0.0).unwrap(), pair);
    p.master_seed = 31;
    p
}

fn diagonal_rate() -> Check {
    let report = harness::run_rate_experiment(&rate_plan((0, 0))).map_err(|e| e.to_string())?;
    let lines: Vec<String> = report
        .rows
        .iter()
        .map(|r| match &r.fit {
            Some(f) => format!("H={}: slope {:.3} (bound {:.3})", r.hurst, f.slope, r.target_slope + harness::SLOPE_SLACK),
            None => format!("H={}: no fit", r.hurst),
        })
        .collect();
    if report.all_pass() {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn mixed_rate() -> Check {
    let report = harness::run_rate_experiment(&rate_plan((0, 1))).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for r in &report.rows {
        let decreasing = r.cells.windows(2).filter(|w| w[1].l2_error < w[0].l2_error).count();
        lines.push(format!("H={}: {decreasing}/{} steps decrease", r.hurst, r.cells.len() - 1));
        ok &= decreasing >= 4;
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn level_decay() -> Check {
    let d = harness::level_decay(0.75, 512, 1.0, (0.0, 2.0), 1000, 41).map_err(|e| e.to_string())?;
    let msg = format!("l2 at a=0 {:.4}, at a=2 {:.4}", d.l2_low, d.l2_high);
    if d.decays {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lemma_a1() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, theta) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let mc = bound_lab::lemma_a1_monte_carlo(theta, 0.3, 1_000_000, 50 + k as u64).map_err(|e| e.to_string())?;
        let oracle = 0.5 * theta * theta;
        let rel = (mc.mean - oracle).abs() / oracle;
        ok &= rel <= 0.01;
        lines.push(format!("theta={theta}: rel err {rel:.2e}"));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn covariance_suite() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, h) in [0.55, 0.6, 0.75, 0.9].into_iter().enumerate() {
        let hi = hurst(h);
        let tri = gauss_cov::survey_cross_covariance(hi, 1.0, 100_000, 60 + k as u64);
        let conf = gauss_cov::survey_configurations(hi, 1000, 6, 1.0, 70 + k as u64).map_err(|e| e.to_string())?;
        ok &= tri.unit_violations == 0 && conf.sandwich_violations == 0 && conf.bracket_violations == 0;
        lines.push(format!(
            "H={h}: cross-cov {} unit / {} sharp violations (max ratio {:.3}), sandwich {}, bracket {}",
            tri.unit_violations, tri.sharp_violations, tri.max_ratio, conf.sandwich_violations, conf.bracket_violations
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn decoupling() -> Check {
    let theta_grid: Vec<f64> = (4..=9).map(|k| 2f64.powi(-k)).collect();
    let mc_grid: Vec<f64> = (2..=7).map(|k| 2f64.powi(-k)).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for h in [0.6, 0.75] {
        let hi = hurst(h);
        let (_, slope) = gauss_cov::theta1_scaling(hi, &theta_grid).map_err(|e| e.to_string())?;
        let target = 2.0 - 2.0 * h;
        ok &= (slope - target).abs() <= 0.3;
        let rep = bound_lab::decoupling_scaling(Functional::LocalCrossing { eps: 0.0 }, hi, 0.0, &mc_grid, 1 << 20, 80)
            .map_err(|e| e.to_string())?;
        ok &= rep.status != ScalingStatus::Fail;
        lines.push(format!(
            "H={h}: theta1 slope {slope:.3} (target {target:.3}), decoupling {} slope {:?} threshold {:.3}",
            rep.status.label(),
            rep.slope.map(|s| (s * 1000.0).round() / 1000.0),
            rep.threshold
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn csv(report: &RateReport) -> Vec<u8> {
    let mut out = Vec::new();
    report.write_csv(&mut out).unwrap();
    out
}

fn determinism() -> Check {
    let mut plan = ExperimentPlan::new(vec![0.6, 0.75], vec![64, 128, 256, 512], SignedMeasure::indicator_above(0.3).unwrap(), (0, 0));
    plan.replicates = 300;
    plan.master_seed = 90;
    let mut outputs = Vec::new();
    plan.schedule = Schedule::Sequential;
    outputs.push(csv(&harness::run_rate_experiment(&plan).map_err(|e| e.to_string())?));
    plan.schedule = Schedule::default();
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        outputs.push(csv(&pool.install(|| harness::run_rate_experiment(&plan)).map_err(|e| e.to_string())?));
    }
    if outputs.windows(2).all(|w| w[0] == w[1]) {
        Ok(format!("{} identical CSVs ({} bytes)", outputs.len(), outputs[0].len()))
    } else {
        Err("CSV output depends on the schedule".into())
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("generator fidelity", generator_fidelity),
        ("local-time mean oracle", local_time_mean),
        ("second-moment oracle", second_moment),
        ("rate, equal components", diagonal_rate),
        ("rate, distinct components", mixed_rate),
        ("level decay", level_decay),
        ("crossing oracle", lemma_a1),
        ("covariance bound suite", covariance_suite),
        ("decoupling scaling", decoupling),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("criterion {:>2} PASS {name} [{secs:.1}s]: {msg}", k + 1),
            Err(msg) => {
                failures += 1;
                println!("criterion {:>2} FAIL {name} [{secs:.1}s]: {msg}", k + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
