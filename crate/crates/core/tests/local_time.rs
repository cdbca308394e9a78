use fbmlab::fgn::FftSampler;
use fbmlab::local_time::{binning_estimator, default_window, level_pair_density, moment_oracle, sign_change_estimator};
use fbmlab::{harness, integrals, rng, sample_fft, stats, GridSpec, HurstIndex, SignedMeasure};
use proptest::prelude::*;

fn hurst(v: f64) -> HurstIndex {
    HurstIndex::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occupation_of_tiling_bins_adds_up(h in 0.3f64..0.95, seed in any::<u64>(), eps in 0.01f64..0.3, n in 8usize..300, t in 0.2f64..1.0) {
        let grid = GridSpec::unit(n, t).unwrap();
        let path = sample_fft(hurst(h), &grid, seed, 1).unwrap();
        let x = path.component(0);
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Bins of width 2 eps shifted by an irrational offset so no node sits on a boundary.
        let start = lo - eps * 0.618_033_988_7;
        let bins = ((hi - start) / (2.0 * eps)).ceil() as usize + 1;
        let total: f64 = (0..bins)
            .map(|k| start + (2 * k + 1) as f64 * eps)
            .map(|a| 2.0 * eps * binning_estimator(&path, 0, a, eps, t).unwrap().value)
            .sum();
        prop_assert!((total - t).abs() <= 1e-9 * t, "{total} vs {t}");
    }

    #[test]
    fn sign_change_estimator_doubles_the_error(h in 0.55f64..0.95, seed in any::<u64>(), a in -0.5f64..0.5) {
        let grid = GridSpec::unit(128, 1.0).unwrap();
        let path = sample_fft(hurst(h), &grid, seed, 1).unwrap();
        prop_assert_eq!(
            sign_change_estimator(&path, 0, a, &grid).unwrap(),
            2.0 * integrals::sign_change_error(&path, 0, a, &grid).unwrap()
        );
    }

    #[test]
    fn pair_density_is_symmetric(h in 0.05f64..0.95, a in -2.0f64..2.0, u in 0.01f64..1.0, v in 0.01f64..1.0) {
        prop_assume!((u - v).abs() > 1e-6);
        let d1 = level_pair_density(hurst(h), a, u, v);
        let d2 = level_pair_density(hurst(h), a, v, u);
        prop_assert!(d1 >= 0.0);
        prop_assert!((d1 - d2).abs() <= 1e-13 * (1.0 + d1));
    }
}

#[test]
fn moment_oracle_values() {
    let m1 = moment_oracle(hurst(0.5), 1.0, 0.0, 1).unwrap();
    assert!((m1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9);
    let m2 = moment_oracle(hurst(0.5), 1.0, 0.0, 2).unwrap();
    assert!((m2 - 1.0).abs() < 1e-4, "{m2}");
    for h in [0.6, 0.75] {
        let m = moment_oracle(hurst(h), 1.0, 0.0, 1).unwrap();
        let closed = 1.0 / ((1.0 - h) * (2.0 * std::f64::consts::PI).sqrt());
        assert!((m - closed).abs() < 1e-8 * closed);
    }
    let tail: Vec<f64> = [0.0, 1.0, 2.0, 4.0, 8.0].iter().map(|&a| moment_oracle(hurst(0.7), 1.0, a, 1).unwrap()).collect();
    assert!(tail.windows(2).all(|w| w[1] < w[0]));
    assert!(tail[4] < 1e-10);
}

#[test]
fn brownian_binning_mean() {
    let (n, eps) = (4096, 0.02);
    let grid = GridSpec::unit(n, 1.0).unwrap();
    let sampler = FftSampler::new(hurst(0.5), &grid).unwrap();
    let mut scratch = sampler.scratch();
    let mut v = Vec::new();
    let values: Vec<f64> = (0..100_000u64)
        .map(|r| {
            sampler.fill(&mut rng::stream(3, r, 0), &mut scratch, &mut v);
            let occupied = v[..n].iter().filter(|x| x.abs() <= eps).count();
            occupied as f64 / (n as f64 * 2.0 * eps)
        })
        .collect();
    let mean = stats::mean(&values);
    let target = (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean - target).abs() <= 0.02 * target, "{mean}");
}

#[test]
fn binning_and_sign_change_agree() {
    let n = 4096;
    for (k, h) in [0.6, 0.75].into_iter().enumerate() {
        let hi = hurst(h);
        let grid = GridSpec::unit(n, 1.0).unwrap();
        let sampler = FftSampler::new(hi, &grid).unwrap();
        let eps = default_window(hi, n);
        let mut bins = Vec::new();
        let mut signs = Vec::new();
        for r in 0..4000u64 {
            let path = sampler.sample(50 + k as u64, r, 1).unwrap();
            bins.push(binning_estimator(&path, 0, 0.0, eps, 1.0).unwrap().value);
            signs.push(sign_change_estimator(&path, 0, 0.0, &grid).unwrap());
        }
        let (mb, sb) = stats::mean_se(&bins);
        let (ms, ss) = stats::mean_se(&signs);
        assert!((mb - ms).abs() <= 3.0 * (sb * sb + ss * ss).sqrt(), "H={h}: binning {mb} sign {ms}");
    }
}

#[test]
fn local_time_rate_matches_the_exponent() {
    for h in [0.6, 0.75] {
        let mut plan = harness::ExperimentPlan::new(vec![h], (6..=11).map(|k| 1 << k).collect(), SignedMeasure::indicator_above(0.0).unwrap(), (0, 0));
        plan.replicates = 1000;
        plan.auto_scale = false;
        plan.master_seed = 12;
        let row = harness::run_localtime_experiment(&plan).unwrap().rows.remove(0);
        let slope = row.fit.unwrap().slope;
        let target = -(1.0 - h) / 2.0;
        assert!((slope - target).abs() <= 0.2, "H={h}: slope {slope} vs {target}");
    }
}

/// Exact `E[2 S_n]` at level 0: each step contributes
/// `sigma_{k+1} (1 - rho_k) / sqrt(2 pi)` by the bivariate normal crossing
/// formula, and the first step (from `B_0 = 0`, counted as below) `E[B_{1/n}^+]`.
fn exact_sign_change_mean(h: f64, n: usize) -> f64 {
    let hi = hurst(h);
    let nf = n as f64;
    let root = (2.0 * std::f64::consts::PI).sqrt();
    let mut total = nf.powf(-h) / root;
    for k in 1..n {
        let (s, t) = (k as f64 / nf, (k + 1) as f64 / nf);
        let (ss, st) = (s.powf(h), t.powf(h));
        let rho = fbmlab::fbm_covariance(hi, s, t).unwrap() / (ss * st);
        total += st * (1.0 - rho) / root;
    }
    2.0 * nf.powf(2.0 * h - 1.0) * total
}

#[test]
fn sign_change_mean_matches_its_exact_expectation() {
    for (h, n) in [(0.6, 1024), (0.75, 1024), (0.75, 4096), (0.9, 256)] {
        let (mean, se) = harness::sign_change_mean(h, n, 1.0, 0.0, 4000, 8).unwrap();
        let exact = exact_sign_change_mean(h, n);
        assert!((mean - exact).abs() <= 4.0 * se, "H={h} n={n}: {mean} +- {se} vs {exact}");
    }
}

#[test]
fn sign_change_bias_vanishes_at_rate_one_minus_h() {
    for h in [0.6, 0.75, 0.9] {
        let oracle = moment_oracle(hurst(h), 1.0, 0.0, 1).unwrap();
        let bias = |n: usize| 1.0 - exact_sign_change_mean(h, n) / oracle;
        let ratio = bias(1 << 16) / bias(1 << 14);
        assert!(bias(1 << 14) > 0.0);
        assert!((ratio - 4f64.powf(-(1.0 - h))).abs() < 0.05, "H={h}: ratio {ratio}");
    }
}

#[test]
#[ignore = "at H = 0.75 and n = 4096 the estimator's exact mean is 11% below the limit (bias of order n^(H-1)); see the exact-expectation test"]
fn sign_change_mean_within_five_percent_at_4096() {
    for h in [0.6, 0.75] {
        let (mean, _) = harness::sign_change_mean(h, 4096, 1.0, 0.0, 10_000, 8).unwrap();
        let oracle = moment_oracle(hurst(h), 1.0, 0.0, 1).unwrap();
        assert!((mean - oracle).abs() <= 0.05 * oracle, "H={h}: {mean} vs {oracle}");
    }
}
