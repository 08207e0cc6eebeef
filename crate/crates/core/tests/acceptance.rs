//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::time::{Duration, Instant};

use mppc_core::calibration::{compare_methods, fit_crosstalk, ComparisonConfig};
use mppc_core::crosstalk::{
    coincidences_eq5a, g2_model_eq6, invert_g2, total_eq5b, transform_counts_exact,
    transform_histogram_eq4, G2ModelCoefficients,
};
use mppc_core::detector::{
    apply_channel, build_povm, joint_independent, joint_photocount, nrf_analytic, DetectorParams,
};
use mppc_core::estimators::{
    coincidences_and_total, g2_cross_from_joint, g2_from_histogram, nrf_from_joint,
};
use mppc_core::histogram::{CountHistogram, ExpectedHistogram, Histogram};
use mppc_core::montecarlo::{
    geometric_grid, series_from_histograms, simulate_independent, simulate_single, simulate_twin,
    sweep_joint, CrosstalkMode, SimulationConfig,
};
use mppc_core::rng::{derive_seed, Stage};
use mppc_core::sources::{pmf_coherent, pmf_fock, pmf_thermal, SourceKind, SourceSpec};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = o.pass && in_time;
    let timing = if in_time {
        format!("{:.2}s", elapsed.as_secs_f64())
    } else {
        format!(
            "{:.2}s, over the {}s budget",
            elapsed.as_secs_f64(),
            budget.as_secs()
        )
    };
    println!(
        "criterion {id:>2} {} {name}: {} [{timing}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

fn rational(x: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

fn c1_povm_completeness() -> Outcome {
    let mut worst: f64 = 0.0;
    for eta in [0.1, 0.5, 1.0] {
        for p in [0.0, 0.1, 0.3] {
            for n_max in [3, 10, 400] {
                let params = DetectorParams::new(eta, p, n_max).unwrap();
                let q = build_povm(&params, 100).unwrap();
                for k in 0..=100 {
                    let sum: f64 = (0..=n_max).map(|n| q.get(n, k)).sum();
                    worst = worst.max((sum - 1.0).abs());
                }
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("largest |column sum - 1| = {worst:.2e} (limit 1e-10)"),
    )
}

fn c2_crosstalk_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conserved = true;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..12);
        let mut counts: Vec<u64> = (0..len).map(|_| rng.random_range(0..1000)).collect();
        if counts.iter().all(|&c| c == 0) {
            counts[0] = 1;
        }
        let trials: u64 = counts.iter().sum();
        let p = rng.random_range(0.0..0.6);

        let exact_p = BigRational::from_float(p).unwrap();
        let exact_in: Vec<BigRational> = counts.iter().map(|&c| rational(c)).collect();
        let exact_out = transform_counts_exact(&exact_in, &exact_p);
        let total_out = exact_out.iter().fold(BigRational::zero(), |a, b| a + b);
        conserved &= total_out == rational(trials);

        let h = CountHistogram::new(trials, counts).unwrap();
        let t = transform_histogram_eq4(&h, p).unwrap();
        let (pairs, total) = coincidences_and_total(&t);
        let tf = trials as f64;
        worst_rel = worst_rel
            .max((pairs - coincidences_eq5a(&h, p).unwrap()).abs() / tf)
            .max((total - total_eq5b(&h, p).unwrap()).abs() / tf);
    }

    // Worked fixture: 1000 single-count events at p = 1/10.
    let tenth = BigRational::new(BigInt::from(1), BigInt::from(10));
    let fixture = transform_counts_exact(&[rational(0), rational(1000)], &tenth);
    let want = [0, 890, 100, 10];
    let fixture_ok = fixture.len() == 4 && fixture.iter().zip(want).all(|(a, b)| *a == rational(b));
    let h = CountHistogram::new(1000, vec![0, 1000]).unwrap();
    let t = transform_histogram_eq4(&h, 0.1).unwrap();
    let (pairs, total) = coincidences_and_total(&t);
    let aggregates_ok = (total - 1120.0).abs() < 1e-9 && (pairs - 130.0).abs() < 1e-9;

    outcome(
        conserved && worst_rel <= 1e-9 && fixture_ok && aggregates_ok,
        format!(
            "1000 random histograms: exact conservation {conserved}, worst aggregate deviation {worst_rel:.1e}·T; \
             fixture 890/100/10 {fixture_ok}, totals 1120/130 {aggregates_ok}"
        ),
    )
}

fn c3_coefficients_and_inversion() -> Outcome {
    // Recover A and B from the exact transform: two histograms with different g0 and
    // mean give two equations g2' = A g0 + B / n'.
    let p = 0.177;
    let point = |counts: Vec<u64>| {
        let trials = counts.iter().sum();
        let h = CountHistogram::new(trials, counts).unwrap();
        let g0 = g2_from_histogram(&h).unwrap().value;
        let t = transform_histogram_eq4(&h, p).unwrap();
        let g = g2_from_histogram(&t).unwrap().value;
        let n = coincidences_and_total(&t).1 / t.trials();
        (g0, 1.0 / n, g)
    };
    let (x1, y1, g1) = point(vec![9000, 800, 150, 50]);
    let (x2, y2, g2) = point(vec![5000, 3000, 1500, 400, 100]);
    let det = x1 * y2 - x2 * y1;
    let a = (g1 * y2 - g2 * y1) / det;
    let b = (x1 * g2 - x2 * g1) / det;
    let lib = G2ModelCoefficients::from_p(p).unwrap();
    let coef_ok = (a - 0.96263).abs() <= 1e-5
        && (b - 0.43720).abs() <= 1e-5
        && (lib.a_coef - a).abs() <= 1e-9
        && (lib.b_coef - b).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = rng.random_range(0.0..0.6);
        let g0 = rng.random_range(0.0..3.0);
        let n = rng.random_range(0.01..10.0);
        let back = invert_g2(g2_model_eq6(p, g0, n).unwrap(), n, p).unwrap();
        worst = worst.max((back - g0).abs());
    }
    outcome(
        coef_ok && worst <= 1e-10,
        format!(
            "A(0.177)={a:.7} B(0.177)={b:.7} from the transform (want 0.96263, 0.43720 ± 1e-5); \
             worst round-trip error {worst:.1e} on 1000 triples"
        ),
    )
}

fn c4_estimator_baseline() -> Outcome {
    let mut worst: f64 = 0.0;
    for lambda in [0.01, 0.1, 1.0, 5.0] {
        let h =
            ExpectedHistogram::from_distribution(&pmf_coherent(lambda, 1).unwrap(), 1e6).unwrap();
        worst = worst.max((g2_from_histogram(&h).unwrap().value - 1.0).abs());
    }
    let mut fock_ok = true;
    for n in 1..=10usize {
        let h = ExpectedHistogram::from_distribution(&pmf_fock(n, 1), 1000.0).unwrap();
        let g = g2_from_histogram(&h).unwrap().value;
        fock_ok &= (g - (1.0 - 1.0 / n as f64)).abs() <= 1e-15;
    }
    outcome(
        worst <= 1e-9 && fock_ok,
        format!("Poisson g2 worst |g2 - 1| = {worst:.1e} (limit 1e-9); Fock 1..10 give 1-1/n: {fock_ok}"),
    )
}

fn c5_mc_vs_analytic() -> Outcome {
    let det = DetectorParams::new(0.5, 0.1, 10).unwrap();
    let trials = 1_000_000u64;
    let h = simulate_single(&SimulationConfig::new(
        SourceSpec::coherent(3.0),
        det,
        trials,
        5,
    ))
    .unwrap();
    let t = trials as f64;
    let sample: Vec<f64> = h.counts_f64();
    let s_mean = sample
        .iter()
        .enumerate()
        .map(|(k, c)| k as f64 * c)
        .sum::<f64>()
        / t;
    let s_var = sample
        .iter()
        .enumerate()
        .map(|(k, c)| (k as f64 - s_mean).powi(2) * c)
        .sum::<f64>()
        / (t - 1.0);

    let dist = apply_channel(&pmf_coherent(3.0, 1).unwrap(), &det).unwrap();
    let probs = dist.probs();
    let mean: f64 = probs.iter().enumerate().map(|(k, q)| k as f64 * q).sum();
    let central = |r: i32| -> f64 {
        probs
            .iter()
            .enumerate()
            .map(|(k, q)| (k as f64 - mean).powi(r) * q)
            .sum()
    };
    let var = central(2);
    let mean_z = (s_mean - mean).abs() / (var / t).sqrt();
    let var_z = (s_var - var).abs() / ((central(4) - var * var) / t).sqrt();

    let mut worst_bin_z: f64 = 0.0;
    for n in 0..=5usize {
        let h = simulate_single(&SimulationConfig::new(
            SourceSpec::fock(n),
            det,
            trials,
            50 + n as u64,
        ))
        .unwrap();
        let q = build_povm(&det, 5).unwrap();
        for m in 0..=det.n_max {
            let expect = q.get(m, n);
            let got = h.count(m) / t;
            let z = if expect == 0.0 {
                if got == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (got - expect).abs() / (expect * (1.0 - expect) / t).sqrt()
            };
            worst_bin_z = worst_bin_z.max(z);
        }
    }
    outcome(
        mean_z <= 4.0 && var_z <= 4.0 && worst_bin_z <= 5.0,
        format!(
            "Poisson(3): mean {s_mean:.5} vs {mean:.5} ({mean_z:.2} SE), variance {s_var:.5} vs {var:.5} \
             ({var_z:.2} SE); Fock(n<=5) worst bin {worst_bin_z:.2} SE"
        ),
    )
}

/// Fitted p and COD of a 10-point coherent sweep at 0.01-2 counts/pulse, eta 0.2, p 0.177.
fn calibration_sweep(mode: CrosstalkMode, trials: u64) -> (f64, f64, f64) {
    let (p, eta) = (0.177, 0.2);
    let det = DetectorParams::new(eta, p, 400).unwrap();
    // Mean counts per photon: (1 + p) for one crosstalk chance, 1 / (1 - p) for a cascade.
    let gain = match mode {
        CrosstalkMode::Binomial => 1.0 + p,
        CrosstalkMode::Cascade => 1.0 / (1.0 - p),
    };
    let hists: Vec<_> = geometric_grid(0.01, 2.0, 10)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let cfg = SimulationConfig::new(
                SourceSpec::coherent(c / (eta * gain)),
                det,
                trials,
                derive_seed(6, Stage::Sweep, i as u64),
            )
            .with_mode(mode);
            simulate_single(&cfg).unwrap()
        })
        .collect();
    let fit = fit_crosstalk(&series_from_histograms(&hists).unwrap(), 1.0).unwrap();
    (fit.p_hat, fit.p_err, fit.cod)
}

fn c6_calibration_round_trip() -> Outcome {
    let (p_hat, p_err, cod) = calibration_sweep(CrosstalkMode::Cascade, 1_000_000);
    let (p_bin, _, cod_bin) = calibration_sweep(CrosstalkMode::Binomial, 1_000_000);
    outcome(
        (p_hat - 0.177).abs() <= 0.01 && cod >= 0.98,
        format!(
            "cascade sampler: p = {p_hat:.4} ± {p_err:.4} (want 0.177 ± 0.01), COD = {cod:.4} (want >= 0.98); \
             binomial sampler for reference: p = {p_bin:.4}, COD = {cod_bin:.4}"
        ),
    )
}

fn c7_method_comparison() -> Outcome {
    let sweep_trials = 1_000_000;
    let cfg = ComparisonConfig {
        seed: 7,
        ..ComparisonConfig::new(0.177, sweep_trials * 14 / 10, sweep_trials, 50)
    };
    let r = compare_methods(&cfg).unwrap();
    outcome(
        r.dark_spread > r.g2_fit_spread,
        format!(
            "50 replicates: dark-count p = {:.4} (spread {:.4}), g2-fit p = {:.4} (spread {:.4})",
            r.dark_mean, r.dark_spread, r.g2_fit_mean, r.g2_fit_spread
        ),
    )
}

fn c8_nrf_limits() -> Outcome {
    let det = DetectorParams::new(0.163, 0.28, 3).unwrap();
    let mean = 1e-3;
    let coherent = pmf_coherent(mean, 1).unwrap();
    let nrf_coh =
        nrf_analytic(&joint_independent(&coherent, &coherent, &det, &det).unwrap()).unwrap();
    let nrf_sv =
        nrf_analytic(&joint_photocount(&pmf_thermal(mean, 1).unwrap(), &det, &det).unwrap())
            .unwrap();
    let eta_eff = 1.28 * 0.163;
    let diff = nrf_coh - nrf_sv;
    outcome(
        (nrf_coh - 1.4375).abs() <= 1e-3 && (nrf_sv - 1.22886).abs() <= 2e-3 && (diff - eta_eff).abs() <= 1e-3,
        format!(
            "coherent {nrf_coh:.5} (want 1.4375 ± 1e-3), twin beam {nrf_sv:.5} (want 1.22886 ± 2e-3), \
             difference {diff:.5} (want {eta_eff:.5} ± 1e-3)"
        ),
    )
}

/// Each step up the grid beyond `from` is not an increase beyond 4 combined standard errors.
fn decreasing_after(grid: &[f64], ys: &[(f64, f64)], from: f64) -> bool {
    (1..grid.len())
        .filter(|&i| grid[i - 1] >= from)
        .all(|i| ys[i].0 < ys[i - 1].0 + 4.0 * ys[i].1.hypot(ys[i - 1].1))
}

fn c9_nrf_curves() -> Outcome {
    let det = DetectorParams::new(0.163, 0.28, 3).unwrap();
    let grid = geometric_grid(0.1, 6.0, 10).unwrap();
    let curve = |kind: SourceKind, seed: u64| -> Vec<(f64, f64)> {
        let template =
            SimulationConfig::new(SourceSpec::new(kind, 1.0), det, 1_000_000, seed).with_idler(det);
        sweep_joint(&template, &grid)
            .unwrap()
            .iter()
            .map(|h| {
                let e = nrf_from_joint(h).unwrap();
                (e.value, e.std_err)
            })
            .collect()
    };
    let sv = curve(SourceKind::TwinThermal, 90);
    let coh = curve(SourceKind::Coherent, 91);
    let below = sv.iter().zip(&coh).filter(|(s, c)| s.0 < c.0).count();
    let sv_down = decreasing_after(&grid, &sv, 1.0);
    let coh_down = decreasing_after(&grid, &coh, 1.0);
    outcome(
        below == grid.len() && sv_down && coh_down,
        format!(
            "twin beam below coherent at {below}/{} points; decreasing beyond <n>=1: twin {sv_down}, coherent {coh_down}; \
             NRF at <n>=6: twin {:.3}, coherent {:.3}",
            grid.len(),
            sv[grid.len() - 1].0,
            coh[grid.len() - 1].0
        ),
    )
}

fn c10_two_detector_immunity() -> Outcome {
    let det = DetectorParams::new(0.163, 0.28, 400).unwrap();
    let cfg = SimulationConfig::new(SourceSpec::coherent(2.0), det, 1_000_000, 10).with_idler(det);
    let joint = simulate_independent(&cfg).unwrap();
    let cross = g2_cross_from_joint(&joint).unwrap();
    let single = g2_from_histogram(&joint.signal_marginal()).unwrap();
    let excess = single.value - 1.0;
    let cross_dev = (cross.value - 1.0).abs();
    outcome(
        cross_dev <= 4.0 * cross.std_err && excess > 10.0 * cross_dev,
        format!(
            "g2_cross = {:.5} ± {:.5}; single-detector g2 = {:.4} on the same signal arm; excess ratio {:.0}",
            cross.value,
            cross.std_err,
            single.value,
            excess / cross_dev.max(f64::MIN_POSITIVE)
        ),
    )
}

fn c11_twin_correlation() -> Outcome {
    let det = DetectorParams::ideal(400);
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, n) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        let cfg =
            SimulationConfig::new(SourceSpec::twin_thermal(n), det, 1_000_000, 110 + i as u64)
                .with_idler(det);
        let e = g2_cross_from_joint(&simulate_twin(&cfg).unwrap()).unwrap();
        let want = 2.0 + 1.0 / n;
        let z = (e.value - want).abs() / e.std_err;
        ok &= z <= 4.0;
        parts.push(format!(
            "<n>={n}: {:.3} ± {:.3} vs {want:.3} ({z:.2} SE)",
            e.value, e.std_err
        ));
    }
    outcome(ok, parts.join("; "))
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "POVM completeness", secs(1), c1_povm_completeness),
        run(
            2,
            "crosstalk-algebra exactness",
            secs(1),
            c2_crosstalk_exactness,
        ),
        run(
            3,
            "g2 model coefficients and inversion",
            secs(60),
            c3_coefficients_and_inversion,
        ),
        run(4, "estimator baseline", secs(60), c4_estimator_baseline),
        run(5, "Monte Carlo vs analytic", secs(60), c5_mc_vs_analytic),
        run(
            6,
            "calibration round trip",
            secs(300),
            c6_calibration_round_trip,
        ),
        run(7, "method comparison", secs(600), c7_method_comparison),
        run(8, "NRF limits", secs(60), c8_nrf_limits),
        run(9, "NRF curves", secs(600), c9_nrf_curves),
        run(
            10,
            "two-detector immunity to crosstalk",
            secs(60),
            c10_two_detector_immunity,
        ),
        run(
            11,
            "twin-beam correlation scaling",
            secs(60),
            c11_twin_correlation,
        ),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
