//! Acceptance suite: one test per exit criterion, every tolerance pinned.
//! Run with `cargo test -p equidiv-cli --test acceptance -- --nocapture` to
//! see the measured values per criterion.

use std::time::Instant;

use equidiv::dynsys::{builtin_system, evolve_orbit, BuiltinSystem, HopfCycle};
use equidiv::frames::{hessian_pushforward_check, FrameSeries, FrameSettings};
use equidiv::response::{
    attach_oracle, ensemble_comparator, finite_difference_oracle, linear_response,
    run_response_pipeline, unstable_contribution, ComparatorSettings, OracleSettings, RunSettings,
};
use equidiv::stats;
use equidiv::validate::run_validation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lorenz() -> BuiltinSystem {
    builtin_system("lorenz63", &Default::default()).unwrap()
}

/// Criterion 1: analytic limit-cycle response. Ground truth is exact
/// (attractor average equals the parameter), exercising the center
/// machinery with no unstable directions.
#[test]
fn criterion_1_hopf_analytic_response() {
    let start = Instant::now();
    let sys = HopfCycle { mu: 1.0, omega0: 1.0 };
    let settings = RunSettings {
        dt: 0.01,
        n_steps: 200_000,
        discard: 20_000,
        warmup_steps: 2_000,
        window_w: 5.0,
        seed: 1,
        ..Default::default()
    };
    let report = linear_response(&sys, &[2.0, 0.0], &settings).unwrap();
    let elapsed = start.elapsed();
    println!(
        "criterion 1: total = {:.6} (target 1.00 ± 0.02), sc = {:.6}, uc = {:.2e}, {:.1?}",
        report.total, report.sc, report.uc, elapsed
    );
    assert!(
        (report.total - 1.0).abs() <= 0.02,
        "total {} outside 1.00 ± 0.02",
        report.total
    );
    assert!(elapsed.as_secs() <= 30, "runtime {elapsed:?} exceeds 30 s");
}

/// Criterion 2: Lorenz '63 response against the finite-difference oracle,
/// within the combined confidence interval. On disagreement the assert
/// message carries the full diagnostics (the attractor is not uniformly
/// hyperbolic, so an explained discrepancy must be visible, not hidden).
#[test]
fn criterion_2_lorenz_response_vs_oracle() {
    let start = Instant::now();
    let sys = lorenz();
    let settings = RunSettings {
        dt: 0.002,
        n_steps: 1_000_000,
        discard: 100_000,
        warmup_steps: 10_000,
        window_w: 5.0,
        seed: 7,
        ..Default::default()
    };
    let data = run_response_pipeline(&sys, &[1.0, 1.0, 1.0], &settings).unwrap();
    let mut report = data.report.clone();
    let osettings = OracleSettings {
        gamma_step: 1.0,
        n_steps: 1_000_000,
        dt: 0.002,
        discard: 100_000,
        seeds: vec![11, 12, 13, 14],
        n_batches: 20,
    };
    let oracle = finite_difference_oracle(&sys, &[1.0, 1.0, 1.0], &osettings).unwrap();
    attach_oracle(&mut report, oracle);
    let oracle = report.oracle.as_ref().unwrap();
    let elapsed = start.elapsed();
    println!(
        "criterion 2: total = {:.4} ± {:.4}, oracle = {:.4} ± {:.4}, agrees = {:?}, {:.1?}",
        report.total, report.total_stderr, oracle.estimate, oracle.ci, oracle.agrees, elapsed
    );
    assert!(
        oracle.agrees == Some(true),
        "response {} ± {} vs oracle {} ± {} disagree; diagnostics: {:?}",
        report.total,
        report.total_stderr,
        oracle.estimate,
        oracle.ci,
        report.diagnostics
    );
    assert!(elapsed.as_secs() <= 600, "runtime {elapsed:?} exceeds 10 min");
}

/// Criterion 3: top Lyapunov exponent from two independent Benettin runs,
/// and the backward (adjoint) rate match.
#[test]
fn criterion_3_lyapunov_crosscheck() {
    let sys = lorenz();
    let mut lambdas = Vec::new();
    let mut adjoints = Vec::new();
    for (seed, cadence) in [(11u64, 10usize), (97, 7)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ic: Vec<f64> = [1.0, 1.0, 1.0].iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        let orbit = evolve_orbit(&sys, &ic, 400_000, 0.005, 20_000).unwrap();
        let fs = FrameSettings { renorm_every: cadence, warmup_steps: 4_000, seed };
        let frames = FrameSeries::compute(&sys, &orbit, &fs).unwrap();
        lambdas.push(frames.lambda_tangent()[0]);
        adjoints.push(frames.lambda_adjoint()[0]);
    }
    println!(
        "criterion 3: lambda1 = {:.4} / {:.4} (target 0.906 ± 0.02), adjoint = {:.4} / {:.4}",
        lambdas[0], lambdas[1], adjoints[0], adjoints[1]
    );
    for l in &lambdas {
        assert!((l - 0.906).abs() <= 0.02, "lambda1 {l} outside 0.906 ± 0.02");
    }
    assert!((lambdas[0] - lambdas[1]).abs() <= 0.02, "independent runs disagree");
    for (l, a) in lambdas.iter().zip(&adjoints) {
        assert!((l - a).abs() <= 0.03, "adjoint rate {a} vs tangent {l}");
    }
}

/// Criterion 4: flow-map Hessian quadrature against h-extrapolated finite
/// differences, 20 probes per system.
#[test]
fn criterion_4_flow_hessian_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut medians = Vec::new();

    let sys = lorenz();
    let orbit = evolve_orbit(&sys, &[1.0, 1.0, 1.0], 30_000, 0.005, 20_000).unwrap();
    let mut errs = Vec::new();
    for _ in 0..20 {
        let k = rng.gen_range(0..orbit.len() - 200);
        let xv: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ev: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        errs.push(hessian_pushforward_check(&sys, &orbit, k, &xv, &ev, 0.5).rel_err);
    }
    medians.push(stats::median(&errs));

    let sys = HopfCycle::default();
    let orbit = evolve_orbit(&sys, &[2.0, 0.0], 20_000, 0.01, 5_000).unwrap();
    let mut errs = Vec::new();
    for _ in 0..20 {
        let k = rng.gen_range(0..orbit.len() - 200);
        let xv: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ev: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        errs.push(hessian_pushforward_check(&sys, &orbit, k, &xv, &ev, 1.0).rel_err);
    }
    medians.push(stats::median(&errs));

    let elapsed = start.elapsed();
    println!(
        "criterion 4: median rel err lorenz = {:.2e}, hopf = {:.2e} (target <= 1e-3), {:.1?}",
        medians[0], medians[1], elapsed
    );
    for m in &medians {
        assert!(*m <= 1e-3, "median rel err {m} above 1e-3");
    }
    assert!(elapsed.as_secs() <= 60, "runtime {elapsed:?} exceeds 60 s");
}

/// Criterion 5: adjoint-equation residuals for both source pairs, the flow
/// pairing defect, and second-order improvement under step halving.
#[test]
fn criterion_5_shadowing_residuals() {
    let sys = lorenz();
    let mut med_by_dt = Vec::new();
    for (dt, n) in [(0.01, 200_000usize), (0.005, 400_000)] {
        let settings = RunSettings {
            dt,
            n_steps: n,
            discard: 20_000,
            warmup_steps: (20.0 / dt) as usize,
            window_w: 5.0,
            seed: 3,
            ..Default::default()
        };
        let data = run_response_pipeline(&sys, &[1.0, 1.0, 1.0], &settings).unwrap();
        println!(
            "criterion 5 (dt={dt}): residual medians phi = {:.2e}, omega = {:.2e}; \
             pairing ok = {:.4} / {:.4}",
            data.residual_phi.median_rel,
            data.residual_omega.median_rel,
            data.residual_phi.flow_pairing_ok,
            data.residual_omega.flow_pairing_ok
        );
        assert!(data.residual_phi.median_rel <= 5e-2, "observable-pair residual");
        assert!(data.residual_omega.median_rel <= 5e-2, "divergence-pair residual");
        assert!(data.residual_phi.flow_pairing_ok >= 0.99, "nu F = -psi defect fraction");
        assert!(data.residual_omega.flow_pairing_ok >= 0.99, "nu F = -psi defect fraction");
        med_by_dt.push(data.residual_phi.median_rel.max(data.residual_omega.median_rel));
    }
    let ratio = med_by_dt[0] / med_by_dt[1];
    println!("criterion 5: halving dt reduced the worst median by {ratio:.2}x (need >= 3x)");
    assert!(ratio >= 3.0, "h-refinement factor {ratio} below 3");
}

/// Criterion 6: the algebraic identity suite at its stated tolerances, via
/// the named validation checks on a Lorenz run.
#[test]
fn criterion_6_algebraic_identities() {
    let sys = lorenz();
    let settings = RunSettings {
        dt: 0.005,
        n_steps: 240_000,
        discard: 24_000,
        warmup_steps: 4_000,
        window_w: 5.0,
        seed: 3,
        ..Default::default()
    };
    let report = run_validation(&sys, &[1.0, 1.0, 1.0], &settings).unwrap();
    let required: &[(&str, f64)] = &[
        ("dual_basis_pairing", 1e-8),
        ("cv_decomposition", 1e-9),
        ("appendix_identity", 1e-10),
        ("perturbation_linearity", 1e-8),
        ("observable_shift_invariance", 1e-10),
        ("normalization_invariance", 1e-9),
    ];
    for (name, tol) in required {
        let check = report
            .checks
            .iter()
            .find(|c| c.name == *name)
            .unwrap_or_else(|| panic!("missing check {name}"));
        println!(
            "criterion 6: {} = {:.2e} (tolerance {:.0e}) -> {}",
            check.name,
            check.value,
            tol,
            if check.passed { "pass" } else { "FAIL" }
        );
        assert_eq!(check.threshold, *tol, "threshold drifted for {name}");
        assert!(check.passed, "{name}: {} > {}", check.value, check.threshold);
    }
}

/// Criterion 7: statistical invariants at the acceptance scale. The window
/// plateau at the default half-width W0 = 5 is asserted exactly as stated;
/// on this attractor the lag correlation carries a slowly-decaying
/// oscillation past 10 time units, so the doubling defect at W0 = 5 is a
/// real unconverged tail (the plateau is reached from W ≈ 15, which the
/// test also verifies and prints).
#[test]
fn criterion_7_statistical_invariants() {
    let sys = lorenz();
    let settings = RunSettings {
        dt: 0.002,
        n_steps: 1_000_000,
        discard: 100_000,
        warmup_steps: 10_000,
        window_w: 5.0,
        seed: 7,
        ..Default::default()
    };
    let data = run_response_pipeline(&sys, &[1.0, 1.0, 1.0], &settings).unwrap();
    let dg = &data.report.diagnostics;
    println!(
        "criterion 7: F(eta) mean = {:.2e} (3 se = {:.2e}); D mean = {:.2e} (3 se = {:.2e})",
        dg.feta_mean,
        3.0 * dg.feta_stderr,
        dg.d_mean,
        3.0 * dg.d_stderr
    );
    assert!(dg.feta_mean.abs() <= 3.0 * dg.feta_stderr, "F(eta) mean not within 3 sigma of 0");
    assert!(dg.d_mean.abs() <= 3.0 * dg.d_stderr, "D mean not within 3 sigma of 0");

    let phic: Vec<f64> = data.phi.iter().map(|p| p - data.rho_phi).collect();
    let plateau = |w_base: f64| {
        let a = unstable_contribution(
            &sys, &data.orbit, &data.div, &data.shadow_omega, &phic, w_base, 20,
        )
        .unwrap();
        let b = unstable_contribution(
            &sys, &data.orbit, &data.div, &data.shadow_omega, &phic, 2.0 * w_base, 20,
        )
        .unwrap();
        let lo = a.avg_range.start.max(b.avg_range.start);
        let hi = a.avg_range.end.min(b.avg_range.end);
        let diff: Vec<f64> =
            (lo..hi).map(|k| (b.phi_window[k] - a.phi_window[k]) * a.d[k]).collect();
        let (dm, ds) = stats::batch_means(&diff, 20);
        (a.uc, dm.abs(), (2.0 * ds).max(0.05 * a.uc.abs()))
    };
    let (uc15, defect15, tol15) = plateau(15.0);
    println!(
        "criterion 7: converged-window reference: uc(15) = {uc15:+.4}, \
         |uc(30) - uc(15)| = {defect15:.4} <= {tol15:.4} -> {}",
        if defect15 <= tol15 { "pass" } else { "FAIL" }
    );
    assert!(defect15 <= tol15, "plateau fails even at W0 = 15");

    let (uc5, defect5, tol5) = plateau(5.0);
    println!(
        "criterion 7: default window W0 = 5: uc(5) = {uc5:+.4}, \
         |uc(10) - uc(5)| = {defect5:.4} <= {tol5:.4} -> {}",
        if defect5 <= tol5 { "pass" } else { "FAIL" }
    );
    assert!(
        defect5 <= tol5,
        "W-plateau at the default W0 = 5 fails: |uc(10) - uc(5)| = {defect5:.4} > {tol5:.4}. \
         This is a real unconverged window tail, not noise: it is seed-stable (~0.10-0.15 \
         across seeds, 3-4 sigma) and traces to the slowly-decaying oscillatory lag \
         correlation of this attractor, which violates the exponential-mixing hypothesis \
         behind the window formula. The plateau does hold from W ≈ 15 (verified above), \
         where the total also matches the oracle."
    );
}

/// Criterion 8: the truncated-ensemble comparator explodes at the
/// gradient-explosion rate (~ twice the top exponent) while the orbit
/// method's error shrinks with orbit length.
#[test]
fn criterion_8_comparator_contrast() {
    let sys = lorenz();
    let csettings = ComparatorSettings {
        orbit_count: 1_500,
        horizon: 8.0,
        dt: 0.01,
        sample_every: 25,
        discard: 1_000,
        seed: 5,
    };
    let curve = ensemble_comparator(&sys, &[1.0, 1.0, 1.0], &csettings).unwrap();
    let slope = curve.variance_growth_slope(2.0);
    println!("criterion 8: ln-variance slope = {slope:.3} (target 2*lambda1 = 1.81 ± 0.4)");
    assert!((slope - 1.81).abs() <= 0.4, "variance growth slope {slope} off 1.81 ± 0.4");

    let mut stderrs = Vec::new();
    for n in [150_000usize, 300_000] {
        let settings = RunSettings {
            dt: 0.005,
            n_steps: n,
            discard: 20_000,
            warmup_steps: 4_000,
            window_w: 5.0,
            seed: 9,
            ..Default::default()
        };
        let report = linear_response(&sys, &[1.0, 1.0, 1.0], &settings).unwrap();
        stderrs.push(report.total_stderr);
    }
    println!(
        "criterion 8: orbit-method stderr {:.4} -> {:.4} when the orbit doubles",
        stderrs[0], stderrs[1]
    );
    assert!(
        stderrs[1] < stderrs[0],
        "stderr did not shrink with orbit length: {stderrs:?}"
    );
}
