//! Assembly of the linear response: shadowing contribution, unstable
//! contribution, the finite-difference oracle, and the truncated-ensemble
//! comparator.

// backs f64 math in no_std builds; shadowed by inherent methods under test
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynsys::{
    evolve_orbit, rk4_forced_tangent, rk4_into, FlowSystem, OrbitSegment, RkBuf,
};
use crate::equivdiv::DivergenceSeries;
use crate::frames::{validate_unstable_dim, FrameSeries, FrameSettings};
use crate::linalg::{dot, Mat};
use crate::shadow::{residual_check, shadow_covector, ResidualStats, ShadowSeries, ShadowSettings};
use crate::stats::{self, CompensatedSum};
use crate::{Error, Result};

/// Numerical settings of one response run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub dt: f64,
    pub n_steps: usize,
    /// Warmup steps dropped before recording.
    pub discard: usize,
    /// QR / projection cadence.
    pub renorm_every: usize,
    /// Frame convergence trim at both orbit ends.
    pub warmup_steps: usize,
    /// Shadowing forget window in time units; `None` derives
    /// `20 / max(lambda_1, 0.5)` from the measured top rate.
    pub forget_window: Option<f64>,
    /// Half-width of the observable correlation window, time units.
    pub window_w: f64,
    pub seed: u64,
    /// Center the windowed observable by its empirical mean (the default;
    /// the uncentered mode exists for the mean-zero invariant check).
    pub centered_phi: bool,
    pub n_batches: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            dt: 0.01,
            n_steps: 200_000,
            discard: 20_000,
            renorm_every: 10,
            warmup_steps: 2000,
            forget_window: None,
            window_w: 5.0,
            seed: 0,
            centered_phi: true,
            n_batches: 20,
        }
    }
}

/// Run diagnostics carried in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub lambda_tangent: Vec<f64>,
    pub lambda_adjoint: Vec<f64>,
    /// Forget window actually used (time units).
    pub forget_window: f64,
    pub warmup_steps: usize,
    pub valid_lo: usize,
    pub valid_hi: usize,
    pub cond_warnings: usize,
    pub min_speed: f64,
    pub residual_median_phi: f64,
    pub residual_median_omega: f64,
    pub flow_pairing_ok_phi: f64,
    pub flow_pairing_ok_omega: f64,
    pub projection_mass_phi: f64,
    pub projection_mass_omega: f64,
    pub feta_mean: f64,
    pub feta_stderr: f64,
    pub d_mean: f64,
    pub d_stderr: f64,
}

/// Finite-difference ground-truth estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    /// Two-sigma half width combining seed spread and per-run averaging
    /// error.
    pub ci: f64,
    pub gamma_step: f64,
    pub per_seed: Vec<f64>,
    /// Set when compared against a response total.
    pub agrees: Option<bool>,
}

/// The assembled linear response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseReport {
    pub sc: f64,
    pub sc_stderr: f64,
    pub uc: f64,
    pub uc_stderr: f64,
    /// `sc + uc`.
    pub total: f64,
    /// Quadrature combination of the two standard errors.
    pub total_stderr: f64,
    pub rho_phi: f64,
    pub window_w: f64,
    pub diagnostics: Diagnostics,
    pub oracle: Option<OracleEstimate>,
}

pub(crate) fn jitter_ic(x0: &[f64], rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    x0.iter().map(|v| v + scale * (1.0 + v.abs()) * rng.gen_range(-1.0..1.0)).collect()
}

/// Time average of the shadowing covector paired with the perturbation over
/// the valid range. Returns `(sc, stderr, nu_x)` with the integrand series
/// over the whole orbit.
pub fn shadowing_contribution(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    shadow_phi: &ShadowSeries,
    n_batches: usize,
) -> Result<(f64, f64, Vec<f64>)> {
    let n = orbit.len();
    let m = sys.dim();
    let mut xp = vec![0.0; m];
    let mut nu_x = Vec::with_capacity(n);
    for k in 0..n {
        sys.perturbation_field(orbit.state(k), &mut xp);
        nu_x.push(dot(shadow_phi.nu.row(k), &xp));
    }
    let valid = shadow_phi.valid.clone();
    if valid.len() < 10 * n_batches {
        return Err(Error::InsufficientOrbit {
            needed: 10 * n_batches,
            available: valid.len(),
        });
    }
    let (sc, se) = stats::batch_means(&nu_x[valid], n_batches);
    Ok((sc, se, nu_x))
}

/// Unstable contribution pieces.
#[derive(Debug, Clone)]
pub struct UnstableResult {
    pub uc: f64,
    pub stderr: f64,
    /// Transfer-operator perturbation density (negated), full orbit length.
    pub d: Vec<f64>,
    /// The shadowing part of `d` alone.
    pub nu_omega_x: Vec<f64>,
    /// Windowed (optionally centered) observable; NaN where the window does
    /// not fit.
    pub phi_window: Vec<f64>,
    /// Indices actually averaged.
    pub avg_range: core::ops::Range<usize>,
}

/// Correlate the windowed observable against the transfer-operator
/// perturbation sampled by the shadowing covector of the divergence pair.
pub fn unstable_contribution(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    div: &DivergenceSeries,
    shadow_omega: &ShadowSeries,
    phi_centered: &[f64],
    w_time: f64,
    n_batches: usize,
) -> Result<UnstableResult> {
    let n = orbit.len();
    let m = sys.dim();
    let dt = orbit.dt();
    if !(w_time >= dt) {
        return Err(Error::InvalidParameter {
            name: "W".into(),
            reason: "window must be at least one step".into(),
        });
    }
    let w_steps = (w_time / dt + 0.5) as usize;

    let mut xp = vec![0.0; m];
    let mut nu_omega_x = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for k in 0..n {
        sys.perturbation_field(orbit.state(k), &mut xp);
        let nx = dot(shadow_omega.nu.row(k), &xp);
        nu_omega_x.push(nx);
        d.push(nx + div.divv_x[k] + div.f_eta[k]);
    }

    // sliding trapezoidal window by compensated prefix sums
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = CompensatedSum::new();
    prefix.push(0.0);
    for &c in phi_centered {
        acc.add(c);
        prefix.push(acc.value());
    }
    let mut phi_window = vec![f64::NAN; n];
    if n > 2 * w_steps {
        for k in w_steps..n - w_steps {
            let full = prefix[k + w_steps + 1] - prefix[k - w_steps];
            let trap = full - 0.5 * phi_centered[k - w_steps] - 0.5 * phi_centered[k + w_steps];
            phi_window[k] = dt * trap;
        }
    }

    let lo = shadow_omega.valid.start.max(w_steps);
    let hi = shadow_omega.valid.end.min(n.saturating_sub(w_steps));
    if lo >= hi || hi - lo < 10 * n_batches {
        return Err(Error::InsufficientOrbit {
            needed: 10 * n_batches + 2 * w_steps,
            available: hi.saturating_sub(lo),
        });
    }
    let products: Vec<f64> = (lo..hi).map(|k| phi_window[k] * d[k]).collect();
    let (mean_prod, se) = stats::batch_means(&products, n_batches);
    Ok(UnstableResult {
        uc: -mean_prod,
        stderr: se,
        d,
        nu_omega_x,
        phi_window,
        avg_range: lo..hi,
    })
}

/// Finite-difference oracle settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSettings {
    pub gamma_step: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub discard: usize,
    pub seeds: Vec<u64>,
    pub n_batches: usize,
}

/// One seed's central-difference run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReplica {
    pub seed: u64,
    pub estimate: f64,
    /// Variance propagated from the two Birkhoff-average standard errors.
    pub variance: f64,
    pub plus_avg: f64,
    pub minus_avg: f64,
}

fn observable_average(
    sys: &dyn FlowSystem,
    x0: &[f64],
    gamma: f64,
    n_steps: usize,
    dt: f64,
    discard: usize,
    n_batches: usize,
) -> Result<(f64, f64)> {
    let m = sys.dim();
    let mut buf = RkBuf::new(m);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; m];
    for step in 0..discard {
        rk4_into(|s, o| sys.parametrized_field(s, gamma, o), &x, dt, &mut buf, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { step });
        }
        core::mem::swap(&mut x, &mut next);
    }
    let mut phi = Vec::with_capacity(n_steps + 1);
    phi.push(sys.observable(&x));
    for step in 0..n_steps {
        rk4_into(|s, o| sys.parametrized_field(s, gamma, o), &x, dt, &mut buf, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { step: discard + step });
        }
        core::mem::swap(&mut x, &mut next);
        phi.push(sys.observable(&x));
    }
    Ok(stats::batch_means(&phi, n_batches))
}

/// Run one oracle replica: a common seeded initial condition integrated at
/// `±gamma`, each with its own warmup, observables averaged with batch-means
/// errors.
pub fn fd_oracle_replica(
    sys: &dyn FlowSystem,
    x0: &[f64],
    seed: u64,
    settings: &OracleSettings,
) -> Result<FdReplica> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0f0f_5555_aaaa_1111);
    let ic = jitter_ic(x0, &mut rng, 0.05);
    let gamma = settings.gamma_step;
    let (p_avg, p_se) = observable_average(
        sys, &ic, gamma, settings.n_steps, settings.dt, settings.discard, settings.n_batches,
    )?;
    let (m_avg, m_se) = observable_average(
        sys, &ic, -gamma, settings.n_steps, settings.dt, settings.discard, settings.n_batches,
    )?;
    let estimate = (p_avg - m_avg) / (2.0 * gamma);
    let variance = (p_se * p_se + m_se * m_se) / (4.0 * gamma * gamma);
    Ok(FdReplica { seed, estimate, variance, plus_avg: p_avg, minus_avg: m_avg })
}

/// Combine replicas (in seed order) into the oracle estimate. The interval
/// half-width is two combined sigmas: seed spread plus the mean propagated
/// averaging variance.
pub fn combine_fd_replicas(replicas: &[FdReplica], gamma_step: f64) -> OracleEstimate {
    let per_seed: Vec<f64> = replicas.iter().map(|r| r.estimate).collect();
    let (mean, se_spread) = stats::mean_stderr(&per_seed);
    let var_birkhoff =
        replicas.iter().map(|r| r.variance).sum::<f64>() / (replicas.len() as f64).powi(2);
    let spread2 = if se_spread.is_nan() { 0.0 } else { se_spread * se_spread };
    let ci = 2.0 * (spread2 + var_birkhoff).sqrt();
    OracleEstimate { estimate: mean, ci, gamma_step, per_seed, agrees: None }
}

/// Central finite difference of the long-run observable average under the
/// parametrized field, replicated over seeds.
pub fn finite_difference_oracle(
    sys: &dyn FlowSystem,
    x0: &[f64],
    settings: &OracleSettings,
) -> Result<OracleEstimate> {
    if !(settings.gamma_step > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma_step".into(),
            reason: "must be > 0".into(),
        });
    }
    if settings.seeds.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "seeds".into(),
            reason: "oracle needs at least 2 seeds".into(),
        });
    }
    let mut replicas = Vec::with_capacity(settings.seeds.len());
    for &seed in &settings.seeds {
        replicas.push(fd_oracle_replica(sys, x0, seed, settings)?);
    }
    Ok(combine_fd_replicas(&replicas, settings.gamma_step))
}

/// Ensemble comparator settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparatorSettings {
    pub orbit_count: usize,
    /// Largest horizon, time units.
    pub horizon: f64,
    pub dt: f64,
    /// Horizon sampling stride in steps.
    pub sample_every: usize,
    /// On-attractor warmup per initial condition.
    pub discard: usize,
    pub seed: u64,
}

/// Partial sums over a contiguous block of initial conditions; merged in
/// index order so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct ComparatorPartial {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

/// Monte-Carlo pathwise response truncated at growing horizons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparatorCurve {
    pub horizons: Vec<f64>,
    pub estimate: Vec<f64>,
    pub variance: Vec<f64>,
    pub orbit_count: usize,
}

/// Accumulate `dΦ(x_T)·v_T` (inhomogeneous tangent with the perturbation as
/// forcing) for initial conditions `ic_lo..ic_hi`, sampled at every
/// `sample_every` steps.
pub fn comparator_partial(
    sys: &dyn FlowSystem,
    x0: &[f64],
    settings: &ComparatorSettings,
    ic_lo: usize,
    ic_hi: usize,
) -> Result<ComparatorPartial> {
    let m = sys.dim();
    let steps = (settings.horizon / settings.dt + 0.5) as usize;
    let n_samples = steps / settings.sample_every;
    let mut sum = vec![0.0; n_samples];
    let mut sum_sq = vec![0.0; n_samples];
    let mut buf = RkBuf::new(m);
    let mut grad = vec![0.0; m];
    for ic in ic_lo..ic_hi {
        // splitmix-style mixing so different base seeds give disjoint
        // ensembles
        let mut rng = ChaCha8Rng::seed_from_u64(
            (settings.seed ^ 0x243f_6a88_85a3_08d3)
                .wrapping_add((ic as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        );
        let mut x = jitter_ic(x0, &mut rng, 0.1);
        let mut next = vec![0.0; m];
        for step in 0..settings.discard {
            rk4_into(|s, o| sys.base_field(s, o), &x, settings.dt, &mut buf, &mut next);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::IntegrationDiverged { step });
            }
            core::mem::swap(&mut x, &mut next);
        }
        let mut v = vec![0.0; m];
        for s in 0..n_samples {
            for _ in 0..settings.sample_every {
                rk4_forced_tangent(sys, &mut x, &mut v, settings.dt);
            }
            if !x.iter().chain(v.iter()).all(|q| q.is_finite()) {
                return Err(Error::IntegrationDiverged { step: (s + 1) * settings.sample_every });
            }
            sys.observable_gradient(&x, &mut grad);
            let g = dot(&grad, &v);
            sum[s] += g;
            sum_sq[s] += g * g;
        }
    }
    Ok(ComparatorPartial { count: ic_hi - ic_lo, sum, sum_sq })
}

impl ComparatorCurve {
    pub fn from_partials(settings: &ComparatorSettings, partials: &[ComparatorPartial]) -> Self {
        let n_samples = partials.first().map_or(0, |p| p.sum.len());
        let mut count = 0usize;
        let mut sum = vec![0.0; n_samples];
        let mut sum_sq = vec![0.0; n_samples];
        for p in partials {
            count += p.count;
            for i in 0..n_samples {
                sum[i] += p.sum[i];
                sum_sq[i] += p.sum_sq[i];
            }
        }
        let nf = count as f64;
        let mut horizons = Vec::with_capacity(n_samples);
        let mut estimate = Vec::with_capacity(n_samples);
        let mut variance = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            horizons.push((i + 1) as f64 * settings.sample_every as f64 * settings.dt);
            let mean = sum[i] / nf;
            estimate.push(mean);
            variance.push((sum_sq[i] / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0));
        }
        ComparatorCurve { horizons, estimate, variance, orbit_count: count }
    }

    /// Slope of `ln(variance)` against the horizon for horizons past
    /// `t_min` (gradient-explosion rate; ~ twice the top growth rate on a
    /// chaotic attractor).
    pub fn variance_growth_slope(&self, t_min: f64) -> f64 {
        let mut ts = Vec::new();
        let mut lv = Vec::new();
        for (t, v) in self.horizons.iter().zip(&self.variance) {
            if *t >= t_min && *v > 0.0 {
                ts.push(*t);
                lv.push(v.ln());
            }
        }
        if ts.len() < 2 {
            return f64::NAN;
        }
        stats::line_fit(&ts, &lv).0
    }
}

/// Monte-Carlo the truncated pathwise response over seeded initial
/// conditions.
pub fn ensemble_comparator(
    sys: &dyn FlowSystem,
    x0: &[f64],
    settings: &ComparatorSettings,
) -> Result<ComparatorCurve> {
    let partial = comparator_partial(sys, x0, settings, 0, settings.orbit_count)?;
    Ok(ComparatorCurve::from_partials(settings, &[partial]))
}

/// Everything the pipeline computed, for series dumps and validation.
pub struct PipelineData {
    pub orbit: OrbitSegment,
    pub frames: FrameSeries,
    pub div: DivergenceSeries,
    pub shadow_phi: ShadowSeries,
    pub shadow_omega: ShadowSeries,
    pub phi: Vec<f64>,
    pub rho_phi: f64,
    /// SC integrand `nu_phi · X` per step.
    pub nu_x: Vec<f64>,
    pub uc_parts: UnstableResult,
    pub residual_phi: ResidualStats,
    pub residual_omega: ResidualStats,
    pub report: ResponseReport,
}

/// Orchestrate one full response run: orbit, frames, divergence samples, two
/// shadowing sweeps, contributions and diagnostics.
pub fn run_response_pipeline(
    sys: &dyn FlowSystem,
    x0: &[f64],
    settings: &RunSettings,
) -> Result<PipelineData> {
    let n_total = settings.n_steps + 1;
    let needed = 2 * settings.warmup_steps + 20 * settings.n_batches;
    if n_total < needed {
        return Err(Error::InsufficientOrbit { needed, available: n_total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let ic = jitter_ic(x0, &mut rng, 0.01);
    let orbit = evolve_orbit(sys, &ic, settings.n_steps, settings.dt, settings.discard)?;
    let fsettings = FrameSettings {
        renorm_every: settings.renorm_every,
        warmup_steps: settings.warmup_steps,
        seed: settings.seed,
    };
    let frames = FrameSeries::compute(sys, &orbit, &fsettings)?;
    validate_unstable_dim(&frames, 0.05)?;

    let forget_window =
        settings.forget_window.unwrap_or_else(|| 20.0 / frames.lambda_max().max(0.5));
    let forget_steps = (forget_window / settings.dt).ceil() as usize;
    let ssettings = ShadowSettings {
        renorm_every: settings.renorm_every,
        forget_steps,
        compat_tol: 0.05,
    };

    let div = DivergenceSeries::compute(sys, &frames);
    let shadow_omega = shadow_covector(sys, &orbit, &frames, &div.omega, &div.psi, &ssettings)?;

    let n = orbit.len();
    let m = sys.dim();
    let mut phi = Vec::with_capacity(n);
    let mut dphi = Mat::zeros(n, m);
    for k in 0..n {
        phi.push(sys.observable(orbit.state(k)));
        sys.observable_gradient(orbit.state(k), dphi.row_mut(k));
    }
    let conv = frames.converged_range();
    let rho_phi = stats::mean(&phi[conv.clone()]);
    let psi_phi: Vec<f64> = phi.iter().map(|p| p - rho_phi).collect();
    let shadow_phi = shadow_covector(sys, &orbit, &frames, &dphi, &psi_phi, &ssettings)?;

    let (sc, sc_stderr, nu_x) =
        shadowing_contribution(sys, &orbit, &shadow_phi, settings.n_batches)?;
    let phi_for_window: Vec<f64> =
        if settings.centered_phi { psi_phi.clone() } else { phi.clone() };
    let uc_parts = unstable_contribution(
        sys,
        &orbit,
        &div,
        &shadow_omega,
        &phi_for_window,
        settings.window_w,
        settings.n_batches,
    )?;

    let residual_phi = residual_check(sys, &orbit, &frames, &shadow_phi, &dphi, &psi_phi);
    let residual_omega = residual_check(sys, &orbit, &frames, &shadow_omega, &div.omega, &div.psi);

    let valid = shadow_omega.valid.start.max(shadow_phi.valid.start)
        ..shadow_omega.valid.end.min(shadow_phi.valid.end);
    let (feta_mean, feta_stderr) =
        stats::batch_means(&div.f_eta[valid.clone()], settings.n_batches);
    let (d_mean, d_stderr) =
        stats::batch_means(&uc_parts.d[valid.clone()], settings.n_batches);

    let uc = uc_parts.uc;
    let uc_stderr = uc_parts.stderr;
    let report = ResponseReport {
        sc,
        sc_stderr,
        uc,
        uc_stderr,
        total: sc + uc,
        total_stderr: (sc_stderr * sc_stderr + uc_stderr * uc_stderr).sqrt(),
        rho_phi,
        window_w: settings.window_w,
        diagnostics: Diagnostics {
            lambda_tangent: frames.lambda_tangent(),
            lambda_adjoint: frames.lambda_adjoint(),
            forget_window,
            warmup_steps: settings.warmup_steps,
            valid_lo: valid.start,
            valid_hi: valid.end,
            cond_warnings: frames.cond_warnings,
            min_speed: frames.min_speed,
            residual_median_phi: residual_phi.median_rel,
            residual_median_omega: residual_omega.median_rel,
            flow_pairing_ok_phi: residual_phi.flow_pairing_ok,
            flow_pairing_ok_omega: residual_omega.flow_pairing_ok,
            projection_mass_phi: shadow_phi.projection_mass_a.max(shadow_phi.projection_mass_b),
            projection_mass_omega: shadow_omega
                .projection_mass_a
                .max(shadow_omega.projection_mass_b),
            feta_mean,
            feta_stderr,
            d_mean,
            d_stderr,
        },
        oracle: None,
    };
    Ok(PipelineData {
        orbit,
        frames,
        div,
        shadow_phi,
        shadow_omega,
        phi,
        rho_phi,
        nu_x,
        uc_parts,
        residual_phi,
        residual_omega,
        report,
    })
}

/// Convenience wrapper returning just the report.
pub fn linear_response(
    sys: &dyn FlowSystem,
    x0: &[f64],
    settings: &RunSettings,
) -> Result<ResponseReport> {
    Ok(run_response_pipeline(sys, x0, settings)?.report)
}

/// Attach an oracle comparison to a report: agreement means the difference
/// is inside the quadrature combination of the oracle interval and two
/// response sigmas.
pub fn attach_oracle(report: &mut ResponseReport, mut oracle: OracleEstimate) {
    let combined = (oracle.ci * oracle.ci + 4.0 * report.total_stderr * report.total_stderr)
        .sqrt();
    oracle.agrees = Some((report.total - oracle.estimate).abs() <= combined);
    report.oracle = Some(oracle);
}
