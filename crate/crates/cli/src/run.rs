//! Mode orchestration: build the system, run the requested stage, write the
//! report (and series when asked). Oracle replicas and comparator blocks run
//! on a thread pool capped by `EQUIDIV_THREADS`; partial results merge in a
//! scheduling-independent order.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;

use equidiv::dynsys::{evolve_orbit, FlowSystem};
use equidiv::frames::{pairing_defects, validate_unstable_dim, FrameSeries, FrameSettings};
use equidiv::response::{
    attach_oracle, combine_fd_replicas, comparator_partial, fd_oracle_replica, run_response_pipeline,
    ComparatorCurve, ComparatorPartial, ComparatorSettings, FdReplica, OracleEstimate,
    OracleSettings,
};
use equidiv::validate::run_validation;
use equidiv::Error as CoreError;

use crate::config::{EffectiveConfig, Mode};
use crate::report::{
    write_orbit_csv, write_report, write_series_csv, ErrorInfo, ReportEnvelope, SeriesRow,
};

/// Exit codes: 0 ok, 2 config, 3 integration, 4 frame degeneracy, 5 shadow
/// instability, 6 validation failure.
pub fn exit_code_for(err: &CoreError) -> i32 {
    match err {
        CoreError::UnknownSystem { .. }
        | CoreError::InvalidParameter { .. }
        | CoreError::InsufficientOrbit { .. } => 2,
        CoreError::IntegrationDiverged { .. } => 3,
        CoreError::DegenerateFrame { .. }
        | CoreError::Tangency { .. }
        | CoreError::UnstableDimMismatch { .. } => 4,
        CoreError::ShadowInstability { .. } | CoreError::RejectedPair { .. } => 5,
    }
}

fn error_info(err: &CoreError) -> ErrorInfo {
    let kind = match err {
        CoreError::IntegrationDiverged { .. } => "integration-diverged",
        CoreError::DegenerateFrame { .. } => "degenerate-frame",
        CoreError::Tangency { .. } => "tangency",
        CoreError::UnstableDimMismatch { .. } => "unstable-dim-mismatch",
        CoreError::RejectedPair { .. } => "rejected-pair",
        CoreError::ShadowInstability { .. } => "shadow-instability",
        CoreError::InsufficientOrbit { .. } => "insufficient-orbit",
        CoreError::UnknownSystem { .. } => "unknown-system",
        CoreError::InvalidParameter { .. } => "invalid-parameter",
    };
    ErrorInfo { kind: kind.into(), message: err.to_string(), exit_code: exit_code_for(err) }
}

fn thread_cap() -> usize {
    std::env::var("EQUIDIV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run oracle replicas across threads; results combine in seed order.
fn parallel_oracle(
    sys: &(dyn FlowSystem + Sync),
    x0: &[f64],
    settings: &OracleSettings,
) -> Result<OracleEstimate, CoreError> {
    let n = settings.seeds.len();
    let threads = thread_cap().min(n).max(1);
    let slots: Vec<Mutex<Option<Result<FdReplica, CoreError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = fd_oracle_replica(sys, x0, settings.seeds[i], settings);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    let mut replicas = Vec::with_capacity(n);
    for slot in slots {
        replicas.push(slot.into_inner().unwrap().expect("replica ran")?);
    }
    Ok(combine_fd_replicas(&replicas, settings.gamma_step))
}

/// Comparator blocks of fixed size, merged in block order (independent of
/// the thread count).
fn parallel_comparator(
    sys: &(dyn FlowSystem + Sync),
    x0: &[f64],
    settings: &ComparatorSettings,
) -> Result<ComparatorCurve, CoreError> {
    const BLOCK: usize = 64;
    let n_blocks = settings.orbit_count.div_ceil(BLOCK);
    let threads = thread_cap().min(n_blocks).max(1);
    let slots: Vec<Mutex<Option<Result<ComparatorPartial, CoreError>>>> =
        (0..n_blocks).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let b = next.fetch_add(1, Ordering::Relaxed);
                if b >= n_blocks {
                    break;
                }
                let lo = b * BLOCK;
                let hi = ((b + 1) * BLOCK).min(settings.orbit_count);
                let out = comparator_partial(sys, x0, settings, lo, hi);
                *slots[b].lock().unwrap() = Some(out);
            });
        }
    });
    let mut partials = Vec::with_capacity(n_blocks);
    for slot in slots {
        partials.push(slot.into_inner().unwrap().expect("block ran")?);
    }
    Ok(ComparatorCurve::from_partials(settings, &partials))
}

fn orbit_result(cfg: &EffectiveConfig, csv_dir: Option<&PathBuf>) -> Result<serde_json::Value, CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let orbit = evolve_orbit(&sys, &ic, cfg.n_steps, cfg.dt, cfg.discard)?;
    let mut mins = vec![f64::INFINITY; sys.dim()];
    let mut maxs = vec![f64::NEG_INFINITY; sys.dim()];
    let mut phi_acc = equidiv::stats::CompensatedSum::new();
    for k in 0..orbit.len() {
        let s = orbit.state(k);
        for i in 0..sys.dim() {
            mins[i] = mins[i].min(s[i]);
            maxs[i] = maxs[i].max(s[i]);
        }
        phi_acc.add(sys.observable(s));
    }
    if let Some(dir) = csv_dir {
        write_orbit_csv(dir, &orbit).expect("orbit csv");
    }
    Ok(json!({
        "n_states": orbit.len(),
        "t0": orbit.t0(),
        "duration": orbit.duration(),
        "state_min": mins,
        "state_max": maxs,
        "final_state": orbit.state(orbit.n_steps()),
        "rho_phi": phi_acc.value() / orbit.len() as f64,
    }))
}

fn lyapunov_result(cfg: &EffectiveConfig) -> Result<serde_json::Value, CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let orbit = evolve_orbit(&sys, &ic, cfg.n_steps, cfg.dt, cfg.discard)?;
    let fs = FrameSettings {
        renorm_every: cfg.renorm_every,
        warmup_steps: cfg.warmup_steps,
        seed: cfg.seeds[0],
    };
    let frames = FrameSeries::compute(&sys, &orbit, &fs)?;
    Ok(json!({
        "lambda_tangent": frames.lambda_tangent(),
        "lambda_adjoint": frames.lambda_adjoint(),
        "unstable_dim_consistent": validate_unstable_dim(&frames, 0.05).is_ok(),
    }))
}

fn frames_check_result(cfg: &EffectiveConfig) -> Result<serde_json::Value, CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let orbit = evolve_orbit(&sys, &ic, cfg.n_steps, cfg.dt, cfg.discard)?;
    let fs = FrameSettings {
        renorm_every: cfg.renorm_every,
        warmup_steps: cfg.warmup_steps,
        seed: cfg.seeds[0],
    };
    let frames = FrameSeries::compute(&sys, &orbit, &fs)?;
    let d = pairing_defects(&frames, frames.converged_range());
    let u_ok = validate_unstable_dim(&frames, 0.05);
    Ok(json!({
        "pairing_eps_e": d.eps_e,
        "pairing_epsc_f": d.epsc_f,
        "pairing_eps_f": d.eps_f,
        "pairing_epsc_e": d.epsc_e,
        "cond_warnings": frames.cond_warnings,
        "min_speed": frames.min_speed,
        "lambda_tangent": frames.lambda_tangent(),
        "lambda_adjoint": frames.lambda_adjoint(),
        "unstable_dim_consistent": u_ok.is_ok(),
        "unstable_dim_detail": u_ok.err().map(|e| e.to_string()),
    }))
}

fn response_result(
    cfg: &EffectiveConfig,
    csv_dir: Option<&PathBuf>,
) -> Result<serde_json::Value, CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let data = run_response_pipeline(&sys, &ic, &cfg.run_settings())?;
    let mut report = data.report.clone();
    if cfg.run_oracle {
        let oracle = parallel_oracle(&sys, &ic, &cfg.oracle_settings())?;
        attach_oracle(&mut report, oracle);
    }
    let comparator = if cfg.run_comparator {
        let curve = parallel_comparator(&sys, &ic, &cfg.comparator_settings())?;
        let slope = curve.variance_growth_slope(cfg.horizon * 0.25);
        Some(json!({ "curve": curve, "variance_growth_slope": slope }))
    } else {
        None
    };
    if let Some(dir) = csv_dir {
        let range = data.uc_parts.avg_range.clone();
        let rows = range.clone().map(|k| SeriesRow {
            t: data.orbit.time(k),
            state: data.orbit.state(k),
            divv_x: data.div.divv_x[k],
            psi: data.div.psi[k],
            eta: data.div.eta[k],
            f_eta: data.div.f_eta[k],
            nu_x: data.nu_x[k],
            phi: data.uc_parts.phi_window[k],
            d: data.uc_parts.d[k],
        });
        write_series_csv(dir, sys.dim(), rows).expect("series csv");
    }
    let mut value = serde_json::to_value(&report).expect("serializable report");
    if let Some(c) = comparator {
        value.as_object_mut().unwrap().insert("comparator".into(), c);
    }
    Ok(value)
}

fn oracle_result(cfg: &EffectiveConfig) -> Result<serde_json::Value, CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let oracle = parallel_oracle(&sys, &ic, &cfg.oracle_settings())?;
    Ok(serde_json::to_value(&oracle).expect("serializable oracle"))
}

fn comparator_result(cfg: &EffectiveConfig) -> Result<serde_json::Value, CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let curve = parallel_comparator(&sys, &ic, &cfg.comparator_settings())?;
    let slope = curve.variance_growth_slope(cfg.horizon * 0.25);
    Ok(json!({ "curve": curve, "variance_growth_slope": slope }))
}

fn validate_result(cfg: &EffectiveConfig) -> Result<(serde_json::Value, bool), CoreError> {
    let sys = cfg.build_system().expect("validated config");
    let ic = cfg.default_ic().expect("validated config");
    let report = run_validation(&sys, &ic, &cfg.run_settings())?;
    let all = report.all_passed;
    Ok((serde_json::to_value(&report).expect("serializable validation"), all))
}

/// Execute one mode, write `report.json` (and `series.csv` when enabled)
/// under the output directory, and return the process exit code.
pub fn execute(cfg: EffectiveConfig, out_dir: PathBuf) -> i32 {
    let mode = cfg.mode;
    let csv_dir = if cfg.csv { Some(&out_dir) } else { None };
    let outcome: Result<(serde_json::Value, i32), CoreError> = match mode {
        Mode::Orbit => orbit_result(&cfg, csv_dir).map(|v| (v, 0)),
        Mode::Lyapunov => lyapunov_result(&cfg).map(|v| (v, 0)),
        Mode::FramesCheck => frames_check_result(&cfg).map(|v| (v, 0)),
        Mode::Response => response_result(&cfg, csv_dir).map(|v| (v, 0)),
        Mode::Oracle => oracle_result(&cfg).map(|v| (v, 0)),
        Mode::Comparator => comparator_result(&cfg).map(|v| (v, 0)),
        Mode::Validate => {
            validate_result(&cfg).map(|(v, all)| (v, if all { 0 } else { 6 }))
        }
    };
    match outcome {
        Ok((result, code)) => {
            let envelope = ReportEnvelope::ok(mode, cfg, result);
            if let Err(e) = write_report(&out_dir, &envelope) {
                eprintln!("error: {e:#}");
                return 1;
            }
            if code != 0 {
                eprintln!("validation failed; see {}", out_dir.join("report.json").display());
            }
            code
        }
        Err(err) => {
            let info = error_info(&err);
            let code = info.exit_code;
            eprintln!("error: {err}");
            let envelope = ReportEnvelope::failed(mode, cfg, None, info);
            if let Err(e) = write_report(&out_dir, &envelope) {
                eprintln!("error: {e:#}");
            }
            code
        }
    }
}
