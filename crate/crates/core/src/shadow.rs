//! Adjoint shadowing by split-propagate sweeps along a finite orbit.
//!
//! The shadowing covector for a compatible source pair `(omega, psi)` is
//! assembled from three pieces:
//!
//! * `a` — a backward sweep accumulating the pulled-back stable-dual part of
//!   the source (future integral). Pullback amplifies unstable-dual noise,
//!   so `a` is periodically projected onto the annihilator of the frame span.
//! * `b` — a forward sweep accumulating the pushed-forward unstable-dual
//!   part (past integral), periodically projected onto the dual unstable
//!   span.
//! * the center term `psi * eps_c`.
//!
//! `nu = a - b - psi eps_c`. Both integrals forget their zero initialization
//! exponentially, so a forget window is trimmed from each end of the orbit.

// backs f64 math in no_std builds; shadowed by inherent methods under test
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynsys::{flow_propagator, FlowSystem, OrbitSegment};
use crate::frames::{FrameSeries, FrameSnapshotRef};
use crate::linalg::{self, axpy, dot, norm2, Mat};
use crate::stats;
use crate::{Error, Result};

/// Accumulator norm beyond which the sweep is declared unstable.
const NORM_GUARD: f64 = 1e8;

/// Sweep configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowSettings {
    /// Projection cadence in steps (same role as the frame QR cadence).
    pub renorm_every: usize,
    /// Steps trimmed from both orbit ends where the accumulators still
    /// remember their zero initialization.
    pub forget_steps: usize,
    /// Tolerance on the median relative compatibility defect
    /// `omega(F) - F(psi)` of the source pair.
    pub compat_tol: f64,
}

impl Default for ShadowSettings {
    fn default() -> Self {
        ShadowSettings { renorm_every: 10, forget_steps: 2000, compat_tol: 0.05 }
    }
}

/// A covector split against the frame: dual-unstable, center, and stable
/// remainder parts. The pieces reconstruct the input exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCovector {
    pub w_u: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_s: Vec<f64>,
}

/// Oblique splitting through the dual pairings:
/// `w_u = Σ_i (w e_i) eps^i`, `w_c = (w F) eps_c`, `w_s` the remainder.
pub fn split_covector(w: &[f64], snap: FrameSnapshotRef<'_>) -> SplitCovector {
    let m = w.len();
    let u = snap.e.cols();
    let mut w_u = vec![0.0; m];
    for i in 0..u {
        let c = dot(w, &snap.e.col(i));
        axpy(c, snap.eps.row(i), &mut w_u);
    }
    let cf = dot(w, snap.fvec);
    let mut w_c = vec![0.0; m];
    axpy(cf, snap.eps_c, &mut w_c);
    let w_s: Vec<f64> = (0..m).map(|i| w[i] - w_u[i] - w_c[i]).collect();
    SplitCovector { w_u, w_c, w_s }
}

/// Shadowing covector series with its two accumulators.
#[derive(Debug, Clone)]
pub struct ShadowSeries {
    /// Future-integral accumulator (stable-dual part), one row per step.
    pub a: Mat,
    /// Past-integral accumulator (unstable-dual part).
    pub b: Mat,
    /// Assembled shadowing covector `a - b - psi eps_c`.
    pub nu: Mat,
    /// Index range where both accumulators have forgotten initialization
    /// and the frames are converged.
    pub valid: core::ops::Range<usize>,
    /// Worst per-step relative mass removed by the stabilizing projections
    /// inside the valid range (small means projections are corrections, not
    /// the signal).
    pub projection_mass_a: f64,
    pub projection_mass_b: f64,
}

/// Median/p95 relative compatibility defect `omega(F) - F(psi)` over a range
/// (finite differences for `F(psi)`). The defect is measured against the
/// pointwise magnitudes of both sides floored by the RMS of `|omega||F|`, so
/// a pairing whose two sides are tiny against the covector scale (a
/// near-orthogonal contraction) still counts as compatible.
pub fn compat_defect(
    frames: &FrameSeries,
    omega: &Mat,
    psi: &[f64],
    range: core::ops::Range<usize>,
) -> (f64, f64) {
    let dt = frames.dt();
    let lo = range.start.max(1);
    let hi = range.end.min(frames.len() - 1);
    let mut of = Vec::with_capacity(hi - lo);
    let mut scale2 = 0.0;
    for k in lo..hi {
        let snap = frames.snapshot(k);
        of.push(dot(omega.row(k), snap.fvec));
        let s = norm2(omega.row(k)) * norm2(snap.fvec);
        scale2 += s * s;
    }
    let scale = (scale2 / of.len().max(1) as f64).sqrt();
    let mut rels = Vec::with_capacity(hi - lo);
    for k in lo..hi {
        let fd = (psi[k + 1] - psi[k - 1]) / (2.0 * dt);
        let denom = of[k - lo].abs().max(fd.abs()).max(scale).max(1e-12);
        rels.push((of[k - lo] - fd).abs() / denom);
    }
    (stats::median(&rels), stats::quantile(&rels, 0.95))
}

/// Run both sweeps for one source pair and assemble the shadowing covector.
///
/// `omega` has one covector row per orbit step; `psi` is the paired scalar
/// series. The pair must satisfy the compatibility condition up to
/// `settings.compat_tol` (checked by finite differences over the converged
/// range).
pub fn shadow_covector(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    frames: &FrameSeries,
    omega: &Mat,
    psi: &[f64],
    settings: &ShadowSettings,
) -> Result<ShadowSeries> {
    let n = orbit.len();
    let m = sys.dim();
    let u = sys.unstable_dim();
    assert_eq!(omega.rows(), n);
    assert_eq!(psi.len(), n);
    let dt = orbit.dt();

    let conv = frames.converged_range();
    let (med, _) = compat_defect(frames, omega, psi, conv.clone());
    if !(med <= settings.compat_tol) {
        return Err(Error::RejectedPair { defect: med, tol: settings.compat_tol });
    }

    let lo = conv.start.max(settings.forget_steps);
    let hi = conv.end.min(n.saturating_sub(settings.forget_steps));
    if lo + 2 >= hi {
        return Err(Error::InsufficientOrbit { needed: 2 * settings.forget_steps + 2, available: n });
    }
    let valid = lo..hi;

    // pre-split the source into stable-dual and unstable-dual parts
    let mut omega_s = Mat::zeros(n, m);
    let mut omega_u = Mat::zeros(n, m);
    for k in 0..n {
        let sp = split_covector(omega.row(k), frames.snapshot(k));
        omega_s.row_mut(k).copy_from_slice(&sp.w_s);
        omega_u.row_mut(k).copy_from_slice(&sp.w_u);
    }

    // backward sweep: a_k = Phi_k^T (a_{k+1} + dt/2 w^s_{k+1}) + dt/2 w^s_k
    let mut a = Mat::zeros(n, m);
    let mut carry = vec![0.0; m];
    let mut cur = vec![0.0; m];
    let mut projection_mass_a = 0.0f64;
    for k in (0..n - 1).rev() {
        carry.copy_from_slice(a.row(k + 1));
        axpy(0.5 * dt, omega_s.row(k + 1), &mut carry);
        let (_, phi) = flow_propagator(sys, orbit.state(k), dt);
        phi.tmatvec(&carry, &mut cur);
        axpy(0.5 * dt, omega_s.row(k), &mut cur);
        if (n - 1 - k) % settings.renorm_every == 0 {
            let before = norm2(&cur);
            let snap = frames.snapshot(k);
            let sp = split_covector(&cur, snap);
            cur.copy_from_slice(&sp.w_s);
            // the projection is oblique, so measure the removed part itself
            let removed = (norm2(&sp.w_u).powi(2) + norm2(&sp.w_c).powi(2)).sqrt();
            if valid.contains(&k) {
                let rel = removed / before.max(1e-300) / settings.renorm_every as f64;
                projection_mass_a = projection_mass_a.max(rel);
            }
        }
        let nrm = norm2(&cur);
        if !(nrm < NORM_GUARD) {
            return Err(Error::ShadowInstability { index: k, norm: nrm });
        }
        a.row_mut(k).copy_from_slice(&cur);
    }

    // forward sweep: b_{k+1} = Phi_k^{-T} (b_k + dt/2 w^u_k) + dt/2 w^u_{k+1}
    let mut b = Mat::zeros(n, m);
    let mut projection_mass_b = 0.0f64;
    if u > 0 {
        for k in 0..n - 1 {
            carry.copy_from_slice(b.row(k));
            axpy(0.5 * dt, omega_u.row(k), &mut carry);
            let (_, phi) = flow_propagator(sys, orbit.state(k), dt);
            let pushed = linalg::solve_transposed(&phi, &carry)
                .ok_or(Error::ShadowInstability { index: k, norm: f64::INFINITY })?;
            cur.copy_from_slice(&pushed);
            axpy(0.5 * dt, omega_u.row(k + 1), &mut cur);
            if (k + 1) % settings.renorm_every == 0 {
                let before = norm2(&cur);
                let snap = frames.snapshot(k + 1);
                let sp = split_covector(&cur, snap);
                cur.copy_from_slice(&sp.w_u);
                let removed = (norm2(&sp.w_c).powi(2) + norm2(&sp.w_s).powi(2)).sqrt();
                if valid.contains(&(k + 1)) {
                    let rel = removed / before.max(1e-300) / settings.renorm_every as f64;
                    projection_mass_b = projection_mass_b.max(rel);
                }
            }
            let nrm = norm2(&cur);
            if !(nrm < NORM_GUARD) {
                return Err(Error::ShadowInstability { index: k + 1, norm: nrm });
            }
            b.row_mut(k + 1).copy_from_slice(&cur);
        }
    }

    // nu = a - b - psi eps_c
    let mut nu = Mat::zeros(n, m);
    for k in 0..n {
        let epsc = frames.snapshot(k).eps_c;
        let row = nu.row_mut(k);
        for i in 0..m {
            row[i] = a[(k, i)] - b[(k, i)] - psi[k] * epsc[i];
        }
    }

    Ok(ShadowSeries { a, b, nu, valid, projection_mass_a, projection_mass_b })
}

/// Residual statistics of the shadowing covector against its defining
/// adjoint equation, plus the pointwise flow-pairing defect.
#[derive(Debug, Clone, Copy)]
pub struct ResidualStats {
    /// Median relative norm of `d(nu)/dt + (∇F)^T nu + omega`.
    pub median_rel: f64,
    /// 95th percentile of the same.
    pub p95_rel: f64,
    /// Fraction of valid indices with `|nu F + psi| <= tol_c (1 + |psi|)`.
    pub flow_pairing_ok: f64,
    /// Worst `|nu F + psi|` over the valid range.
    pub flow_pairing_worst: f64,
}

/// Default per-point tolerance scale for the `nu F = -psi` defect.
pub const TOL_C: f64 = 1e-3;

pub fn residual_check(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    frames: &FrameSeries,
    shadow: &ShadowSeries,
    omega: &Mat,
    psi: &[f64],
) -> ResidualStats {
    let m = sys.dim();
    let dt = orbit.dt();
    let lo = shadow.valid.start.max(1);
    let hi = shadow.valid.end.min(orbit.len() - 1);
    let mut jac = Mat::zeros(m, m);
    let mut jt_nu = vec![0.0; m];
    let mut omega_norms = Vec::with_capacity(hi - lo);
    for k in lo..hi {
        omega_norms.push(norm2(omega.row(k)));
    }
    let rms = (omega_norms.iter().map(|v| v * v).sum::<f64>()
        / omega_norms.len().max(1) as f64)
        .sqrt();
    let mut rels = Vec::with_capacity(hi - lo);
    let mut ok = 0usize;
    let mut worst_pair = 0.0f64;
    let mut total = 0usize;
    for k in lo..hi {
        sys.base_jacobian(orbit.state(k), &mut jac);
        jac.tmatvec(shadow.nu.row(k), &mut jt_nu);
        let mut r2 = 0.0;
        for i in 0..m {
            let ddt = (shadow.nu[(k + 1, i)] - shadow.nu[(k - 1, i)]) / (2.0 * dt);
            let r = ddt + jt_nu[i] + omega[(k, i)];
            r2 += r * r;
        }
        let denom = omega_norms[k - lo].max(rms).max(1e-12);
        rels.push(r2.sqrt() / denom);

        let defect = (dot(shadow.nu.row(k), frames.snapshot(k).fvec) + psi[k]).abs();
        worst_pair = worst_pair.max(defect);
        if defect <= TOL_C * (1.0 + psi[k].abs()) {
            ok += 1;
        }
        total += 1;
    }
    ResidualStats {
        median_rel: stats::median(&rels),
        p95_rel: stats::quantile(&rels, 0.95),
        flow_pairing_ok: ok as f64 / total.max(1) as f64,
        flow_pairing_worst: worst_pair,
    }
}
