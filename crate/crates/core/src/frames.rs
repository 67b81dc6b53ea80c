//! Unstable tangent frames, adjoint center-unstable frames, and the dual
//! co-frame at every orbit step.
//!
//! Forward propagation of `u` tangent vectors converges onto the unstable
//! subspace; backward pullback of `u + 1` covectors converges onto the span
//! of the dual unstable and dual center directions. Pairing the two through a
//! small linear solve yields, per step, the dual co-frame rows (paired to the
//! unstable columns and annihilating the flow direction) and the center
//! covector (annihilating the unstable columns, normalized against the flow
//! vector). Every downstream contraction is built from these.

// backs f64 math in no_std builds; shadowed by inherent methods under test
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{flow_propagator, FlowSystem, OrbitSegment};
use crate::linalg::{self, dot, norm2, Mat, MatRef, MatSeries};
use crate::{Error, Result};

/// Condition number above which a snapshot is counted as a near-tangency.
pub const COND_WARN: f64 = 1e6;

/// Settings for frame propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSettings {
    /// QR / projection cadence in steps.
    pub renorm_every: usize,
    /// Steps flagged unconverged at both orbit ends.
    pub warmup_steps: usize,
    /// Seed for the random initial frames.
    pub seed: u64,
}

impl Default for FrameSettings {
    fn default() -> Self {
        FrameSettings { renorm_every: 10, warmup_steps: 2000, seed: 0 }
    }
}

/// Log-volume growth records from periodic QR renormalization.
#[derive(Debug, Clone, Default)]
pub struct GrowthLog {
    /// Orbit index at which each renormalization happened.
    pub indices: Vec<usize>,
    /// `log |R_ii|` per event (row) and tracked vector (column).
    pub log_diag: Vec<Vec<f64>>,
    /// Time covered by each event.
    pub span: f64,
}

impl GrowthLog {
    /// Mean growth rates per unit time over events recorded inside
    /// `[lo, hi]` (orbit indices). Benettin's estimate when applied to the
    /// tangent pass.
    pub fn rates_in(&self, lo: usize, hi: usize) -> Vec<f64> {
        let mut count = 0usize;
        let mut sums: Vec<f64> = Vec::new();
        for (idx, ld) in self.indices.iter().zip(&self.log_diag) {
            if *idx < lo || *idx > hi {
                continue;
            }
            if sums.is_empty() {
                sums = vec![0.0; ld.len()];
            }
            for (s, v) in sums.iter_mut().zip(ld) {
                *s += v;
            }
            count += 1;
        }
        let t = count as f64 * self.span;
        sums.iter().map(|s| if count == 0 { f64::NAN } else { s / t }).collect()
    }
}

/// Propagate `u` tangent vectors forward along the orbit with periodic thin
/// QR. Returns the per-step frames (aligned with orbit states) and the
/// growth log.
pub fn push_tangent_frame(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    e0: &Mat,
    renorm_every: usize,
) -> Result<(MatSeries, GrowthLog)> {
    let m = sys.dim();
    let u = e0.cols();
    assert_eq!(e0.rows(), m);
    assert!(renorm_every >= 1);
    let n = orbit.len();
    let mut series = MatSeries::zeros(n, m, u);
    let mut growth = GrowthLog { span: renorm_every as f64 * orbit.dt(), ..Default::default() };

    let mut e = e0.clone();
    if u > 0 {
        linalg::mgs_qr(&mut e, 1e-300).map_err(|_| Error::DegenerateFrame { step: 0 })?;
    }
    series.set(0, &e);
    for k in 0..n - 1 {
        if u > 0 {
            let (_, phi) = flow_propagator(sys, orbit.state(k), orbit.dt());
            e = phi.matmul(&e);
            if (k + 1) % renorm_every == 0 {
                let r = linalg::mgs_qr(&mut e, 1e-300)
                    .map_err(|_| Error::DegenerateFrame { step: k + 1 })?;
                let ld: Vec<f64> = (0..u).map(|i| r[(i, i)].ln()).collect();
                if !ld.iter().all(|v| v.is_finite()) {
                    return Err(Error::DegenerateFrame { step: k + 1 });
                }
                growth.indices.push(k + 1);
                growth.log_diag.push(ld);
            }
        }
        series.set(k + 1, &e);
    }
    Ok((series, growth))
}

/// Pull `u + 1` covectors backward along the orbit (rows of `w_end`), with
/// periodic row QR. Covector pullback across one step is multiplication by
/// the transposed step propagator, which preserves covector/vector pairings
/// exactly.
pub fn pull_adjoint_frame(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    w_end: &Mat,
    renorm_every: usize,
) -> Result<(MatSeries, GrowthLog)> {
    let m = sys.dim();
    let rows = w_end.rows();
    assert_eq!(w_end.cols(), m);
    assert!(renorm_every >= 1);
    let n = orbit.len();
    let mut series = MatSeries::zeros(n, rows, m);
    let mut growth = GrowthLog { span: renorm_every as f64 * orbit.dt(), ..Default::default() };

    let mut wt = w_end.transpose(); // M x rows, columns are the covectors
    linalg::mgs_qr(&mut wt, 1e-300).map_err(|_| Error::DegenerateFrame { step: n - 1 })?;
    series.set(n - 1, &wt.transpose());
    for back in 1..n {
        let k = n - 1 - back;
        let (_, phi) = flow_propagator(sys, orbit.state(k), orbit.dt());
        // each covector column w <- Phi^T w, i.e. W^T <- Phi^T W^T
        wt = phi.transpose().matmul(&wt);
        if back % renorm_every == 0 {
            let r = linalg::mgs_qr(&mut wt, 1e-300)
                .map_err(|_| Error::DegenerateFrame { step: k })?;
            let ld: Vec<f64> = (0..rows).map(|i| r[(i, i)].ln()).collect();
            if !ld.iter().all(|v| v.is_finite()) {
                return Err(Error::DegenerateFrame { step: k });
            }
            growth.indices.push(k);
            growth.log_diag.push(ld);
        }
        series.set(k, &wt.transpose());
    }
    Ok((series, growth))
}

/// Dual co-frame from one snapshot's raw frames.
#[derive(Debug, Clone)]
pub struct DualBasis {
    /// Rows paired to the unstable columns, annihilating the flow vector.
    pub eps: Mat,
    /// Center covector: annihilates the unstable columns, pairs to 1 with
    /// the flow vector.
    pub eps_c: Vec<f64>,
    /// Condition number of the pairing matrix.
    pub cond: f64,
}

/// Solve for the dual rows inside the span of the adjoint frame: with
/// `A = Wcu [E | F]`, the rows of `A^{-1} Wcu` pair as identity against the
/// extended frame. Errors with a tangency when `A` is numerically singular
/// (the caller attaches the orbit index).
pub fn dual_basis(e: MatRef<'_>, fvec: &[f64], wcu: MatRef<'_>) -> Result<DualBasis> {
    let m = fvec.len();
    let u = e.cols();
    assert_eq!(wcu.rows(), u + 1);
    assert_eq!(wcu.cols(), m);
    let mut a = Mat::zeros(u + 1, u + 1);
    for r in 0..u + 1 {
        let wrow = wcu.row(r);
        for c in 0..u {
            a[(r, c)] = dot(wrow, &e.col(c));
        }
        a[(r, u)] = dot(wrow, fvec);
    }
    let deta = linalg::det(&a);
    let norm_bound = {
        let f = a.frob_norm();
        let mut p = 1.0;
        for _ in 0..u + 1 {
            p *= f;
        }
        p
    };
    let cond = linalg::cond_frobenius(&a);
    if !(deta.abs() > 1e-12 * norm_bound) {
        return Err(Error::Tangency { index: 0, cond });
    }
    let inv = linalg::inverse(&a).ok_or(Error::Tangency { index: 0, cond })?;
    let dual = inv.matmul(&wcu.to_owned());
    let mut eps = Mat::zeros(u, m);
    for r in 0..u {
        eps.row_mut(r).copy_from_slice(dual.row(r));
    }
    Ok(DualBasis { eps, eps_c: dual.row(u).to_vec(), cond })
}

/// Per-step frame data for one orbit point.
#[derive(Debug, Clone, Copy)]
pub struct FrameSnapshotRef<'a> {
    pub x: &'a [f64],
    /// Unstable frame columns (`M x u`).
    pub e: MatRef<'a>,
    /// Flow vector `F(x)`.
    pub fvec: &'a [f64],
    /// Adjoint center-unstable rows (`(u+1) x M`).
    pub wcu: MatRef<'a>,
    /// Dual co-frame rows (`u x M`).
    pub eps: MatRef<'a>,
    /// Center covector.
    pub eps_c: &'a [f64],
    /// Pairing condition number.
    pub cond: f64,
}

/// Frames, duals and growth logs for a whole orbit.
#[derive(Debug, Clone)]
pub struct FrameSeries {
    dim: usize,
    u: usize,
    dt: f64,
    x: Mat,
    e: MatSeries,
    fvec: Mat,
    wcu: MatSeries,
    eps: MatSeries,
    eps_c: Mat,
    cond: Vec<f64>,
    pub tangent_growth: GrowthLog,
    pub adjoint_growth: GrowthLog,
    pub warmup_steps: usize,
    /// Snapshots in the converged range with `cond > COND_WARN`.
    pub cond_warnings: usize,
    /// Minimum flow speed `|F|` over the converged range.
    pub min_speed: f64,
}

impl FrameSeries {
    /// Seeded default initial frames, then [`FrameSeries::compute_with_init`].
    pub fn compute(
        sys: &dyn FlowSystem,
        orbit: &OrbitSegment,
        settings: &FrameSettings,
    ) -> Result<FrameSeries> {
        let m = sys.dim();
        let u = sys.unstable_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5eed_f0a3);
        let mut e0 = Mat::zeros(m, u);
        for v in e0.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut w_end = Mat::zeros(u + 1, m);
        for v in w_end.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        Self::compute_with_init(sys, orbit, settings, &e0, &w_end)
    }

    /// Full frame pipeline with caller-provided initial frames (used by the
    /// basis-independence checks).
    pub fn compute_with_init(
        sys: &dyn FlowSystem,
        orbit: &OrbitSegment,
        settings: &FrameSettings,
        e0: &Mat,
        w_end: &Mat,
    ) -> Result<FrameSeries> {
        let m = sys.dim();
        let u = sys.unstable_dim();
        let n = orbit.len();
        if n < 2 * settings.warmup_steps + 2 {
            return Err(Error::InsufficientOrbit {
                needed: 2 * settings.warmup_steps + 2,
                available: n,
            });
        }
        let (e, tangent_growth) = push_tangent_frame(sys, orbit, e0, settings.renorm_every)?;
        let (wcu, adjoint_growth) = pull_adjoint_frame(sys, orbit, w_end, settings.renorm_every)?;

        let mut x = Mat::zeros(n, m);
        let mut fvec = Mat::zeros(n, m);
        let mut eps = MatSeries::zeros(n, u, m);
        let mut eps_c = Mat::zeros(n, m);
        let mut cond = vec![0.0; n];
        let mut cond_warnings = 0usize;
        let mut min_speed = f64::INFINITY;
        let converged = settings.warmup_steps..n - settings.warmup_steps;
        for k in 0..n {
            x.row_mut(k).copy_from_slice(orbit.state(k));
            sys.base_field(orbit.state(k), fvec.row_mut(k));
            let db = dual_basis(e.at(k), fvec.row(k), wcu.at(k)).map_err(|err| match err {
                Error::Tangency { cond, .. } => Error::Tangency { index: k, cond },
                other => other,
            })?;
            eps.set(k, &db.eps);
            eps_c.row_mut(k).copy_from_slice(&db.eps_c);
            cond[k] = db.cond;
            if converged.contains(&k) {
                if db.cond > COND_WARN {
                    cond_warnings += 1;
                }
                let speed = norm2(fvec.row(k));
                if speed < min_speed {
                    min_speed = speed;
                }
            }
        }
        Ok(FrameSeries {
            dim: m,
            u,
            dt: orbit.dt(),
            x,
            e,
            fvec,
            wcu,
            eps,
            eps_c,
            cond,
            tangent_growth,
            adjoint_growth,
            warmup_steps: settings.warmup_steps,
            cond_warnings,
            min_speed,
        })
    }

    pub fn len(&self) -> usize {
        self.cond.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cond.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unstable_dim(&self) -> usize {
        self.u
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn snapshot(&self, k: usize) -> FrameSnapshotRef<'_> {
        FrameSnapshotRef {
            x: self.x.row(k),
            e: self.e.at(k),
            fvec: self.fvec.row(k),
            wcu: self.wcu.at(k),
            eps: self.eps.at(k),
            eps_c: self.eps_c.row(k),
            cond: self.cond[k],
        }
    }

    /// Indices whose frames have forgotten both initializations.
    pub fn converged_range(&self) -> core::ops::Range<usize> {
        self.warmup_steps..self.len() - self.warmup_steps
    }

    /// Forward (Benettin) growth rates over the converged range.
    pub fn lambda_tangent(&self) -> Vec<f64> {
        let r = self.converged_range();
        self.tangent_growth.rates_in(r.start, r.end)
    }

    /// Backward pullback growth rates over the converged range.
    pub fn lambda_adjoint(&self) -> Vec<f64> {
        let r = self.converged_range();
        self.adjoint_growth.rates_in(r.start, r.end)
    }

    /// Largest measured forward rate (0 when no unstable directions).
    pub fn lambda_max(&self) -> f64 {
        self.lambda_tangent().first().copied().unwrap_or(0.0)
    }

    /// Copy the sub-series over state indices `[lo, hi]` inclusive, keeping
    /// the per-step data as computed on the full orbit. Growth-log events
    /// are re-indexed; the warmup trim shrinks by however much of it the cut
    /// already removed.
    pub fn slice(&self, lo: usize, hi: usize) -> FrameSeries {
        assert!(lo <= hi && hi < self.len());
        let n_old = self.len();
        let count = hi - lo + 1;
        let take_mat = |m: &Mat| {
            let mut out = Mat::zeros(count, m.cols());
            for k in 0..count {
                out.row_mut(k).copy_from_slice(m.row(lo + k));
            }
            out
        };
        let take_series = |s: &MatSeries| {
            let mref = s.at(0);
            let mut out = MatSeries::zeros(count, mref.rows(), mref.cols());
            for k in 0..count {
                out.set(k, &s.at(lo + k).to_owned());
            }
            out
        };
        let trim_log = |g: &GrowthLog| {
            let mut out = GrowthLog { span: g.span, ..Default::default() };
            for (idx, ld) in g.indices.iter().zip(&g.log_diag) {
                if *idx >= lo && *idx <= hi {
                    out.indices.push(*idx - lo);
                    out.log_diag.push(ld.clone());
                }
            }
            out
        };
        let warmup = self
            .warmup_steps
            .saturating_sub(lo)
            .max(self.warmup_steps.saturating_sub(n_old - 1 - hi));
        FrameSeries {
            dim: self.dim,
            u: self.u,
            dt: self.dt,
            x: take_mat(&self.x),
            e: take_series(&self.e),
            fvec: take_mat(&self.fvec),
            wcu: take_series(&self.wcu),
            eps: take_series(&self.eps),
            eps_c: take_mat(&self.eps_c),
            cond: self.cond[lo..=hi].to_vec(),
            tangent_growth: trim_log(&self.tangent_growth),
            adjoint_growth: trim_log(&self.adjoint_growth),
            warmup_steps: warmup,
            cond_warnings: self.cond_warnings,
            min_speed: self.min_speed,
        }
    }
}

/// Check the declared unstable dimension against the measured rates: the
/// slowest tracked tangent rate must stay positive and the extra adjoint
/// (neutral) rate must vanish.
pub fn validate_unstable_dim(series: &FrameSeries, neutral_tol: f64) -> Result<()> {
    use alloc::format;
    let u = series.unstable_dim();
    if u > 0 {
        let rates = series.lambda_tangent();
        let slowest = rates[u - 1];
        if !(slowest > 0.0) {
            return Err(Error::UnstableDimMismatch {
                declared: u,
                detail: format!("tangent rate #{u} is {slowest:.4}, expected > 0"),
            });
        }
    }
    let adj = series.lambda_adjoint();
    let neutral = adj[u];
    if neutral.abs() > neutral_tol {
        return Err(Error::UnstableDimMismatch {
            declared: u,
            detail: format!("neutral adjoint rate is {neutral:.4}, |.| > {neutral_tol}"),
        });
    }
    Ok(())
}

/// Worst pairing defects of the dual co-frame over an index range. These are
/// identities of the construction, so they hold at solver precision at every
/// step regardless of convergence.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairingDefects {
    /// `max |eps e_j - delta_ij|`
    pub eps_e: f64,
    /// `max |eps_c F - 1|`
    pub epsc_f: f64,
    /// `max |eps F|`
    pub eps_f: f64,
    /// `max |eps_c e_j|`
    pub epsc_e: f64,
}

pub fn pairing_defects(series: &FrameSeries, range: core::ops::Range<usize>) -> PairingDefects {
    let mut d = PairingDefects::default();
    let u = series.unstable_dim();
    for k in range {
        let s = series.snapshot(k);
        for i in 0..u {
            let row = s.eps.row(i);
            for j in 0..u {
                let p = dot(row, &s.e.col(j));
                let target = if i == j { 1.0 } else { 0.0 };
                d.eps_e = d.eps_e.max((p - target).abs());
            }
            d.eps_f = d.eps_f.max(dot(row, s.fvec).abs());
        }
        d.epsc_f = d.epsc_f.max((dot(s.eps_c, s.fvec) - 1.0).abs());
        for j in 0..u {
            d.epsc_e = d.epsc_e.max(dot(s.eps_c, &s.e.col(j)).abs());
        }
    }
    d
}

/// Result of the flow-map Hessian consistency probe.
#[derive(Debug, Clone)]
pub struct HessianCheck {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub rel_err: f64,
}

/// Compare the derivative of the flow pushforward against the accumulated
/// Hessian quadrature along the orbit.
///
/// `lhs`: Richardson-extrapolated central difference of the transported
/// vector with respect to shifting the base point along `xvec`.
/// `rhs`: RK4 solution of the forced tangent equation whose source is the
/// field Hessian contracted with the transported pair.
pub fn hessian_pushforward_check(
    sys: &dyn FlowSystem,
    orbit: &OrbitSegment,
    x_index: usize,
    xvec: &[f64],
    evec: &[f64],
    t_span: f64,
) -> HessianCheck {
    let dt = orbit.dt();
    let steps = (t_span / dt + 0.5) as usize;
    assert!(steps >= 1, "t_span shorter than one step");
    assert!(x_index + steps < orbit.len(), "t_span leaves the orbit");
    let x0 = orbit.state(x_index);

    // rhs: carry (x, X_t, e_t, I) with I' = J I + H(X_t, e_t).
    let m = sys.dim();
    let mut x = x0.to_vec();
    let mut xt = xvec.to_vec();
    let mut et = evec.to_vec();
    let mut iv = vec![0.0; m];
    let mut j = Mat::zeros(m, m);
    let coef = [0.0, 0.5, 0.5, 1.0];
    for _ in 0..steps {
        let mut kx = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut ka = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut kb = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut ki = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut xs = vec![0.0; m];
        let mut asv = vec![0.0; m];
        let mut bsv = vec![0.0; m];
        let mut isv = vec![0.0; m];
        let mut h = vec![0.0; m];
        for s in 0..4 {
            if s == 0 {
                xs.copy_from_slice(&x);
                asv.copy_from_slice(&xt);
                bsv.copy_from_slice(&et);
                isv.copy_from_slice(&iv);
            } else {
                for i in 0..m {
                    xs[i] = x[i] + coef[s] * dt * kx[s - 1][i];
                    asv[i] = xt[i] + coef[s] * dt * ka[s - 1][i];
                    bsv[i] = et[i] + coef[s] * dt * kb[s - 1][i];
                    isv[i] = iv[i] + coef[s] * dt * ki[s - 1][i];
                }
            }
            sys.base_field(&xs, &mut kx[s]);
            sys.base_jacobian(&xs, &mut j);
            j.matvec(&asv, &mut ka[s]);
            j.matvec(&bsv, &mut kb[s]);
            j.matvec(&isv, &mut ki[s]);
            sys.base_hessian_contract(&xs, &asv, &bsv, &mut h);
            for i in 0..m {
                ki[s][i] += h[i];
            }
        }
        for i in 0..m {
            x[i] += dt / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
            xt[i] += dt / 6.0 * (ka[0][i] + 2.0 * ka[1][i] + 2.0 * ka[2][i] + ka[3][i]);
            et[i] += dt / 6.0 * (kb[0][i] + 2.0 * kb[1][i] + 2.0 * kb[2][i] + kb[3][i]);
            iv[i] += dt / 6.0 * (ki[0][i] + 2.0 * ki[1][i] + 2.0 * ki[2][i] + ki[3][i]);
        }
    }
    let rhs = iv;

    // lhs: transported evec from shifted base points, two-sided differences
    // at h and h/2 combined by Richardson extrapolation.
    let transport = |start: &[f64]| -> Vec<f64> {
        let mut xc = start.to_vec();
        let mut v = evec.to_vec();
        let mut vn = vec![0.0; m];
        for _ in 0..steps {
            let (xn, phi) = flow_propagator(sys, &xc, dt);
            phi.matvec(&v, &mut vn);
            core::mem::swap(&mut v, &mut vn);
            xc = xn;
        }
        v
    };
    let h0 = 1e-4 * (1.0 + norm2(x0)) / (1.0 + norm2(xvec));
    let diff = |h: f64| -> Vec<f64> {
        let xp: Vec<f64> = x0.iter().zip(xvec).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x0.iter().zip(xvec).map(|(a, b)| a - h * b).collect();
        let vp = transport(&xp);
        let vm = transport(&xm);
        vp.iter().zip(&vm).map(|(p, q)| (p - q) / (2.0 * h)).collect()
    };
    let d1 = diff(h0);
    let d2 = diff(h0 / 2.0);
    let lhs: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();

    let denom = norm2(&rhs).max(1e-12);
    let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    HessianCheck { lhs, rhs, rel_err: err / denom }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{evolve_orbit, Lorenz63, RotationProbe};

    /// Saddle field diag(1, -1): explicit dominant direction.
    struct Saddle;

    impl FlowSystem for Saddle {
        fn dim(&self) -> usize {
            2
        }
        fn unstable_dim(&self) -> usize {
            1
        }
        fn base_field(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0];
            out[1] = -x[1];
        }
        fn base_jacobian(&self, _x: &[f64], out: &mut Mat) {
            out.data_mut().fill(0.0);
            out[(0, 0)] = 1.0;
            out[(1, 1)] = -1.0;
        }
        fn base_hessian_contract(&self, _x: &[f64], _a: &[f64], _b: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn perturbation_field(&self, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn perturbation_jacobian(&self, _x: &[f64], out: &mut Mat) {
            out.data_mut().fill(0.0);
        }
        fn observable(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn observable_gradient(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = 0.0;
        }
    }

    #[test]
    fn rotation_keeps_tangent_norm() {
        let sys = RotationProbe { omega: 1.0, decay: 0.0 };
        let steps = 6283; // one period at dt=1e-3
        let orbit = evolve_orbit(&sys, &[1.0, 0.0, 0.5], steps, 1e-3, 0).unwrap();
        let e0 = Mat::from_vec(3, 1, vec![0.6, 0.8, 0.0]);
        // no renorm inside the window so the raw norm is observable
        let (frames, _) = push_tangent_frame(&sys, &orbit, &e0, steps + 1).unwrap();
        let e_end = frames.at(steps).col(0);
        assert!((norm2(&e_end) - 1.0).abs() < 1e-6, "norm {}", norm2(&e_end));
    }

    #[test]
    fn saddle_tangent_aligns_with_unstable_axis() {
        let sys = Saddle;
        let orbit = evolve_orbit(&sys, &[1e-3, 1.0], 500, 0.01, 0).unwrap();
        let e0 = Mat::from_vec(2, 1, vec![core::f64::consts::FRAC_1_SQRT_2; 2]);
        let (frames, _) = push_tangent_frame(&sys, &orbit, &e0, 10).unwrap();
        let e = frames.at(500).col(0);
        let dir = e[1].abs() / norm2(&e);
        assert!(dir < 1e-4, "off-axis component {dir}");
    }

    #[test]
    fn saddle_adjoint_aligns_with_dual_unstable() {
        let sys = Saddle;
        let orbit = evolve_orbit(&sys, &[1e-3, 1.0], 500, 0.01, 0).unwrap();
        let w_end = Mat::from_vec(1, 2, vec![core::f64::consts::FRAC_1_SQRT_2; 2]);
        // single covector pulled back: dominant backward growth is the dual
        // unstable direction (1, 0)
        let (frames, _) = pull_adjoint_frame(&sys, &orbit, &w_end, 10).unwrap();
        let w = frames.at(0).row(0).to_vec();
        assert!(w[1].abs() / norm2(&w) < 1e-4, "dual off-axis {w:?}");
    }

    #[test]
    fn rotation_covector_norm_preserved() {
        let sys = RotationProbe { omega: 1.0, decay: 0.0 };
        let steps = 6283;
        let orbit = evolve_orbit(&sys, &[1.0, 0.0, 0.5], steps, 1e-3, 0).unwrap();
        let w_end = Mat::from_vec(1, 3, vec![0.6, -0.8, 0.0]);
        let (frames, _) = pull_adjoint_frame(&sys, &orbit, &w_end, steps + 1).unwrap();
        let w = frames.at(0).row(0).to_vec();
        // w_end is normalized on entry, so the pulled-back norm stays 1
        assert!((norm2(&w) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dual_basis_orthonormal_case() {
        let e = Mat::from_vec(3, 1, vec![1.0, 0.0, 0.0]);
        let f = [0.0, 0.0, 1.0];
        let wcu = Mat::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let db = dual_basis(e.as_ref(), &f, wcu.as_ref()).unwrap();
        assert_eq!(db.eps.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(&db.eps_c[..], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dual_basis_removes_mixing() {
        let e = Mat::from_vec(3, 1, vec![1.0, 0.0, 0.0]);
        let f = [0.0, 0.0, 1.0];
        let wcu = Mat::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let db = dual_basis(e.as_ref(), &f, wcu.as_ref()).unwrap();
        for (got, want) in db.eps.row(0).iter().zip(&[1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        for (got, want) in db.eps_c.iter().zip(&[0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn dual_basis_flags_tangency() {
        // adjoint rows orthogonal to the frame span
        let e = Mat::from_vec(3, 1, vec![1.0, 0.0, 0.0]);
        let f = [0.0, 1.0, 0.0];
        let wcu = Mat::from_vec(2, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0]);
        assert!(matches!(
            dual_basis(e.as_ref(), &f, wcu.as_ref()),
            Err(Error::Tangency { .. })
        ));
    }

    #[test]
    fn lemma_quadrature_vanishes_for_linear_field() {
        let sys = Saddle;
        let orbit = evolve_orbit(&sys, &[0.5, 0.8], 300, 0.01, 0).unwrap();
        let chk = hessian_pushforward_check(&sys, &orbit, 0, &[1.0, -0.3], &[0.2, 0.9], 1.0);
        assert!(norm2(&chk.rhs) < 1e-14, "rhs {:?}", chk.rhs);
        assert!(norm2(&chk.lhs) < 1e-7, "lhs {:?}", chk.lhs);
    }

    #[test]
    fn lorenz_frames_pairing_exact() {
        let sys = Lorenz63::default();
        let orbit = evolve_orbit(&sys, &[1.0, 1.0, 1.0], 4000, 0.01, 2000).unwrap();
        let settings = FrameSettings { warmup_steps: 500, ..Default::default() };
        let series = FrameSeries::compute(&sys, &orbit, &settings).unwrap();
        let d = pairing_defects(&series, series.converged_range());
        assert!(d.eps_e < 1e-8, "eps_e {}", d.eps_e);
        assert!(d.epsc_f < 1e-8, "epsc_f {}", d.epsc_f);
        assert!(d.eps_f < 1e-8, "eps_f {}", d.eps_f);
        assert!(d.epsc_e < 1e-8, "epsc_e {}", d.epsc_e);
    }
}
