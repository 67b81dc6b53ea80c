//! Flow systems and orbit integration.
//!
//! A [`FlowSystem`] bundles the base field `F`, the perturbation field `X`,
//! the scalar observable, and their first/second derivatives. Orbits are
//! integrated with fixed-step classical RK4; tangent and adjoint transport
//! reuse the same stage states through [`flow_propagator`], so pushforward
//! commutes with the discrete flow to integrator order and every run is
//! bit-reproducible.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, Mat};
use crate::{Error, Result};

/// A smooth flow `x' = F(x)` with a perturbation direction `X`, an observable
/// and analytic first/second derivatives. All callbacks write through `out`
/// slices sized `dim()`.
pub trait FlowSystem {
    /// State-space dimension `M`.
    fn dim(&self) -> usize;

    /// Declared number of positive Lyapunov exponents `u`.
    fn unstable_dim(&self) -> usize;

    /// Base field `F(x)`.
    fn base_field(&self, x: &[f64], out: &mut [f64]);

    /// Jacobian `∇F(x)` as an `M x M` matrix (row = component).
    fn base_jacobian(&self, x: &[f64], out: &mut Mat);

    /// Symmetric bilinear Hessian contraction `∇²F(x)(a, b)`.
    fn base_hessian_contract(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]);

    /// Perturbation field `X(x)`.
    fn perturbation_field(&self, x: &[f64], out: &mut [f64]);

    /// Jacobian `∇X(x)`.
    fn perturbation_jacobian(&self, x: &[f64], out: &mut Mat);

    /// Observable `Φ(x)`.
    fn observable(&self, x: &[f64]) -> f64;

    /// Gradient covector `dΦ(x)`.
    fn observable_gradient(&self, x: &[f64], out: &mut [f64]);

    /// `F(x) + γ X(x)`, the field at perturbed parameter (finite-difference
    /// oracle runs integrate this).
    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.base_field(x, out);
        let mut xp = vec![0.0; x.len()];
        self.perturbation_field(x, &mut xp);
        axpy(gamma, &xp, out);
    }
}

// ---------------------------------------------------------------------------
// RK4 kernels
// ---------------------------------------------------------------------------

pub(crate) struct RkBuf {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl RkBuf {
    pub(crate) fn new(dim: usize) -> Self {
        RkBuf {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// One classical RK4 step of `x' = field(x)` into `out` (may alias nothing).
pub(crate) fn rk4_into<F: Fn(&[f64], &mut [f64])>(
    field: F,
    x: &[f64],
    dt: f64,
    buf: &mut RkBuf,
    out: &mut [f64],
) {
    let n = x.len();
    field(x, &mut buf.k1);
    for i in 0..n {
        buf.tmp[i] = x[i] + 0.5 * dt * buf.k1[i];
    }
    field(&buf.tmp, &mut buf.k2);
    for i in 0..n {
        buf.tmp[i] = x[i] + 0.5 * dt * buf.k2[i];
    }
    field(&buf.tmp, &mut buf.k3);
    for i in 0..n {
        buf.tmp[i] = x[i] + dt * buf.k3[i];
    }
    field(&buf.tmp, &mut buf.k4);
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (buf.k1[i] + 2.0 * buf.k2[i] + 2.0 * buf.k3[i] + buf.k4[i]);
    }
}

/// Advance the state one step and return the discrete variational propagator
/// `Phi` of that step, i.e. the RK4 solution of `E' = ∇F(x(t)) E` evaluated on
/// the same stage states. Tangent vectors push forward as `Phi v`; covectors
/// pull back as `Phi^T w`, which preserves pairings exactly.
pub fn flow_propagator(sys: &dyn FlowSystem, x: &[f64], dt: f64) -> (Vec<f64>, Mat) {
    let n = sys.dim();
    let mut s1 = x.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut j = Mat::zeros(n, n);

    sys.base_field(&s1, &mut k1);
    sys.base_jacobian(&s1, &mut j);
    let m1 = j.clone();

    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k1[i];
    }
    sys.base_field(&stage, &mut k2);
    sys.base_jacobian(&stage, &mut j);
    let mut t = Mat::identity(n);
    add_scaled(&mut t, &m1, 0.5 * dt);
    let m2 = j.matmul(&t);

    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k2[i];
    }
    sys.base_field(&stage, &mut k3);
    sys.base_jacobian(&stage, &mut j);
    let mut t = Mat::identity(n);
    add_scaled(&mut t, &m2, 0.5 * dt);
    let m3 = j.matmul(&t);

    for i in 0..n {
        stage[i] = x[i] + dt * k3[i];
    }
    sys.base_field(&stage, &mut k4);
    sys.base_jacobian(&stage, &mut j);
    let mut t = Mat::identity(n);
    add_scaled(&mut t, &m3, dt);
    let m4 = j.matmul(&t);

    for i in 0..n {
        s1[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut phi = Mat::identity(n);
    add_scaled(&mut phi, &m1, dt / 6.0);
    add_scaled(&mut phi, &m2, dt / 3.0);
    add_scaled(&mut phi, &m3, dt / 3.0);
    add_scaled(&mut phi, &m4, dt / 6.0);
    (s1, phi)
}

fn add_scaled(acc: &mut Mat, m: &Mat, s: f64) {
    for (a, b) in acc.data_mut().iter_mut().zip(m.data()) {
        *a += s * b;
    }
}

/// One step of the orbit together with the inhomogeneous tangent
/// `v' = ∇F(x) v + X(x)` (the pathwise sensitivity carried by the ensemble
/// comparator). Updates `x` and `v` in place.
pub(crate) fn rk4_forced_tangent(sys: &dyn FlowSystem, x: &mut [f64], v: &mut [f64], dt: f64) {
    let n = sys.dim();
    let mut j = Mat::zeros(n, n);
    let mut xs = vec![0.0; n];
    let mut vs = vec![0.0; n];
    let mut kx = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut kv = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let coef = [0.0, 0.5, 0.5, 1.0];
    for s in 0..4 {
        if s == 0 {
            xs.copy_from_slice(x);
            vs.copy_from_slice(v);
        } else {
            for i in 0..n {
                xs[i] = x[i] + coef[s] * dt * kx[s - 1][i];
                vs[i] = v[i] + coef[s] * dt * kv[s - 1][i];
            }
        }
        sys.base_field(&xs, &mut kx[s]);
        sys.base_jacobian(&xs, &mut j);
        j.matvec(&vs, &mut kv[s]);
        sys.perturbation_field(&xs, &mut vs);
        for i in 0..n {
            kv[s][i] += vs[i];
        }
    }
    for i in 0..n {
        x[i] += dt / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
        v[i] += dt / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
    }
}

// ---------------------------------------------------------------------------
// Public integration operations
// ---------------------------------------------------------------------------

/// Single deterministic RK4 step of the base field.
pub fn flow_step(sys: &dyn FlowSystem, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter { name: "dt".into(), reason: "must be > 0".into() });
    }
    let mut buf = RkBuf::new(sys.dim());
    let mut out = vec![0.0; sys.dim()];
    rk4_into(|s, o| sys.base_field(s, o), x, dt, &mut buf, &mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::IntegrationDiverged { step: 0 });
    }
    Ok(out)
}

/// Time-discretized trajectory with uniform step.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSegment {
    dt: f64,
    t0: f64,
    dim: usize,
    states: Vec<f64>,
}

impl OrbitSegment {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Absolute start time (bookkeeping only).
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Sub-segment over state indices `[lo, hi]` inclusive.
    pub fn slice(&self, lo: usize, hi: usize) -> OrbitSegment {
        assert!(lo <= hi && hi < self.len());
        OrbitSegment {
            dt: self.dt,
            t0: self.time(lo),
            dim: self.dim,
            states: self.states[lo * self.dim..(hi + 1) * self.dim].to_vec(),
        }
    }
}

/// Integrate `discard` warmup steps (dropped), then record `n_steps + 1`
/// states of the base flow.
pub fn evolve_orbit(
    sys: &dyn FlowSystem,
    x0: &[f64],
    n_steps: usize,
    dt: f64,
    discard: usize,
) -> Result<OrbitSegment> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "n_steps".into(),
            reason: "must be >= 1".into(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter { name: "dt".into(), reason: "must be > 0".into() });
    }
    let n = sys.dim();
    let mut buf = RkBuf::new(n);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    for step in 0..discard {
        rk4_into(|s, o| sys.base_field(s, o), &x, dt, &mut buf, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { step });
        }
        core::mem::swap(&mut x, &mut next);
    }
    let mut states = Vec::with_capacity((n_steps + 1) * n);
    states.extend_from_slice(&x);
    for step in 0..n_steps {
        rk4_into(|s, o| sys.base_field(s, o), &x, dt, &mut buf, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { step: discard + step });
        }
        states.extend_from_slice(&next);
        core::mem::swap(&mut x, &mut next);
    }
    Ok(OrbitSegment { dt, t0: discard as f64 * dt, dim: n, states })
}

// ---------------------------------------------------------------------------
// Builtin systems
// ---------------------------------------------------------------------------

/// Lorenz '63 with the Rayleigh-number perturbation `X = ∂F/∂r = (0, x, 0)`
/// and observable `Φ = z`. The Hessian of the field is constant and sparse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz63 {
    pub sigma: f64,
    pub beta: f64,
    pub r: f64,
}

impl Default for Lorenz63 {
    fn default() -> Self {
        Lorenz63 { sigma: 10.0, beta: 8.0 / 3.0, r: 28.0 }
    }
}

impl FlowSystem for Lorenz63 {
    fn dim(&self) -> usize {
        3
    }

    fn unstable_dim(&self) -> usize {
        1
    }

    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = x[0] * (self.r - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }

    fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
        let j = out.data_mut();
        j[0] = -self.sigma;
        j[1] = self.sigma;
        j[2] = 0.0;
        j[3] = self.r - x[2];
        j[4] = -1.0;
        j[5] = -x[0];
        j[6] = x[1];
        j[7] = x[0];
        j[8] = -self.beta;
    }

    fn base_hessian_contract(&self, _x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = -(a[0] * b[2] + a[2] * b[0]);
        out[2] = a[0] * b[1] + a[1] * b[0];
    }

    fn perturbation_field(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = x[0];
        out[2] = 0.0;
    }

    fn perturbation_jacobian(&self, _x: &[f64], out: &mut Mat) {
        out.data_mut().fill(0.0);
        out[(1, 0)] = 1.0;
    }

    fn observable(&self, x: &[f64]) -> f64 {
        x[2]
    }

    fn observable_gradient(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 1.0;
    }

    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = x[0] * (self.r + gamma - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }
}

/// Supercritical Hopf normal form: an attracting circle of radius `sqrt(mu)`.
/// Perturbation `X = ∂F/∂μ = (x, y)`, observable `Φ = x² + y²`, so the exact
/// response of the attractor average is `dρ(Φ)/dμ = 1`. No unstable
/// directions (`u = 0`), which isolates the center machinery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfCycle {
    pub mu: f64,
    pub omega0: f64,
}

impl Default for HopfCycle {
    fn default() -> Self {
        HopfCycle { mu: 1.0, omega0: 1.0 }
    }
}

impl FlowSystem for HopfCycle {
    fn dim(&self) -> usize {
        2
    }

    fn unstable_dim(&self) -> usize {
        0
    }

    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        let r2 = x[0] * x[0] + x[1] * x[1];
        out[0] = self.mu * x[0] - r2 * x[0] - self.omega0 * x[1];
        out[1] = self.mu * x[1] - r2 * x[1] + self.omega0 * x[0];
    }

    fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
        let j = out.data_mut();
        j[0] = self.mu - 3.0 * x[0] * x[0] - x[1] * x[1];
        j[1] = -2.0 * x[0] * x[1] - self.omega0;
        j[2] = -2.0 * x[0] * x[1] + self.omega0;
        j[3] = self.mu - x[0] * x[0] - 3.0 * x[1] * x[1];
    }

    fn base_hessian_contract(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        let cross = a[0] * b[1] + a[1] * b[0];
        out[0] = -6.0 * x[0] * a[0] * b[0] - 2.0 * x[1] * cross - 2.0 * x[0] * a[1] * b[1];
        out[1] = -2.0 * x[1] * a[0] * b[0] - 2.0 * x[0] * cross - 6.0 * x[1] * a[1] * b[1];
    }

    fn perturbation_field(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
        out[1] = x[1];
    }

    fn perturbation_jacobian(&self, _x: &[f64], out: &mut Mat) {
        out.data_mut().fill(0.0);
        out[(0, 0)] = 1.0;
        out[(1, 1)] = 1.0;
    }

    fn observable(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1]
    }

    fn observable_gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
        out[1] = 2.0 * x[1];
    }

    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        let mu = self.mu + gamma;
        let r2 = x[0] * x[0] + x[1] * x[1];
        out[0] = mu * x[0] - r2 * x[0] - self.omega0 * x[1];
        out[1] = mu * x[1] - r2 * x[1] + self.omega0 * x[0];
    }
}

/// Linear diagnostic field: rotation at rate `omega` in the xy-plane,
/// contraction at rate `decay` in z. Zero perturbation and `Φ = z`; used by
/// unit tests for isometry/transport checks, not for response runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationProbe {
    pub omega: f64,
    pub decay: f64,
}

impl Default for RotationProbe {
    fn default() -> Self {
        RotationProbe { omega: 1.0, decay: 1.0 }
    }
}

impl FlowSystem for RotationProbe {
    fn dim(&self) -> usize {
        3
    }

    fn unstable_dim(&self) -> usize {
        0
    }

    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -self.omega * x[1];
        out[1] = self.omega * x[0];
        out[2] = -self.decay * x[2];
    }

    fn base_jacobian(&self, _x: &[f64], out: &mut Mat) {
        out.data_mut().fill(0.0);
        out[(0, 1)] = -self.omega;
        out[(1, 0)] = self.omega;
        out[(2, 2)] = -self.decay;
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
        x[2]
    }

    fn observable_gradient(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 1.0;
    }
}

/// Fully wired builtin system, selected by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinSystem {
    Lorenz63(Lorenz63),
    HopfCycle(HopfCycle),
    RotationProbe(RotationProbe),
}

impl BuiltinSystem {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinSystem::Lorenz63(_) => "lorenz63",
            BuiltinSystem::HopfCycle(_) => "hopf_cycle",
            BuiltinSystem::RotationProbe(_) => "rotation_probe",
        }
    }

    /// A reasonable initial condition inside the attractor basin.
    pub fn default_ic(&self) -> Vec<f64> {
        match self {
            BuiltinSystem::Lorenz63(_) => vec![1.0, 1.0, 1.0],
            BuiltinSystem::HopfCycle(_) => vec![2.0, 0.0],
            BuiltinSystem::RotationProbe(_) => vec![1.0, 0.0, 1.0],
        }
    }
}

macro_rules! delegate {
    ($self:ident, $sys:ident, $body:expr) => {
        match $self {
            BuiltinSystem::Lorenz63($sys) => $body,
            BuiltinSystem::HopfCycle($sys) => $body,
            BuiltinSystem::RotationProbe($sys) => $body,
        }
    };
}

impl FlowSystem for BuiltinSystem {
    fn dim(&self) -> usize {
        delegate!(self, s, s.dim())
    }
    fn unstable_dim(&self) -> usize {
        delegate!(self, s, s.unstable_dim())
    }
    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, s, s.base_field(x, out))
    }
    fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
        delegate!(self, s, s.base_jacobian(x, out))
    }
    fn base_hessian_contract(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        delegate!(self, s, s.base_hessian_contract(x, a, b, out))
    }
    fn perturbation_field(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, s, s.perturbation_field(x, out))
    }
    fn perturbation_jacobian(&self, x: &[f64], out: &mut Mat) {
        delegate!(self, s, s.perturbation_jacobian(x, out))
    }
    fn observable(&self, x: &[f64]) -> f64 {
        delegate!(self, s, s.observable(x))
    }
    fn observable_gradient(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, s, s.observable_gradient(x, out))
    }
    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        delegate!(self, s, s.parametrized_field(x, gamma, out))
    }
}

/// Wrapper shifting the observable by a constant (response invariance
/// checks: a constant shift must leave both contributions unchanged).
pub struct ShiftedObservable<S>(pub S, pub f64);

impl<S: FlowSystem> FlowSystem for ShiftedObservable<S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn unstable_dim(&self) -> usize {
        self.0.unstable_dim()
    }
    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        self.0.base_field(x, out)
    }
    fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
        self.0.base_jacobian(x, out)
    }
    fn base_hessian_contract(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        self.0.base_hessian_contract(x, a, b, out)
    }
    fn perturbation_field(&self, x: &[f64], out: &mut [f64]) {
        self.0.perturbation_field(x, out)
    }
    fn perturbation_jacobian(&self, x: &[f64], out: &mut Mat) {
        self.0.perturbation_jacobian(x, out)
    }
    fn observable(&self, x: &[f64]) -> f64 {
        self.0.observable(x) + self.1
    }
    fn observable_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.0.observable_gradient(x, out)
    }
    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.0.parametrized_field(x, gamma, out)
    }
}

/// Wrapper scaling the perturbation field (linearity checks: all
/// contributions must scale with it).
pub struct ScaledPerturbation<S>(pub S, pub f64);

impl<S: FlowSystem> FlowSystem for ScaledPerturbation<S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn unstable_dim(&self) -> usize {
        self.0.unstable_dim()
    }
    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        self.0.base_field(x, out)
    }
    fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
        self.0.base_jacobian(x, out)
    }
    fn base_hessian_contract(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        self.0.base_hessian_contract(x, a, b, out)
    }
    fn perturbation_field(&self, x: &[f64], out: &mut [f64]) {
        self.0.perturbation_field(x, out);
        for v in out.iter_mut() {
            *v *= self.1;
        }
    }
    fn perturbation_jacobian(&self, x: &[f64], out: &mut Mat) {
        self.0.perturbation_jacobian(x, out);
        out.scale(self.1);
    }
    fn observable(&self, x: &[f64]) -> f64 {
        self.0.observable(x)
    }
    fn observable_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.0.observable_gradient(x, out)
    }
    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.0.parametrized_field(x, gamma * self.1, out)
    }
}

fn take_param(
    params: &BTreeMap<String, f64>,
    seen: &mut Vec<String>,
    key: &str,
    default: f64,
) -> Result<f64> {
    seen.push(key.to_string());
    match params.get(key) {
        Some(&v) if v.is_finite() => Ok(v),
        Some(_) => Err(Error::InvalidParameter { name: key.into(), reason: "not finite".into() }),
        None => Ok(default),
    }
}

fn reject_unknown(params: &BTreeMap<String, f64>, seen: &[String]) -> Result<()> {
    for key in params.keys() {
        if !seen.iter().any(|s| s == key) {
            return Err(Error::InvalidParameter {
                name: key.clone(),
                reason: "unknown parameter for this system".into(),
            });
        }
    }
    Ok(())
}

/// Construct a builtin system by name with a key/value parameter map.
/// Missing parameters take their standard defaults; unknown names or keys
/// are rejected.
pub fn builtin_system(name: &str, params: &BTreeMap<String, f64>) -> Result<BuiltinSystem> {
    let mut seen = Vec::new();
    match name {
        "lorenz63" => {
            let sigma = take_param(params, &mut seen, "sigma", 10.0)?;
            let beta = take_param(params, &mut seen, "beta", 8.0 / 3.0)?;
            let r = take_param(params, &mut seen, "r", 28.0)?;
            reject_unknown(params, &seen)?;
            if sigma <= 0.0 || beta <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "sigma/beta".into(),
                    reason: "must be positive".into(),
                });
            }
            Ok(BuiltinSystem::Lorenz63(Lorenz63 { sigma, beta, r }))
        }
        "hopf_cycle" => {
            let mu = take_param(params, &mut seen, "mu", 1.0)?;
            let omega0 = take_param(params, &mut seen, "omega0", 1.0)?;
            reject_unknown(params, &seen)?;
            if mu <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "mu".into(),
                    reason: "limit cycle requires mu > 0".into(),
                });
            }
            Ok(BuiltinSystem::HopfCycle(HopfCycle { mu, omega0 }))
        }
        "rotation_probe" => {
            let omega = take_param(params, &mut seen, "omega", 1.0)?;
            let decay = take_param(params, &mut seen, "decay", 1.0)?;
            reject_unknown(params, &seen)?;
            Ok(BuiltinSystem::RotationProbe(RotationProbe { omega, decay }))
        }
        _ => Err(Error::UnknownSystem { name: name.into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;

    pub(crate) struct ZeroField;

    impl FlowSystem for ZeroField {
        fn dim(&self) -> usize {
            3
        }
        fn unstable_dim(&self) -> usize {
            0
        }
        fn base_field(&self, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn base_jacobian(&self, _x: &[f64], out: &mut Mat) {
            out.data_mut().fill(0.0);
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
        fn observable(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn observable_gradient(&self, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    /// x' = x^2 blows up in finite time from x0 = 1.
    struct Blowup;

    impl FlowSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn unstable_dim(&self) -> usize {
            0
        }
        fn base_field(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0];
        }
        fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
            out[(0, 0)] = 2.0 * x[0];
        }
        fn base_hessian_contract(&self, _x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * a[0] * b[0];
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
        }
    }

    #[test]
    fn zero_field_is_fixed() {
        let x = flow_step(&ZeroField, &[0.3, -1.0, 2.0], 0.1).unwrap();
        assert_eq!(x, vec![0.3, -1.0, 2.0]);
        let orbit = evolve_orbit(&ZeroField, &[0.3, -1.0, 2.0], 3, 0.1, 0).unwrap();
        assert_eq!(orbit.len(), 4);
        for k in 0..4 {
            assert_eq!(orbit.state(k), &[0.3, -1.0, 2.0]);
        }
    }

    #[test]
    fn rotation_quarter_turn() {
        let sys = RotationProbe { omega: 1.0, decay: 0.0 };
        let mut x = vec![1.0, 0.0, 0.0];
        let n = 1571; // pi/2 in steps of ~1e-3
        let dt = core::f64::consts::FRAC_PI_2 / n as f64;
        for _ in 0..n {
            x = flow_step(&sys, &x, dt).unwrap();
        }
        assert!((x[0]).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "got {x:?}");
    }

    #[test]
    fn blowup_reports_step() {
        let err = evolve_orbit(&Blowup, &[1.0], 10_000, 0.1, 0).unwrap_err();
        match err {
            Error::IntegrationDiverged { step } => assert!(step > 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reintegration_is_bit_exact() {
        let sys = Lorenz63::default();
        let orbit = evolve_orbit(&sys, &[1.0, 1.0, 1.0], 500, 0.01, 100).unwrap();
        for k in 0..orbit.n_steps() {
            let re = flow_step(&sys, orbit.state(k), orbit.dt()).unwrap();
            assert_eq!(&re[..], orbit.state(k + 1), "mismatch at step {k}");
        }
    }

    #[test]
    fn lorenz_jacobian_matches_fd() {
        let sys = Lorenz63::default();
        let orbit = evolve_orbit(&sys, &[1.0, 1.0, 1.0], 2000, 0.01, 1000).unwrap();
        let h = 1e-5;
        let mut j = Mat::zeros(3, 3);
        for k in (0..2000).step_by(100) {
            let x = orbit.state(k);
            sys.base_jacobian(x, &mut j);
            for c in 0..3 {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += h;
                xm[c] -= h;
                let mut fp = vec![0.0; 3];
                let mut fm = vec![0.0; 3];
                sys.base_field(&xp, &mut fp);
                sys.base_field(&xm, &mut fm);
                for r in 0..3 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((j[(r, c)] - fd).abs() < 1e-6, "J[{r}{c}]={} fd={}", j[(r, c)], fd);
                }
            }
        }
    }

    #[test]
    fn hessian_is_symmetric_and_matches_jacobian_fd() {
        let sys = Lorenz63::default();
        let x = [0.7, -1.3, 11.0];
        let a = [0.3, -0.2, 0.9];
        let b = [-1.1, 0.4, 0.25];
        let mut hab = vec![0.0; 3];
        let mut hba = vec![0.0; 3];
        sys.base_hessian_contract(&x, &a, &b, &mut hab);
        sys.base_hessian_contract(&x, &b, &a, &mut hba);
        for i in 0..3 {
            assert!((hab[i] - hba[i]).abs() <= 1e-10 * norm2(&a) * norm2(&b));
        }
        // H(a, b) == central difference of J(x) b along a.
        let h = 1e-5;
        let mut jp = Mat::zeros(3, 3);
        let mut jm = Mat::zeros(3, 3);
        let xp: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| xi + h * ai).collect();
        let xm: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| xi - h * ai).collect();
        sys.base_jacobian(&xp, &mut jp);
        sys.base_jacobian(&xm, &mut jm);
        let mut jb_p = vec![0.0; 3];
        let mut jb_m = vec![0.0; 3];
        jp.matvec(&b, &mut jb_p);
        jm.matvec(&b, &mut jb_m);
        for i in 0..3 {
            let fd = (jb_p[i] - jb_m[i]) / (2.0 * h);
            assert!((hab[i] - fd).abs() < 1e-8, "H{i}={} fd={}", hab[i], fd);
        }
    }

    #[test]
    fn builtin_factory_validates() {
        let mut p = BTreeMap::new();
        assert!(builtin_system("lorenz63", &p).is_ok());
        p.insert("nope".to_string(), 1.0);
        assert!(matches!(
            builtin_system("lorenz63", &p),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            builtin_system("lorentz", &BTreeMap::new()),
            Err(Error::UnknownSystem { .. })
        ));
        let mut p = BTreeMap::new();
        p.insert("mu".to_string(), -1.0);
        assert!(builtin_system("hopf_cycle", &p).is_err());
    }

    #[test]
    fn hopf_settles_on_circle() {
        let sys = HopfCycle::default();
        let orbit = evolve_orbit(&sys, &[2.0, 0.0], 1000, 0.01, 10_000).unwrap();
        for k in 0..orbit.len() {
            let s = orbit.state(k);
            let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-6, "r={r} at {k}");
        }
    }

    #[test]
    fn propagator_matches_flow_map_fd() {
        let sys = Lorenz63::default();
        let x = [2.0, 1.5, 20.0];
        let dt = 0.01;
        let (x1, phi) = flow_propagator(&sys, &x, dt);
        assert_eq!(&x1[..], &flow_step(&sys, &x, dt).unwrap()[..]);
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            let fp = flow_step(&sys, &xp, dt).unwrap();
            let fm = flow_step(&sys, &xm, dt).unwrap();
            for r in 0..3 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!(
                    (phi[(r, c)] - fd).abs() < 1e-7,
                    "phi[{r}{c}]={} fd={fd}",
                    phi[(r, c)]
                );
            }
        }
    }
}
