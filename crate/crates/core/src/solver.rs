//! Pseudospectral solver for the 2D isentropic Euler system in
//! nonconservative form, `U_t + A(U) U_x + B(U) U_y = 0`, `U = (rho, u, v, h)`:
//!
//! ```text
//! rho_t + u rho_x + v rho_y + (rho0+rho)(u_x + v_y)        = 0
//! u_t   + u u_x + v u_y + (h0+h)/(rho0+rho) rho_x + h_x     = 0
//! v_t   + u v_x + v v_y + (h0+h)/(rho0+rho) rho_y + h_y     = 0
//! h_t   + u h_x + v h_y + (gamma-1)(h0+h)(u_x + v_y)        = 0
//! ```
//!
//! Derivatives are spectral; products and the rational coefficient are
//! pointwise in physical space. With dealiasing on, the state is kept inside
//! the two-thirds band and every right-hand side is filtered back into it.
//! Two real fields share one complex transform (`a + i b`), since every
//! multiplier used here maps real fields to real fields.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::spectral::{Axis, Grid2D, SpectralField};
use crate::state::{GasConstants, GuardMargins, PointState, StateVector};

pub type Matrix4 = [[f64; 4]; 4];

/// Four physical component arrays `(rho, u, v, h)`.
pub type Fields = [Vec<f64>; 4];

fn zeros_fields(len: usize) -> Fields {
    std::array::from_fn(|_| vec![0.0; len])
}

fn state_to_fields(u: &StateVector) -> Fields {
    [u.rho.physical().to_vec(), u.u.physical().to_vec(), u.v.physical().to_vec(), u.h.physical().to_vec()]
}

fn fields_to_state(grid: &Grid2D, f: &Fields, c: GasConstants) -> StateVector {
    let mk = |v: &Vec<f64>, tag: &str| SpectralField::from_physical(grid, v.clone()).expect("grid-sized").with_tag(tag);
    StateVector {
        rho: mk(&f[0], "rho"),
        u: mk(&f[1], "u"),
        v: mk(&f[2], "v"),
        h: mk(&f[3], "h"),
        constants: c,
    }
}

/// `A(U)` and `B(U)` at one point.
pub fn flux_matrices(p: &PointState, c: &GasConstants, m: &GuardMargins) -> Result<(Matrix4, Matrix4)> {
    p.check_margin(c, m)?;
    let r = c.rho0 + p.rho;
    let e = c.h0 + p.h;
    let g1 = (c.gamma - 1.0) * e;
    let a = [
        [p.u, r, 0.0, 0.0],
        [e / r, p.u, 0.0, 1.0],
        [0.0, 0.0, p.u, 0.0],
        [0.0, g1, 0.0, p.u],
    ];
    let b = [
        [p.v, 0.0, r, 0.0],
        [0.0, p.v, 0.0, 0.0],
        [e / r, 0.0, p.v, 1.0],
        [0.0, 0.0, g1, p.v],
    ];
    Ok((a, b))
}

/// Symmetrizer `A0 = diag((h0+h)/(rho0+rho), rho0+rho, rho0+rho,
/// (rho0+rho)/((gamma-1)(h0+h)))` with the symmetric products `A1 = A0 A`
/// and `B1 = A0 B` written out entrywise.
pub fn symmetrizer(p: &PointState, c: &GasConstants, m: &GuardMargins) -> Result<(Matrix4, Matrix4, Matrix4)> {
    p.check_margin(c, m)?;
    let r = c.rho0 + p.rho;
    let e = c.h0 + p.h;
    let g = c.gamma - 1.0;
    let mut a0 = [[0.0; 4]; 4];
    a0[0][0] = e / r;
    a0[1][1] = r;
    a0[2][2] = r;
    a0[3][3] = r / (g * e);
    let a1 = [
        [e * p.u / r, e, 0.0, 0.0],
        [e, r * p.u, 0.0, r],
        [0.0, 0.0, r * p.u, 0.0],
        [0.0, r, 0.0, r * p.u / (g * e)],
    ];
    let b1 = [
        [e * p.v / r, 0.0, e, 0.0],
        [0.0, r * p.v, 0.0, 0.0],
        [e, 0.0, r * p.v, r],
        [0.0, 0.0, r, r * p.v / (g * e)],
    ];
    Ok((a0, a1, b1))
}

pub fn mat_mul(a: &Matrix4, b: &Matrix4) -> Matrix4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Spectral derivative and filtering kernels on one grid, with reusable
/// buffers.
pub struct SpectralOps {
    grid: Grid2D,
    kx: Vec<f64>,
    ky: Vec<f64>,
    keep: Vec<bool>,
    z: [Vec<Complex64>; 2],
    w: Vec<Complex64>,
    scratch: Vec<Complex64>,
    /// `d/dx` of each component.
    pub dx: Fields,
    /// `d/dy` of each component.
    pub dy: Fields,
}

impl SpectralOps {
    pub fn new(grid: &Grid2D) -> Self {
        let odd = |g: &crate::spectral::Grid1D| -> Vec<f64> {
            let nyq = g.nyquist_index();
            g.wavenumbers().iter().enumerate().map(|(j, k)| if j == nyq { 0.0 } else { *k }).collect()
        };
        let mx = grid.dealias_mask(Axis::X);
        let my = grid.dealias_mask(Axis::Y);
        let ny = grid.ny();
        let keep = (0..grid.len()).map(|i| mx[i / ny] && my[i % ny]).collect();
        let n = grid.len();
        Self {
            grid: grid.clone(),
            kx: odd(grid.x_axis()),
            ky: odd(grid.y_axis()),
            keep,
            z: [vec![Complex64::default(); n], vec![Complex64::default(); n]],
            w: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); n],
            dx: zeros_fields(n),
            dy: zeros_fields(n),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn pack(a: &[f64], b: &[f64], z: &mut [Complex64]) {
        for ((zi, ai), bi) in z.iter_mut().zip(a).zip(b) {
            *zi = Complex64::new(*ai, *bi);
        }
    }

    /// Fills [`Self::dx`] and [`Self::dy`] for all four components.
    pub fn gradients(&mut self, f: &Fields) {
        let ny = self.grid.ny();
        for pair in 0..2 {
            let (a, b) = (2 * pair, 2 * pair + 1);
            Self::pack(&f[a], &f[b], &mut self.z[pair]);
            self.grid.forward_complex(&mut self.z[pair], &mut self.scratch);
            for axis in [Axis::X, Axis::Y] {
                let z = &self.z[pair];
                match axis {
                    Axis::X => {
                        for (idx, (wi, zi)) in self.w.iter_mut().zip(z).enumerate() {
                            let k = self.kx[idx / ny];
                            *wi = Complex64::new(-k * zi.im, k * zi.re);
                        }
                    }
                    Axis::Y => {
                        for (idx, (wi, zi)) in self.w.iter_mut().zip(z).enumerate() {
                            let k = self.ky[idx % ny];
                            *wi = Complex64::new(-k * zi.im, k * zi.re);
                        }
                    }
                }
                self.grid.inverse_complex(&mut self.w, &mut self.scratch);
                let out = match axis {
                    Axis::X => &mut self.dx,
                    Axis::Y => &mut self.dy,
                };
                let (lo, hi) = out.split_at_mut(b);
                for ((ra, rb), wi) in lo[a].iter_mut().zip(hi[0].iter_mut()).zip(&self.w) {
                    *ra = wi.re;
                    *rb = wi.im;
                }
            }
        }
    }

    /// Applies the two-thirds filter to all four components in place.
    pub fn filter(&mut self, f: &mut Fields) {
        for pair in 0..2 {
            let (a, b) = (2 * pair, 2 * pair + 1);
            Self::pack(&f[a], &f[b], &mut self.w);
            self.grid.forward_complex(&mut self.w, &mut self.scratch);
            for (wi, k) in self.w.iter_mut().zip(&self.keep) {
                if !k {
                    *wi = Complex64::default();
                }
            }
            self.grid.inverse_complex(&mut self.w, &mut self.scratch);
            let (lo, hi) = f.split_at_mut(b);
            for ((ra, rb), wi) in lo[a].iter_mut().zip(hi[0].iter_mut()).zip(&self.w) {
                *ra = wi.re;
                *rb = wi.im;
            }
        }
    }

    /// Root-sum-square `H^s` norms of the four components for each index,
    /// from two packed transforms. `|A(k)|^2 + |B(k)|^2` summed against an
    /// even weight equals the sum of `|Z(k)|^2` against it.
    pub fn state_norms(&mut self, f: &Fields, indices: &[f64]) -> Vec<f64> {
        let (kx, ky) = (self.grid.kx().to_vec(), self.grid.ky().to_vec());
        let ny = self.grid.ny();
        let mut acc = vec![0.0; indices.len()];
        for pair in 0..2 {
            Self::pack(&f[2 * pair], &f[2 * pair + 1], &mut self.w);
            self.grid.forward_complex(&mut self.w, &mut self.scratch);
            for (idx, wi) in self.w.iter().enumerate() {
                let m = wi.norm_sqr();
                if m == 0.0 {
                    continue;
                }
                let base = 1.0 + kx[idx / ny] * kx[idx / ny] + ky[idx % ny] * ky[idx % ny];
                let lb = base.ln();
                for (a, s) in acc.iter_mut().zip(indices) {
                    *a += (s * lb).exp() * m;
                }
            }
        }
        let area = self.grid.area();
        acc.into_iter().map(|a| (area * a).sqrt()).collect()
    }
}

/// A time-dependent right-hand side `dU/dt = F(t, U)`.
pub trait Rhs {
    fn eval(&mut self, t: f64, u: &Fields, out: &mut Fields) -> Result<()>;
}

/// Right-hand side of the full nonlinear system.
pub struct EulerRhs {
    ops: SpectralOps,
    constants: GasConstants,
    guard: GuardMargins,
    dealias: bool,
    /// `max(|u_x|, |u_y|, |v_x|, |v_y|)` seen in the latest evaluation.
    pub last_gradient_max: f64,
}

impl EulerRhs {
    pub fn new(grid: &Grid2D, constants: GasConstants, guard: GuardMargins, dealias: bool) -> Self {
        Self { ops: SpectralOps::new(grid), constants, guard, dealias, last_gradient_max: 0.0 }
    }

    pub fn grid(&self) -> &Grid2D {
        self.ops.grid()
    }

    pub fn ops_mut(&mut self) -> &mut SpectralOps {
        &mut self.ops
    }

    fn check_margin(&self, u: &Fields) -> Result<()> {
        let c = &self.constants;
        let nx = self.ops.grid.nx();
        let (rf, hf) = (self.guard.rho_fraction * c.rho0, self.guard.h_fraction * c.h0);
        for (i, (r, h)) in u[0].iter().zip(&u[3]).enumerate() {
            let (rr, hh) = (c.rho0 + r, c.h0 + h);
            if !(rr >= rf && hh >= hf) {
                return Err(LabError::Margin(format!(
                    "at (ix={}, iy={}): rho0+rho = {rr}, h0+h = {hh} (floors {rf}, {hf})",
                    i % nx,
                    i / nx
                )));
            }
        }
        Ok(())
    }
}

impl Rhs for EulerRhs {
    fn eval(&mut self, _t: f64, u: &Fields, out: &mut Fields) -> Result<()> {
        self.check_margin(u)?;
        self.ops.gradients(u);
        let c = self.constants;
        let g1 = c.gamma - 1.0;
        let (dx, dy) = (&self.ops.dx, &self.ops.dy);
        let mut gmax = 0.0f64;
        let [o0, o1, o2, o3] = out;
        for i in 0..u[0].len() {
            let (rho, uu, vv, h) = (u[0][i], u[1][i], u[2][i], u[3][i]);
            let (rx, ux, vx, hx) = (dx[0][i], dx[1][i], dx[2][i], dx[3][i]);
            let (ry, uy, vy, hy) = (dy[0][i], dy[1][i], dy[2][i], dy[3][i]);
            let r = c.rho0 + rho;
            let e = c.h0 + h;
            let cr = e / r;
            let div = ux + vy;
            o0[i] = -(uu * rx + vv * ry + r * div);
            o1[i] = -(uu * ux + vv * uy + cr * rx + hx);
            o2[i] = -(uu * vx + vv * vy + cr * ry + hy);
            o3[i] = -(uu * hx + vv * hy + g1 * e * div);
            gmax = gmax.max(ux.abs()).max(uy.abs()).max(vx.abs()).max(vy.abs());
        }
        self.last_gradient_max = gmax;
        if self.dealias {
            self.ops.filter(out);
        }
        Ok(())
    }
}

/// Right-hand side linearized about a constant background state:
/// `-(A(Ubar) U_x + B(Ubar) U_y)`.
pub struct FrozenRhs {
    ops: SpectralOps,
    a: Matrix4,
    b: Matrix4,
}

impl FrozenRhs {
    pub fn new(grid: &Grid2D, background: &PointState, c: &GasConstants) -> Result<Self> {
        let (a, b) = flux_matrices(background, c, &GuardMargins::default())?;
        Ok(Self { ops: SpectralOps::new(grid), a, b })
    }
}

impl Rhs for FrozenRhs {
    fn eval(&mut self, _t: f64, u: &Fields, out: &mut Fields) -> Result<()> {
        self.ops.gradients(u);
        for (row, o) in out.iter_mut().enumerate() {
            for (i, oi) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for col in 0..4 {
                    acc += self.a[row][col] * self.ops.dx[col][i] + self.b[row][col] * self.ops.dy[col][i];
                }
                *oi = -acc;
            }
        }
        Ok(())
    }
}

/// Adds a prescribed source `q(t, x, y)` to the nonlinear right-hand side,
/// for manufactured-solution tests.
pub struct ForcedRhs<Q: Fn(f64, f64, f64) -> [f64; 4]> {
    inner: EulerRhs,
    source: Q,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl<Q: Fn(f64, f64, f64) -> [f64; 4]> ForcedRhs<Q> {
    pub fn new(inner: EulerRhs, source: Q) -> Self {
        let xs = inner.grid().x_axis().coords();
        let ys = inner.grid().y_axis().coords();
        Self { inner, source, xs, ys }
    }
}

impl<Q: Fn(f64, f64, f64) -> [f64; 4]> Rhs for ForcedRhs<Q> {
    fn eval(&mut self, t: f64, u: &Fields, out: &mut Fields) -> Result<()> {
        self.inner.eval(t, u, out)?;
        let nx = self.xs.len();
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let q = (self.source)(t, *x, *y);
                for c in 0..4 {
                    out[c][iy * nx + ix] += q[c];
                }
            }
        }
        Ok(())
    }
}

/// Classical four-stage Runge-Kutta with preallocated stages.
pub struct Rk4 {
    k: [Fields; 4],
    tmp: Fields,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self { k: std::array::from_fn(|_| zeros_fields(len)), tmp: zeros_fields(len) }
    }

    /// Advances `u` by `dt` (which may be negative) in place. On error `u` is
    /// left untouched.
    pub fn step<R: Rhs>(&mut self, rhs: &mut R, t: f64, u: &mut Fields, dt: f64) -> Result<()> {
        let stages = [(0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)];
        for s in 0..4 {
            let (ct, cu) = stages[s];
            if s == 0 {
                let (k, _) = self.k.split_at_mut(1);
                rhs.eval(t, u, &mut k[0])?;
            } else {
                for c in 0..4 {
                    for ((ti, ui), ki) in self.tmp[c].iter_mut().zip(&u[c]).zip(&self.k[s - 1][c]) {
                        *ti = ui + cu * dt * ki;
                    }
                }
                rhs.eval(t + ct * dt, &self.tmp, &mut self.k[s])?;
            }
        }
        let w = dt / 6.0;
        for c in 0..4 {
            let [k1, k2, k3, k4] = &self.k;
            for i in 0..u[c].len() {
                u[c][i] += w * (k1[c][i] + 2.0 * k2[c][i] + 2.0 * k3[c][i] + k4[c][i]);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    Fixed(f64),
    Cfl(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub time_step: TimeStep,
    pub t_end: f64,
    pub dealias: bool,
    pub guard: GuardMargins,
    /// Sobolev indices whose state norms are recorded at every step.
    pub monitor_indices: Vec<f64>,
    /// Times at which full states are retained in the trajectory.
    pub snapshot_times: Vec<f64>,
    /// Index used for the doubling time; must be one of the monitored ones.
    pub doubling_index: f64,
    pub stop_at_doubling: bool,
    /// Termination once `max |grad u|` exceeds this multiple of its
    /// initial value.
    pub blowup_gradient_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_step: TimeStep::Cfl(0.8),
            t_end: 1.0,
            dealias: true,
            guard: GuardMargins::default(),
            monitor_indices: vec![2.5],
            snapshot_times: Vec::new(),
            doubling_index: 2.5,
            stop_at_doubling: false,
            blowup_gradient_factor: 50.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match self.time_step {
            TimeStep::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => {
                return Err(LabError::InvalidParameter(format!("dt must be positive, got {dt}")))
            }
            TimeStep::Cfl(c) if !(c > 0.0 && c < 1.0) => {
                return Err(LabError::InvalidParameter(format!("cfl must lie in (0,1), got {c}")))
            }
            _ => {}
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(LabError::InvalidParameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !self.monitor_indices.contains(&self.doubling_index) {
            return Err(LabError::InvalidParameter(format!(
                "doubling index {} is not monitored",
                self.doubling_index
            )));
        }
        if self.snapshot_times.iter().any(|t| *t < 0.0 || *t > self.t_end) {
            return Err(LabError::InvalidParameter("snapshot times must lie in [0, t_end]".into()));
        }
        if self.snapshot_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidParameter("snapshot times must increase strictly".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Guard,
    Blowup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSample {
    pub t: f64,
    pub index: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<(f64, StateVector)>,
    pub norm_series: Vec<NormSample>,
    pub doubling_time: Option<f64>,
    pub terminated_reason: Termination,
    pub message: Option<String>,
    pub steps: usize,
    pub t_final: f64,
    /// Time steps actually taken, one per accepted step.
    pub dts: Vec<f64>,
}

/// Largest stable step for the given state:
/// `cfl * min(dx, dy) / (max(|u|+|v|) + sqrt(gamma * max(h0+h)))`.
pub fn cfl_time_step(grid: &Grid2D, u: &Fields, c: &GasConstants, cfl: f64) -> f64 {
    let adv = u[1].iter().zip(&u[2]).fold(0.0f64, |m, (a, b)| m.max(a.abs() + b.abs()));
    let hmax = u[3].iter().fold(f64::NEG_INFINITY, |m, h| m.max(*h)) + c.h0;
    let speed = adv + (c.gamma * hmax.max(0.0)).sqrt();
    cfl * grid.dx().min(grid.dy()) / speed
}

/// An integration in progress; advanced explicitly so that several runs can
/// proceed in lockstep.
pub struct Run {
    rhs: EulerRhs,
    rk: Rk4,
    cfg: SolverConfig,
    u: Fields,
    t: f64,
    initial_norm: f64,
    initial_gradient: f64,
    pub trajectory: Trajectory,
    stopped: bool,
}

impl Run {
    pub fn start(u0: &StateVector, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = u0.grid().clone();
        let mut rhs = EulerRhs::new(&grid, u0.constants, cfg.guard, cfg.dealias);
        let mut u = state_to_fields(u0);
        if cfg.dealias {
            rhs.ops.filter(&mut u);
        }
        let mut run = Self {
            rk: Rk4::new(grid.len()),
            rhs,
            cfg: cfg.clone(),
            u,
            t: 0.0,
            initial_norm: 0.0,
            initial_gradient: 0.0,
            trajectory: Trajectory {
                snapshots: Vec::new(),
                norm_series: Vec::new(),
                doubling_time: None,
                terminated_reason: Termination::Completed,
                message: None,
                steps: 0,
                t_final: 0.0,
                dts: Vec::new(),
            },
            stopped: false,
        };
        if let Err(e) = run.rhs.check_margin(&run.u) {
            run.stop(Termination::Guard, e.to_string());
            return Ok(run);
        }
        run.initial_gradient = gradient_max(&mut run.rhs.ops, &run.u);
        run.record_norms();
        run.initial_norm = run.norm_at(cfg.doubling_index).unwrap_or(0.0);
        run.maybe_snapshot();
        Ok(run)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn state(&self) -> StateVector {
        fields_to_state(self.rhs.grid(), &self.u, self.rhs.constants)
    }

    pub fn fields(&self) -> &Fields {
        &self.u
    }

    fn norm_at(&self, index: f64) -> Option<f64> {
        self.trajectory.norm_series.iter().rev().find(|s| s.index == index).map(|s| s.value)
    }

    fn record_norms(&mut self) {
        let norms = self.rhs.ops.state_norms(&self.u, &self.cfg.monitor_indices);
        for (index, value) in self.cfg.monitor_indices.iter().zip(norms) {
            self.trajectory.norm_series.push(NormSample { t: self.t, index: *index, value });
        }
    }

    fn maybe_snapshot(&mut self) {
        if self.cfg.snapshot_times.iter().any(|s| (s - self.t).abs() < 1e-12) {
            let st = self.state();
            self.trajectory.snapshots.push((self.t, st));
        }
    }

    fn stop(&mut self, reason: Termination, message: String) {
        self.stopped = true;
        self.trajectory.terminated_reason = reason;
        self.trajectory.message = Some(message);
        self.trajectory.t_final = self.t;
    }

    /// Advances to `target` (clamped to `t_end`), landing on it exactly.
    /// Returns whether the run is still active.
    pub fn advance_to(&mut self, target: f64) -> Result<bool> {
        let target = target.min(self.cfg.t_end);
        while !self.stopped && self.t < target - 1e-14 {
            let mut dt = match self.cfg.time_step {
                TimeStep::Fixed(dt) => dt,
                TimeStep::Cfl(c) => cfl_time_step(self.rhs.grid(), &self.u, &self.rhs.constants, c),
            };
            // Land exactly on the target and on any snapshot time in between.
            let next_stop = self
                .cfg
                .snapshot_times
                .iter()
                .copied()
                .filter(|s| *s > self.t + 1e-14)
                .fold(target, f64::min);
            if self.t + dt > next_stop - 1e-14 {
                dt = next_stop - self.t;
            }
            match self.rk.step(&mut self.rhs, self.t, &mut self.u, dt) {
                Ok(()) => {}
                Err(LabError::Margin(msg)) => {
                    self.stop(Termination::Guard, msg);
                    break;
                }
                Err(e) => return Err(e),
            }
            self.t = if (next_stop - (self.t + dt)).abs() < 1e-14 { next_stop } else { self.t + dt };
            self.trajectory.steps += 1;
            self.trajectory.dts.push(dt);
            self.trajectory.t_final = self.t;
            if self.u.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
                self.stop(Termination::Blowup, format!("non-finite state at t = {}", self.t));
                break;
            }
            if let Err(e) = self.rhs.check_margin(&self.u) {
                self.stop(Termination::Guard, e.to_string());
                break;
            }
            self.record_norms();
            self.maybe_snapshot();
            let now = self.norm_at(self.cfg.doubling_index).unwrap_or(0.0);
            if self.trajectory.doubling_time.is_none() && self.initial_norm > 0.0 && now > 2.0 * self.initial_norm {
                self.trajectory.doubling_time = Some(self.t);
                if self.cfg.stop_at_doubling {
                    self.stop(Termination::Completed, format!("norm doubled at t = {}", self.t));
                    break;
                }
            }
            let grad = self.rhs.last_gradient_max;
            if self.initial_gradient > 0.0 && grad > self.cfg.blowup_gradient_factor * self.initial_gradient {
                self.stop(
                    Termination::Blowup,
                    format!("gradient {grad} exceeds {} x initial at t = {}", self.cfg.blowup_gradient_factor, self.t),
                );
                break;
            }
        }
        if !self.stopped && self.t >= self.cfg.t_end - 1e-14 {
            self.stopped = true;
            self.trajectory.terminated_reason = Termination::Completed;
            self.trajectory.t_final = self.t;
        }
        Ok(!self.stopped || self.t < target - 1e-14)
    }

    pub fn finish(mut self) -> Result<Trajectory> {
        let end = self.cfg.t_end;
        self.advance_to(end)?;
        Ok(self.trajectory)
    }
}

fn gradient_max(ops: &mut SpectralOps, u: &Fields) -> f64 {
    ops.gradients(u);
    [&ops.dx[1], &ops.dy[1], &ops.dx[2], &ops.dy[2]]
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Integrates from `u0` until `t_end`, a guard trip or blow-up.
pub fn integrate(u0: &StateVector, cfg: &SolverConfig) -> Result<Trajectory> {
    Run::start(u0, cfg)?.finish()
}

/// Stateless helpers operating on [`StateVector`]s.
pub struct EulerSolver {
    rhs: EulerRhs,
    rk: Rk4,
}

impl EulerSolver {
    pub fn new(grid: &Grid2D, constants: GasConstants, guard: GuardMargins, dealias: bool) -> Self {
        Self { rhs: EulerRhs::new(grid, constants, guard, dealias), rk: Rk4::new(grid.len()) }
    }

    pub fn rhs(&mut self, u: &StateVector) -> Result<StateVector> {
        let f = state_to_fields(u);
        let mut out = zeros_fields(f[0].len());
        self.rhs.eval(0.0, &f, &mut out)?;
        Ok(fields_to_state(u.grid(), &out, u.constants))
    }

    /// One RK4 step; `dt < 0` integrates backwards (used for reversibility
    /// checks only).
    pub fn step_rk4(&mut self, u: &StateVector, dt: f64) -> Result<StateVector> {
        let mut f = state_to_fields(u);
        self.rk.step(&mut self.rhs, 0.0, &mut f, dt)?;
        let out = fields_to_state(u.grid(), &f, u.constants);
        out.check_margin(&self.rhs.guard)?;
        Ok(out)
    }
}

/// Manufactured solution: each component is a plane wave
/// `a sin(kx x + ky y + w t + phase)`, and the source that makes it exact is
/// assembled from the analytic derivatives.
#[derive(Clone, Debug)]
pub struct ManufacturedWaves {
    pub waves: [[f64; 5]; 4],
    pub constants: GasConstants,
}

impl ManufacturedWaves {
    /// A fixed set of waves of amplitude `a` on the `2 pi` torus.
    pub fn standard(a: f64, constants: GasConstants) -> Self {
        Self {
            waves: [
                [a, 1.0, 0.0, -1.0, 0.3],
                [a, 0.0, 1.0, 0.7, 1.1],
                [a, 1.0, 1.0, 0.4, 2.0],
                [a, 2.0, -1.0, -0.5, 0.7],
            ],
            constants,
        }
    }

    /// `(value, d/dt, d/dx, d/dy)` of every component.
    fn jet(&self, t: f64, x: f64, y: f64) -> [[f64; 4]; 4] {
        self.waves.map(|[a, kx, ky, w, ph]| {
            let (s, c) = (kx * x + ky * y + w * t + ph).sin_cos();
            [a * s, a * w * c, a * kx * c, a * ky * c]
        })
    }

    pub fn exact(&self, t: f64, x: f64, y: f64) -> [f64; 4] {
        self.jet(t, x, y).map(|j| j[0])
    }

    pub fn source(&self, t: f64, x: f64, y: f64) -> [f64; 4] {
        let c = self.constants;
        let [r, u, v, h] = self.jet(t, x, y);
        let (rr, e) = (c.rho0 + r[0], c.h0 + h[0]);
        let div = u[2] + v[3];
        [
            r[1] + u[0] * r[2] + v[0] * r[3] + rr * div,
            u[1] + u[0] * u[2] + v[0] * u[3] + e / rr * r[2] + h[2],
            v[1] + u[0] * v[2] + v[0] * v[3] + e / rr * r[3] + h[3],
            h[1] + u[0] * h[2] + v[0] * h[3] + (c.gamma - 1.0) * e * div,
        ]
    }

    pub fn sample(&self, grid: &Grid2D, t: f64) -> Fields {
        let (xs, ys) = (grid.x_axis().coords(), grid.y_axis().coords());
        let mut out = zeros_fields(grid.len());
        for (iy, y) in ys.iter().enumerate() {
            for (ix, x) in xs.iter().enumerate() {
                let e = self.exact(t, *x, *y);
                for k in 0..4 {
                    out[k][iy * xs.len() + ix] = e[k];
                }
            }
        }
        out
    }

    /// Max-norm error at `t_end` after fixed steps of each size in `dts`.
    pub fn errors(&self, grid: &Grid2D, t_end: f64, dts: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(dts.len());
        let exact = self.sample(grid, t_end);
        for &dt in dts {
            let steps = (t_end / dt).round() as usize;
            let inner = EulerRhs::new(grid, self.constants, GuardMargins::default(), false);
            let me = self.clone();
            let mut rhs = ForcedRhs::new(inner, move |t, x, y| me.source(t, x, y));
            let mut rk = Rk4::new(grid.len());
            let mut u = self.sample(grid, 0.0);
            for k in 0..steps {
                rk.step(&mut rhs, k as f64 * dt, &mut u, dt)?;
            }
            let err = (0..4)
                .flat_map(|c| u[c].iter().zip(&exact[c]).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
                .fold(0.0, f64::max);
            out.push(err);
        }
        Ok(out)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"HILOSNAP";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes `(time, state)` as a flat little-endian binary file: magic,
/// version, nx, ny, lx, ly, time, rho0, h0, gamma, then the four row-major
/// component arrays in the order rho, u, v, h.
pub fn write_snapshot(path: &Path, t: f64, u: &StateVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let g = u.grid();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(g.nx() as u32).to_le_bytes())?;
    w.write_all(&(g.ny() as u32).to_le_bytes())?;
    for v in [g.lx(), g.ly(), t, u.constants.rho0, u.constants.h0, u.constants.gamma] {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in u.components() {
        for v in c.physical() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(f64, StateVector)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(LabError::Report("not a snapshot file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut u32_ = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let version = u32_(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(LabError::Report(format!("unsupported snapshot version {version}")));
    }
    let nx = u32_(&mut r)? as usize;
    let ny = u32_(&mut r)? as usize;
    let mut f64_ = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let (lx, ly, t) = (f64_(&mut r)?, f64_(&mut r)?, f64_(&mut r)?);
    let c = GasConstants::new(f64_(&mut r)?, f64_(&mut r)?, f64_(&mut r)?)?;
    let grid = Grid2D::new(nx, ny, lx, ly)?;
    let mut comps = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut v = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            v.push(f64_(&mut r)?);
        }
        comps.push(SpectralField::from_physical(&grid, v)?);
    }
    let h = comps.pop().expect("four components");
    let v = comps.pop().expect("four components");
    let u = comps.pop().expect("four components");
    let rho = comps.pop().expect("four components");
    Ok((t, StateVector::new(rho, u, v, h, c)?))
}

/// Writes a norm series as CSV with columns `t, index, value`.
pub fn write_norm_series(path: &Path, series: &[NormSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in series {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
