//! High/low-frequency approximate solutions `U = (0, u1+u2, v1+v2, 0)`.
//!
//! With `a = n^delta`, `x' = x/a`, `y' = y/a` and `theta = n*y + omega*t`:
//!
//! ```text
//! S  = psi(x') psi(y') sin(theta)
//! u2 =  n^(-delta-s-1) dS/dy = n^(-2delta-s-1) psi(x') psi'(y') sin + n^(-delta-s) psi(x') psi(y') cos
//! v2 = -n^(-delta-s-1) dS/dx = -n^(-2delta-s-1) psi'(x') psi(y') sin
//! u1 =  omega/n phi1(x')  phi2'(y')
//! v1 = -omega/n phi1'(x') phi2(y')
//! ```
//!
//! Every field and derivative is assembled from closed-form 1D factors as a
//! [`SeparableField`]; nothing is differentiated numerically.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cutoffs::{sample_axis, CutoffFamily, Profile};
use crate::error::{LabError, Result};
use crate::separable::{hs_norms, SeparableField};
use crate::spectral::{Axis, Grid2D};
use crate::state::{GasConstants, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    pub n: u32,
    pub delta: f64,
    pub omega: f64,
    pub s: f64,
    pub sigma: f64,
}

impl AnsatzParams {
    pub fn new(n: u32, delta: f64, omega: f64, s: f64, sigma: f64) -> Result<Self> {
        let p = Self { n, delta, omega, s, sigma };
        p.validate()?;
        Ok(p)
    }

    /// Open interval `(max{1, s-3/2+delta}, s-1)` admissible for `sigma`.
    pub fn sigma_window(s: f64, delta: f64) -> (f64, f64) {
        (1f64.max(s - 1.5 + delta), s - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(LabError::InvalidParameter(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LabError::InvalidParameter(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.omega != 1.0 && self.omega != -1.0 {
            return Err(LabError::InvalidParameter(format!("omega must be +1 or -1, got {}", self.omega)));
        }
        if !(self.s > 2.0 && self.s.is_finite()) {
            return Err(LabError::InvalidParameter(format!("s must exceed 2, got {}", self.s)));
        }
        let (lo, hi) = Self::sigma_window(self.s, self.delta);
        if !(lo < self.sigma && self.sigma < hi) {
            return Err(LabError::InvalidParameter(format!(
                "sigma = {} violates the window ({lo}, {hi})",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn with_n(self, n: u32) -> Self {
        Self { n, ..self }
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    /// Envelope width `n^delta`.
    pub fn envelope_width(&self) -> f64 {
        self.nf().powf(self.delta)
    }

    /// `tau = floor(s) + 1`.
    pub fn tau(&self) -> f64 {
        self.s.floor() + 1.0
    }
}

impl Default for AnsatzParams {
    fn default() -> Self {
        Self { n: 16, delta: 0.25, omega: 1.0, s: 2.5, sigma: 1.45 }
    }
}

/// Sizing rule for grids on which the ansatz is sampled and analysed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzGridRule {
    /// Points per wavelength `2 pi / n` along y.
    pub points_per_wavelength: f64,
    /// Domain half-width beyond the scaled cutoff extent.
    pub margin: f64,
    /// Envelope bandwidth to resolve, in scaled wavenumbers.
    pub envelope_wavenumber: f64,
}

impl Default for AnsatzGridRule {
    fn default() -> Self {
        Self { points_per_wavelength: 8.0, margin: 4.0, envelope_wavenumber: 128.0 }
    }
}

fn pow2_at_least(x: f64) -> usize {
    (x.ceil().max(16.0) as usize).next_power_of_two()
}

impl AnsatzGridRule {
    pub fn half_width(&self, p: &AnsatzParams, c: &CutoffFamily) -> f64 {
        c.extent() * p.envelope_width() + self.margin
    }

    /// Square domain of half-width `extent * n^delta + margin`; `ny` is the
    /// smallest power of two meeting the wavelength and envelope-band
    /// requirements, `nx` the smallest resolving the envelope band.
    pub fn grid(&self, p: &AnsatzParams, c: &CutoffFamily) -> Result<Grid2D> {
        let l = self.half_width(p, c);
        let kenv = self.envelope_wavenumber / p.envelope_width();
        let pi = std::f64::consts::PI;
        let ny = pow2_at_least((l * self.points_per_wavelength * p.nf() / pi).max(2.0 * l * (p.nf() + kenv) / pi));
        let nx = pow2_at_least(2.0 * l * kenv / pi);
        Grid2D::new(nx, ny, l, l)
    }
}

type Factors = [Arc<Vec<f64>>; 3];

/// Closed-form first derivatives of the four velocity pieces.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub u1x: SeparableField,
    pub u1y: SeparableField,
    pub v1x: SeparableField,
    pub v1y: SeparableField,
    pub u2x: SeparableField,
    pub u2y: SeparableField,
    pub v2x: SeparableField,
    pub v2y: SeparableField,
}

/// The ansatz for one parameter set on one grid, with cached cutoff samples.
#[derive(Clone, Debug)]
pub struct Ansatz {
    params: AnsatzParams,
    cutoffs: CutoffFamily,
    grid: Grid2D,
    // psi, psi', psi'' and phi1, phi1', phi1'', along x.
    psi_x: Factors,
    phi1_x: Factors,
    // psi, psi', psi'' and phi2, phi2', phi2'', along y.
    psi_y: Factors,
    phi2_y: Factors,
}

fn factors(f: &dyn Profile, grid: &crate::spectral::Grid1D, scale: f64) -> Result<Factors> {
    Ok([
        Arc::new(sample_axis(f, grid, scale, 0)?),
        Arc::new(sample_axis(f, grid, scale, 1)?),
        Arc::new(sample_axis(f, grid, scale, 2)?),
    ])
}

fn times(a: &[f64], b: &[f64]) -> Arc<Vec<f64>> {
    Arc::new(a.iter().zip(b).map(|(p, q)| p * q).collect())
}

impl Ansatz {
    /// Requires at least 8 points per wavelength of the carrier.
    pub fn new(params: AnsatzParams, cutoffs: &CutoffFamily, grid: &Grid2D) -> Result<Self> {
        Self::with_resolution(params, cutoffs, grid, 8.0)
    }

    /// As [`Ansatz::new`] with a caller-chosen points-per-wavelength floor.
    pub fn with_resolution(
        params: AnsatzParams,
        cutoffs: &CutoffFamily,
        grid: &Grid2D,
        points_per_wavelength: f64,
    ) -> Result<Self> {
        params.validate()?;
        let required = 2.0 * std::f64::consts::PI / (points_per_wavelength * params.nf());
        if grid.dy() > required * (1.0 + 1e-12) {
            return Err(LabError::Resolution { n: params.nf(), spacing: grid.dy(), required });
        }
        let scale = 1.0 / params.envelope_width();
        let psi_x = factors(&cutoffs.psi, grid.x_axis(), scale)?;
        let phi1_x = factors(&cutoffs.phi1, grid.x_axis(), scale)?;
        let psi_y = factors(&cutoffs.psi, grid.y_axis(), scale)?;
        let phi2_y = factors(&cutoffs.phi2, grid.y_axis(), scale)?;
        Ok(Self { params, cutoffs: *cutoffs, grid: grid.clone(), psi_x, phi1_x, psi_y, phi2_y })
    }

    pub fn params(&self) -> &AnsatzParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn cutoffs(&self) -> &CutoffFamily {
        &self.cutoffs
    }

    fn outer(&self, coef: f64, x: &Arc<Vec<f64>>, y: Arc<Vec<f64>>) -> SeparableField {
        SeparableField::outer(&self.grid, coef, x.clone(), y).expect("factors sampled on this grid")
    }

    /// `(sin(theta), cos(theta))` along y.
    fn carrier(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (n, w) = (self.params.nf(), self.params.omega);
        self.grid.y_axis().coords().into_iter().map(|y| (n * y + w * t).sin_cos()).unzip()
    }

    fn np(&self, e: f64) -> f64 {
        self.params.nf().powf(e)
    }

    fn d(&self) -> f64 {
        self.params.delta
    }

    fn s(&self) -> f64 {
        self.params.s
    }

    pub fn stream_function(&self, t: f64) -> SeparableField {
        let (sin, _) = self.carrier(t);
        self.outer(1.0, &self.psi_x[0], times(&self.psi_y[0], &sin))
    }

    pub fn high_freq_velocity(&self, t: f64) -> (SeparableField, SeparableField) {
        let (sin, cos) = self.carrier(t);
        let (d, s) = (self.d(), self.s());
        let u2 = self
            .outer(self.np(-2.0 * d - s - 1.0), &self.psi_x[0], times(&self.psi_y[1], &sin))
            .add(&self.outer(self.np(-d - s), &self.psi_x[0], times(&self.psi_y[0], &cos)))
            .expect("same grid");
        let v2 = self.outer(-self.np(-2.0 * d - s - 1.0), &self.psi_x[1], times(&self.psi_y[0], &sin));
        (u2, v2)
    }

    pub fn low_freq_velocity(&self) -> (SeparableField, SeparableField) {
        let w = self.params.omega / self.params.nf();
        let u1 = self.outer(w, &self.phi1_x[0], self.phi2_y[1].clone());
        let v1 = self.outer(-w, &self.phi1_x[1], self.phi2_y[0].clone());
        (u1, v1)
    }

    pub fn velocity(&self, t: f64) -> (SeparableField, SeparableField) {
        let (u1, v1) = self.low_freq_velocity();
        let (u2, v2) = self.high_freq_velocity(t);
        (u1.add(&u2).expect("same grid"), v1.add(&v2).expect("same grid"))
    }

    /// Closed-form `(du/dt, dv/dt)`; only the carrier depends on time.
    pub fn time_derivative(&self, t: f64) -> (SeparableField, SeparableField) {
        let (sin, cos) = self.carrier(t);
        let (d, s, w) = (self.d(), self.s(), self.params.omega);
        let ut = self
            .outer(w * self.np(-2.0 * d - s - 1.0), &self.psi_x[0], times(&self.psi_y[1], &cos))
            .add(&self.outer(-w * self.np(-d - s), &self.psi_x[0], times(&self.psi_y[0], &sin)))
            .expect("same grid");
        let vt = self.outer(-w * self.np(-2.0 * d - s - 1.0), &self.psi_x[1], times(&self.psi_y[0], &cos));
        (ut, vt)
    }

    pub fn gradients(&self, t: f64) -> Gradients {
        let (sin, cos) = self.carrier(t);
        let (d, s, w, n) = (self.d(), self.s(), self.params.omega, self.params.nf());
        let c = w / n * self.np(-d);
        let e3 = self.np(-3.0 * d - s - 1.0);
        let e2 = self.np(-2.0 * d - s);
        let e1 = self.np(1.0 - d - s);
        let add = |a: SeparableField, b: SeparableField| a.add(&b).expect("same grid");
        let py = &self.psi_y;
        Gradients {
            u1x: self.outer(c, &self.phi1_x[1], self.phi2_y[1].clone()),
            u1y: self.outer(c, &self.phi1_x[0], self.phi2_y[2].clone()),
            v1x: self.outer(-c, &self.phi1_x[2], self.phi2_y[0].clone()),
            v1y: self.outer(-c, &self.phi1_x[1], self.phi2_y[1].clone()),
            u2x: add(
                self.outer(e3, &self.psi_x[1], times(&py[1], &sin)),
                self.outer(e2, &self.psi_x[1], times(&py[0], &cos)),
            ),
            u2y: add(
                add(
                    self.outer(e3, &self.psi_x[0], times(&py[2], &sin)),
                    self.outer(2.0 * e2, &self.psi_x[0], times(&py[1], &cos)),
                ),
                self.outer(-e1, &self.psi_x[0], times(&py[0], &sin)),
            ),
            v2x: self.outer(-e3, &self.psi_x[2], times(&py[0], &sin)),
            v2y: add(
                self.outer(-e3, &self.psi_x[1], times(&py[1], &sin)),
                self.outer(-e2, &self.psi_x[1], times(&py[0], &cos)),
            ),
        }
    }

    /// Dense state `(0, u1+u2, v1+v2, 0)` at time `t`.
    pub fn approximate_state(&self, t: f64, constants: GasConstants) -> StateVector {
        let (u, v) = self.velocity(t);
        let mut st = StateVector::zeros(&self.grid, constants);
        st.u = u.to_dense().with_tag("u");
        st.v = v.to_dense().with_tag("v");
        st
    }

    /// `n^(-delta-s) psi(x') psi(y') cos(n y)`, the normalizer of the
    /// separation ratio.
    pub fn packet_reference(&self) -> SeparableField {
        let (_, cos) = {
            let n = self.params.nf();
            let v: (Vec<f64>, Vec<f64>) =
                self.grid.y_axis().coords().into_iter().map(|y| (n * y).sin_cos()).unzip();
            v
        };
        self.outer(self.np(-self.d() - self.s()), &self.psi_x[0], times(&self.psi_y[0], &cos))
    }

    /// `max |u_x + v_y| / max |u|` with spectral derivatives.
    pub fn divergence_ratio(&self, t: f64) -> Result<f64> {
        let (u, v) = self.velocity(t);
        let div = u.derivative(Axis::X, 1)?.add(&v.derivative(Axis::Y, 1)?)?;
        Ok(div.max_abs() / u.max_abs())
    }

    /// `H^s` norm of the state `(0, u, v, 0)` at time `t`.
    pub fn state_norm(&self, t: f64, s: f64) -> Result<f64> {
        let (u, v) = self.velocity(t);
        let nv = hs_norms(&[&u, &v], s)?;
        Ok(nv[0].hypot(nv[1]))
    }
}

/// `H^s` norm of a velocity pair `(u, v)` given as separable fields.
pub fn velocity_norm(u: &SeparableField, v: &SeparableField, s: f64) -> Result<f64> {
    let nv = hs_norms(&[u, v], s)?;
    Ok(nv[0].hypot(nv[1]))
}

/// `U^{+1,n}(t) - U^{-1,n}(t)` velocity components on a common grid.
pub fn pair_difference(
    plus: &Ansatz,
    minus: &Ansatz,
    t: f64,
) -> Result<(SeparableField, SeparableField)> {
    let (up, vp) = plus.velocity(t);
    let (um, vm) = minus.velocity(t);
    Ok((up.sub(&um)?, vp.sub(&vm)?))
}

fn default_ansatz(p: &AnsatzParams, g: &Grid2D) -> Result<Ansatz> {
    Ansatz::new(*p, &CutoffFamily::default(), g)
}

/// `S(x, y, t)` with the default cutoffs.
pub fn stream_function(p: &AnsatzParams, t: f64, g: &Grid2D) -> Result<SeparableField> {
    Ok(default_ansatz(p, g)?.stream_function(t))
}

pub fn high_freq_velocity(p: &AnsatzParams, t: f64, g: &Grid2D) -> Result<(SeparableField, SeparableField)> {
    Ok(default_ansatz(p, g)?.high_freq_velocity(t))
}

pub fn low_freq_velocity(p: &AnsatzParams, g: &Grid2D) -> Result<(SeparableField, SeparableField)> {
    Ok(default_ansatz(p, g)?.low_freq_velocity())
}

pub fn approximate_state(p: &AnsatzParams, t: f64, g: &Grid2D, c: GasConstants) -> Result<StateVector> {
    Ok(default_ansatz(p, g)?.approximate_state(t, c))
}

pub fn ansatz_time_derivative(
    p: &AnsatzParams,
    t: f64,
    g: &Grid2D,
) -> Result<(SeparableField, SeparableField)> {
    Ok(default_ansatz(p, g)?.time_derivative(t))
}
