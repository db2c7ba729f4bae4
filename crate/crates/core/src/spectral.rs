//! Periodic grids, discrete Fourier transforms, spectral differentiation, the
//! Bessel potential and two-thirds dealiasing.
//!
//! Conventions used everywhere in the crate:
//!
//! * an axis of half-width `l` with `n` points samples `x_j = -l + j*2l/n`;
//! * wavenumbers are `k = pi*m/l` for `m` in `-n/2 ..= n/2-1`, stored in
//!   natural FFT order (`m = j` for `j < n/2`, `m = j - n` otherwise);
//! * the forward transform carries the factor `1/(nx*ny)`, so coefficients are
//!   Fourier-series amplitudes and `area * sum |c_k|^2` equals the grid
//!   quadrature of `|f|^2` (Plancherel);
//! * 2D spectra are stored x-major (`jx*ny + jy`), physical samples row-major
//!   (`iy*nx + ix`).

use std::fmt;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Largest |s| accepted by [`SpectralField::bessel_potential`].
pub const BESSEL_EXPONENT_GUARD: f64 = 64.0;

/// Smallest admissible point count per axis.
pub const MIN_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Spectral symbol of `d^order/dx^order` at wavenumber `k`, with the Nyquist
/// mode removed for odd orders so real fields stay real.
pub fn derivative_symbol(k: f64, order: u32, is_nyquist: bool) -> Complex64 {
    match order {
        0 => Complex64::new(1.0, 0.0),
        _ if order % 2 == 1 && is_nyquist => Complex64::new(0.0, 0.0),
        _ => Complex64::new(0.0, k).powu(order),
    }
}

fn check_order(order: u32) -> Result<()> {
    if order == 1 || order == 2 {
        Ok(())
    } else {
        Err(LabError::UnsupportedOrder(order))
    }
}

/// One periodic axis together with its FFT plans.
#[derive(Clone)]
pub struct Grid1D {
    inner: Arc<Grid1DInner>,
}

struct Grid1DInner {
    n: usize,
    l: f64,
    k: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Grid1D {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < MIN_POINTS || !n.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!(
                "point count {n} must be a power of two and at least {MIN_POINTS}"
            )));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(LabError::InvalidGrid(format!("half-width {l} must be positive")));
        }
        let half = n as i64 / 2;
        let k = (0..n as i64)
            .map(|j| {
                let m = if j < half { j } else { j - n as i64 };
                std::f64::consts::PI * m as f64 / l
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Self { inner: Arc::new(Grid1DInner { n, l, k, fwd, inv }) })
    }

    pub fn len(&self) -> usize {
        self.inner.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.inner.l
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.inner.l / self.inner.n as f64
    }

    pub fn coord(&self, j: usize) -> f64 {
        -self.inner.l + j as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.inner.n).map(|j| self.coord(j)).collect()
    }

    /// Wavenumbers in natural FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.k
    }

    pub fn nyquist_index(&self) -> usize {
        self.inner.n / 2
    }

    /// Magnitude of the Nyquist wavenumber, `pi*(n/2)/l`.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI * (self.inner.n / 2) as f64 / self.inner.l
    }

    /// Normalized forward transform of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    /// Normalized forward transform of every consecutive length-`n` chunk.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.inner.fwd.process(buf);
        let scale = 1.0 / self.inner.n as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
    }

    /// Inverse of [`Grid1D::forward_in_place`], chunk-wise.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inner.inv.process(buf);
    }

    /// Real part of the inverse transform.
    pub fn inverse_real(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Spectral derivative of real samples (orders 0..=2; order 0 copies).
    pub fn differentiate(&self, values: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return values.to_vec();
        }
        let mut c = self.forward(values);
        let nyq = self.nyquist_index();
        for (j, cj) in c.iter_mut().enumerate() {
            *cj *= derivative_symbol(self.inner.k[j], order, j == nyq);
        }
        self.inverse_real(&c)
    }

    /// `||f||_{H^s}` of 1D samples with weight `(1+k^2)^s` and measure `2l`.
    pub fn hs_norm(&self, values: &[f64], s: f64) -> f64 {
        let c = self.forward(values);
        let sum: f64 = c
            .iter()
            .zip(&self.inner.k)
            .map(|(cj, k)| (1.0 + k * k).powf(s) * cj.norm_sqr())
            .sum();
        (2.0 * self.inner.l * sum).sqrt()
    }

    fn same_as(&self, other: &Grid1D) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n && self.inner.l == other.inner.l)
    }
}

impl fmt::Debug for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid1D({}@{})", self.inner.n, self.inner.l)
    }
}

/// Periodic grid on `[-lx, lx) x [-ly, ly)`.
#[derive(Clone)]
pub struct Grid2D {
    gx: Grid1D,
    gy: Grid1D,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Ok(Self { gx: Grid1D::new(nx, lx)?, gy: Grid1D::new(ny, ly)? })
    }

    pub fn nx(&self) -> usize {
        self.gx.len()
    }

    pub fn ny(&self) -> usize {
        self.gy.len()
    }

    pub fn lx(&self) -> f64 {
        self.gx.half_width()
    }

    pub fn ly(&self) -> f64 {
        self.gy.half_width()
    }

    pub fn dx(&self) -> f64 {
        self.gx.spacing()
    }

    pub fn dy(&self) -> f64 {
        self.gy.spacing()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Area of the periodic cell, `4*lx*ly`.
    pub fn area(&self) -> f64 {
        4.0 * self.lx() * self.ly()
    }

    pub fn x_axis(&self) -> &Grid1D {
        &self.gx
    }

    pub fn y_axis(&self) -> &Grid1D {
        &self.gy
    }

    pub fn axis(&self, axis: Axis) -> &Grid1D {
        match axis {
            Axis::X => &self.gx,
            Axis::Y => &self.gy,
        }
    }

    pub fn kx(&self) -> &[f64] {
        self.gx.wavenumbers()
    }

    pub fn ky(&self) -> &[f64] {
        self.gy.wavenumbers()
    }

    /// Human-readable identity used for provenance in norm estimates.
    pub fn id(&self) -> String {
        format!("{}x{}@[{},{}]", self.nx(), self.ny(), self.lx(), self.ly())
    }

    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.gx.same_as(&other.gx) && self.gy.same_as(&other.gy)
    }

    pub fn ensure_same(&self, other: &Grid2D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(LabError::GridMismatch { left: self.id(), right: other.id() })
        }
    }

    /// Forward transform of a complex row-major buffer into an x-major
    /// spectrum. `scratch` must have the same length.
    pub fn forward_complex(&self, buf: &mut Vec<Complex64>, scratch: &mut Vec<Complex64>) {
        let (nx, ny) = (self.nx(), self.ny());
        self.gx.inner.fwd.process(buf);
        scratch.resize(buf.len(), Complex64::default());
        transpose::transpose(buf, scratch, nx, ny);
        self.gy.inner.fwd.process(scratch);
        let scale = 1.0 / (nx * ny) as f64;
        scratch.iter_mut().for_each(|c| *c *= scale);
        std::mem::swap(buf, scratch);
    }

    /// Inverse of [`Grid2D::forward_complex`]: x-major spectrum to a
    /// row-major complex buffer.
    pub fn inverse_complex(&self, buf: &mut Vec<Complex64>, scratch: &mut Vec<Complex64>) {
        let (nx, ny) = (self.nx(), self.ny());
        self.gy.inner.inv.process(buf);
        scratch.resize(buf.len(), Complex64::default());
        transpose::transpose(buf, scratch, ny, nx);
        self.gx.inner.inv.process(scratch);
        std::mem::swap(buf, scratch);
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = Vec::new();
        self.forward_complex(&mut buf, &mut scratch);
        buf
    }

    /// Inverse transform returning the real part and the largest imaginary
    /// residue relative to the largest real magnitude.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> (Vec<f64>, f64) {
        let mut buf = spectrum.to_vec();
        let mut scratch = Vec::new();
        self.inverse_complex(&mut buf, &mut scratch);
        let max_re = buf.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
        let max_im = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        let residue = if max_re > 0.0 { max_im / max_re } else { max_im };
        (buf.into_iter().map(|c| c.re).collect(), residue)
    }

    /// Keep-mask of the two-thirds rule along one axis, indexed like the
    /// wavenumber table.
    pub fn dealias_mask(&self, axis: Axis) -> Vec<bool> {
        let g = self.axis(axis);
        let cut = 2.0 / 3.0 * g.k_max();
        g.wavenumbers().iter().map(|k| k.abs() <= cut * (1.0 + 1e-12)).collect()
    }
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid2D({})", self.id())
    }
}

/// Real scalar field on a [`Grid2D`], with a lazily computed spectrum.
#[derive(Clone)]
pub struct SpectralField {
    grid: Grid2D,
    physical: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
    imag_residue: f64,
    tag: String,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpectralField({:?}, tag={:?})", self.grid, self.tag)
    }
}

impl SpectralField {
    pub fn from_physical(grid: &Grid2D, physical: Vec<f64>) -> Result<Self> {
        if physical.len() != grid.len() {
            return Err(LabError::InvalidGrid(format!(
                "expected {} samples, got {}",
                grid.len(),
                physical.len()
            )));
        }
        Ok(Self::wrap(grid, physical))
    }

    fn wrap(grid: &Grid2D, physical: Vec<f64>) -> Self {
        Self {
            grid: grid.clone(),
            physical,
            spectrum: OnceLock::new(),
            imag_residue: 0.0,
            tag: String::new(),
        }
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = grid.x_axis().coords();
        let ys = grid.y_axis().coords();
        let mut v = Vec::with_capacity(grid.len());
        for &y in &ys {
            v.extend(xs.iter().map(|&x| f(x, y)));
        }
        Self::wrap(grid, v)
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        Self::wrap(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: &Grid2D, c: f64) -> Self {
        Self::wrap(grid, vec![c; grid.len()])
    }

    /// Builds a field from an x-major spectrum; the physical samples are the
    /// real part of the inverse transform.
    pub fn from_spectrum(grid: &Grid2D, spectrum: Vec<Complex64>) -> Result<Self> {
        if spectrum.len() != grid.len() {
            return Err(LabError::InvalidGrid(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                spectrum.len()
            )));
        }
        let (physical, residue) = grid.inverse_real(&spectrum);
        let cell = OnceLock::new();
        let _ = cell.set(spectrum);
        Ok(Self { grid: grid.clone(), physical, spectrum: cell, imag_residue: residue, tag: String::new() })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn physical(&self) -> &[f64] {
        &self.physical
    }

    pub fn into_physical(self) -> Vec<f64> {
        self.physical
    }

    /// Sample at column `ix`, row `iy`.
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.physical[iy * self.grid.nx() + ix]
    }

    /// Largest imaginary part (relative) left by the inverse transform that
    /// produced this field; zero for fields sampled directly.
    pub fn imag_residue(&self) -> f64 {
        self.imag_residue
    }

    /// x-major spectrum, computed on first use.
    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| self.grid.forward_real(&self.physical))
    }

    /// Coefficient at FFT indices `(jx, jy)`.
    pub fn coefficient(&self, jx: usize, jy: usize) -> Complex64 {
        self.spectrum()[jx * self.grid.ny() + jy]
    }

    /// Multiplies the spectrum by `symbol(jx, jy)`.
    pub fn apply_multiplier(&self, symbol: impl Fn(usize, usize) -> Complex64) -> Self {
        let ny = self.grid.ny();
        let spec: Vec<Complex64> = self
            .spectrum()
            .iter()
            .enumerate()
            .map(|(idx, c)| c * symbol(idx / ny, idx % ny))
            .collect();
        let mut out = Self::from_spectrum(&self.grid, spec).expect("length preserved");
        out.tag = self.tag.clone();
        out
    }

    /// `Lambda^s f`, symbol `(1 + kx^2 + ky^2)^(s/2)`.
    pub fn bessel_potential(&self, s: f64) -> Result<Self> {
        if !s.is_finite() || s.abs() > BESSEL_EXPONENT_GUARD {
            return Err(LabError::ExponentOverflow(s));
        }
        let (kx, ky) = (self.grid.kx(), self.grid.ky());
        Ok(self.apply_multiplier(|jx, jy| {
            Complex64::new((1.0 + kx[jx] * kx[jx] + ky[jy] * ky[jy]).powf(0.5 * s), 0.0)
        }))
    }

    pub fn derivative(&self, axis: Axis, order: u32) -> Result<Self> {
        check_order(order)?;
        let g = self.grid.axis(axis).clone();
        let nyq = g.nyquist_index();
        let k = g.wavenumbers();
        Ok(self.apply_multiplier(|jx, jy| {
            let j = match axis {
                Axis::X => jx,
                Axis::Y => jy,
            };
            derivative_symbol(k[j], order, j == nyq)
        }))
    }

    /// Two-thirds rule: zero every coefficient with `|kx| > 2/3 kx_max` or
    /// `|ky| > 2/3 ky_max`.
    pub fn dealias(&self) -> Self {
        let mx = self.grid.dealias_mask(Axis::X);
        let my = self.grid.dealias_mask(Axis::Y);
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        self.apply_multiplier(|jx, jy| if mx[jx] && my[jy] { one } else { zero })
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let v = self.physical.iter().zip(&other.physical).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self::wrap(&self.grid, v))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise product in physical space.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::wrap(&self.grid, self.physical.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.physical.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.physical.iter().all(|v| v.is_finite())
    }

    /// Grid quadrature `sqrt(dx*dy*sum f^2)`.
    pub fn l2_quadrature(&self) -> f64 {
        let sum: f64 = self.physical.iter().map(|v| v * v).sum();
        (self.grid.dx() * self.grid.dy() * sum).sqrt()
    }

    /// `sqrt(area * sum |c_k|^2)`; equals [`Self::l2_quadrature`] by Plancherel.
    pub fn coefficient_l2(&self) -> f64 {
        let sum: f64 = self.spectrum().iter().map(|c| c.norm_sqr()).sum();
        (self.grid.area() * sum).sqrt()
    }
}
