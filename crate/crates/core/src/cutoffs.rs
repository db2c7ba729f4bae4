//! Smooth compactly supported cutoffs `psi`, `phi1`, `phi2` built from the
//! `exp(-1/t)` transition, with closed-form derivatives up to order 2.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::spectral::{Axis, Grid1D, Grid2D, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// A real profile on the line that can be sampled with derivatives.
pub trait Profile: Send + Sync {
    /// Value of the `order`-th derivative at `x`. Orders above
    /// [`Profile::max_order`] are a programming error and panic.
    fn eval(&self, x: f64, order: u32) -> f64;
    fn max_order(&self) -> u32;
    /// Closed interval outside which the profile vanishes identically.
    fn support(&self) -> Interval;
}

/// The transition `s(t) = f(t)/(f(t)+f(1-t))`, `f(t) = exp(-1/t)`, or one of
/// its first two derivatives. Equal to 0 for `t <= 0` and 1 for `t >= 1`.
pub fn smooth_step(t: f64, order: u32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let e = 1.0 / t - 1.0 / (1.0 - t);
    let s = 1.0 / (1.0 + e.exp());
    let sc = 1.0 / (1.0 + (-e).exp()); // 1 - s without cancellation
    let q = -1.0 / (t * t) - 1.0 / ((1.0 - t) * (1.0 - t));
    match order {
        0 => s,
        1 => -q * s * sc,
        2 => {
            let dq = 2.0 / (t * t * t) - 2.0 / ((1.0 - t) * (1.0 - t) * (1.0 - t));
            s * sc * (q * q * (1.0 - 2.0 * s) - dq)
        }
        _ => panic!("smooth_step supports derivative orders 0..=2, got {order}"),
    }
}

/// 16-point Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let m = 16usize;
        (0..m)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=m {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let rule = gauss_legendre();
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            rule.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// `int_0^t smooth_step`, clamped to `[0, 1]` in `t`. The symmetry
/// `s(t) + s(1-t) = 1` gives `int_0^1 s = 1/2`.
pub fn smooth_step_integral(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 0.5;
    }
    if t <= 0.5 {
        integrate(|u| smooth_step(u, 0), 0.0, t, 12)
    } else {
        let r = 1.0 - t;
        0.5 - r + integrate(|u| smooth_step(u, 0), 0.0, r, 12)
    }
}

/// Bump equal to 1 on `plateau`, 0 outside `support`, with `smooth_step`
/// transitions in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothBump {
    plateau: Interval,
    support: Interval,
}

impl SmoothBump {
    pub fn new(plateau: Interval, support: Interval) -> Result<Self> {
        let ok = [plateau.lo, plateau.hi, support.lo, support.hi].iter().all(|v| v.is_finite())
            && plateau.lo <= plateau.hi
            && support.lo < plateau.lo
            && plateau.hi < support.hi;
        if !ok {
            return Err(LabError::InvalidParameter(format!(
                "plateau {plateau:?} must lie strictly inside support {support:?}"
            )));
        }
        Ok(Self { plateau, support })
    }

    pub fn plateau(&self) -> Interval {
        self.plateau
    }

    fn left_width(&self) -> f64 {
        self.plateau.lo - self.support.lo
    }

    fn right_width(&self) -> f64 {
        self.support.hi - self.plateau.hi
    }

    /// `int_{-inf}^x` of the bump.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let (wl, wr) = (self.left_width(), self.right_width());
        if x <= self.support.lo {
            0.0
        } else if x < self.plateau.lo {
            wl * smooth_step_integral((x - self.support.lo) / wl)
        } else if x <= self.plateau.hi {
            0.5 * wl + (x - self.plateau.lo)
        } else if x < self.support.hi {
            let tau = (self.support.hi - x) / wr;
            0.5 * wl + self.plateau.len() + wr * (0.5 - smooth_step_integral(tau))
        } else {
            self.integral()
        }
    }

    pub fn integral(&self) -> f64 {
        0.5 * self.left_width() + self.plateau.len() + 0.5 * self.right_width()
    }
}

impl Profile for SmoothBump {
    fn eval(&self, x: f64, order: u32) -> f64 {
        assert!(order <= 2, "bump derivatives are available up to order 2");
        if x <= self.support.lo || x >= self.support.hi {
            0.0
        } else if x < self.plateau.lo {
            let w = self.left_width();
            smooth_step((x - self.support.lo) / w, order) / w.powi(order as i32)
        } else if x <= self.plateau.hi {
            if order == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            let w = self.right_width();
            let sign = if order % 2 == 1 { -1.0 } else { 1.0 };
            sign * smooth_step((self.support.hi - x) / w, order) / w.powi(order as i32)
        }
    }

    fn max_order(&self) -> u32 {
        2
    }

    fn support(&self) -> Interval {
        self.support
    }
}

/// `phi1(x) = int_{-inf}^x (g - c h)` with `c = int g / int h`, so `phi1`
/// has slope 1 on the plateau of `g` and vanishes outside the joint support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phi1 {
    core: SmoothBump,
    correction: SmoothBump,
    c: f64,
}

impl Phi1 {
    pub fn new(core: SmoothBump, correction: SmoothBump) -> Self {
        let c = core.integral() / correction.integral();
        Self { core, correction, c }
    }

    /// Interval on which `phi1' == 1`.
    pub fn unit_slope_region(&self) -> Interval {
        let p = self.core.plateau;
        let h = self.correction.support;
        if h.lo >= p.hi || h.hi <= p.lo {
            p
        } else if h.lo > p.lo {
            Interval::new(p.lo, h.lo)
        } else {
            Interval::new(h.hi.min(p.hi), p.hi)
        }
    }

    pub fn correction_weight(&self) -> f64 {
        self.c
    }
}

impl Profile for Phi1 {
    fn eval(&self, x: f64, order: u32) -> f64 {
        assert!(order <= 3, "phi1 derivatives are available up to order 3");
        let sup = self.support();
        if x <= sup.lo || x >= sup.hi {
            return 0.0;
        }
        if order == 0 {
            self.core.antiderivative(x) - self.c * self.correction.antiderivative(x)
        } else {
            self.core.eval(x, order - 1) - self.c * self.correction.eval(x, order - 1)
        }
    }

    fn max_order(&self) -> u32 {
        3
    }

    fn support(&self) -> Interval {
        let (a, b) = (self.core.support, self.correction.support);
        Interval::new(a.lo.min(b.lo), a.hi.max(b.hi))
    }
}

/// Support and plateau constants for the three cutoffs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub psi_plateau: Interval,
    pub psi_support: Interval,
    pub phi2_plateau: Interval,
    pub phi2_support: Interval,
    pub phi1_core_plateau: Interval,
    pub phi1_core_support: Interval,
    pub phi1_correction_plateau: Interval,
    pub phi1_correction_support: Interval,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self {
            psi_plateau: Interval::new(-2.0, 2.0),
            psi_support: Interval::new(-4.0, 4.0),
            phi2_plateau: Interval::new(-4.0, 4.0),
            phi2_support: Interval::new(-8.0, 8.0),
            phi1_core_plateau: Interval::new(-4.0, 4.0),
            phi1_core_support: Interval::new(-6.0, 6.0),
            phi1_correction_plateau: Interval::new(5.9, 6.1),
            phi1_correction_support: Interval::new(4.0, 8.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub psi: SmoothBump,
    pub phi2: SmoothBump,
    pub phi1: Phi1,
}

impl CutoffFamily {
    pub fn new(cfg: &CutoffConfig) -> Result<Self> {
        let psi = SmoothBump::new(cfg.psi_plateau, cfg.psi_support)?;
        let phi2 = SmoothBump::new(cfg.phi2_plateau, cfg.phi2_support)?;
        let core = SmoothBump::new(cfg.phi1_core_plateau, cfg.phi1_core_support)?;
        let correction = SmoothBump::new(cfg.phi1_correction_plateau, cfg.phi1_correction_support)?;
        let phi1 = Phi1::new(core, correction);
        if !cfg.phi2_plateau.contains_interval(&cfg.psi_support) {
            return Err(LabError::InvalidParameter(
                "phi2 must equal 1 on the support of psi".into(),
            ));
        }
        if !phi1.unit_slope_region().contains_interval(&cfg.psi_support) {
            return Err(LabError::InvalidParameter(
                "phi1' must equal 1 on the support of psi".into(),
            ));
        }
        Ok(Self { psi, phi2, phi1 })
    }

    /// Largest `|x|` at which any of the three cutoffs is nonzero.
    pub fn extent(&self) -> f64 {
        self.psi
            .support()
            .max_abs()
            .max(self.phi2.support().max_abs())
            .max(self.phi1.support().max_abs())
    }
}

impl Default for CutoffFamily {
    fn default() -> Self {
        Self::new(&CutoffConfig::default()).expect("default cutoffs are consistent")
    }
}

/// Samples `f^(order)(scale * x_j)` along one axis. No chain-rule factor is
/// applied.
pub fn sample_axis(f: &dyn Profile, axis: &Grid1D, scale: f64, order: u32) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(LabError::InvalidParameter(format!("scale {scale} must be positive")));
    }
    if order > f.max_order() {
        return Err(LabError::UnsupportedOrder(order));
    }
    let sup = f.support();
    let (lo, hi) = (sup.lo / scale, sup.hi / scale);
    let l = axis.half_width();
    if lo < -l || hi > l {
        return Err(LabError::SupportOverflow { lo, hi, half_width: l });
    }
    Ok(axis.coords().into_iter().map(|x| f.eval(scale * x, order)).collect())
}

/// [`sample_axis`] broadcast along the other axis of a 2D grid.
pub fn sample_scaled(
    f: &dyn Profile,
    grid: &Grid2D,
    axis: Axis,
    scale: f64,
    order: u32,
) -> Result<SpectralField> {
    let line = sample_axis(f, grid.axis(axis), scale, order)?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut v = Vec::with_capacity(grid.len());
    for iy in 0..ny {
        match axis {
            Axis::X => v.extend_from_slice(&line),
            Axis::Y => v.extend(std::iter::repeat(line[iy]).take(nx)),
        }
    }
    SpectralField::from_physical(grid, v)
}
