//! Fractional Sobolev norms, log-log scaling fits and empirical checks of the
//! classical inequality toolkit (interpolation, Kato-Ponce commutator,
//! reciprocal estimate, algebra property, embedding into `C^0`).
//!
//! Norms use `||f||_s^2 = area * sum (1+|k|^2)^s |c_k|^2` with the transform
//! normalization of [`crate::spectral`], i.e. the continuum `H^s(R^2)` norm of
//! a function supported inside the periodic cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cutoffs::{sample_axis, Profile};
use crate::error::{LabError, Result};
use crate::spectral::{Axis, Grid1D, Grid2D, SpectralField};
use crate::state::StateVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub index: f64,
    pub grid_id: String,
}

pub fn hs_norm(f: &SpectralField, s: f64) -> Result<NormEstimate> {
    if !f.is_finite() {
        return Err(LabError::NonFinite(format!("field {:?}", f.tag())));
    }
    let (kx, ky) = (f.grid().kx(), f.grid().ky());
    let ny = f.grid().ny();
    let sum: f64 = f
        .spectrum()
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let (a, b) = (kx[idx / ny], ky[idx % ny]);
            (1.0 + a * a + b * b).powf(s) * c.norm_sqr()
        })
        .sum();
    Ok(NormEstimate { value: (f.grid().area() * sum).sqrt(), index: s, grid_id: f.grid().id() })
}

/// Root-sum-square of the four component norms.
pub fn hs_norm_state(u: &StateVector, s: f64) -> Result<NormEstimate> {
    let mut sq = 0.0;
    for c in u.components() {
        u.grid().ensure_same(c.grid())?;
        sq += hs_norm(c, s)?.value.powi(2);
    }
    Ok(NormEstimate { value: sq.sqrt(), index: s, grid_id: u.grid().id() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub npoints: usize,
    pub r2: f64,
}

/// Least squares of `log value` against `log n`.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(LabError::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some((n, v)) = points.iter().find(|(n, v)| !(*n > 0.0) || !(*v > 0.0) || !v.is_finite()) {
        return Err(LabError::Fit(format!("non-positive point ({n}, {v})")));
    }
    if points.iter().all(|(_, v)| *v < 1e-300) {
        return Err(LabError::Fit("all values underflow".into()));
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(LabError::Fit("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let sst: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let r2 = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 1.0 };
    let stderr = if points.len() > 2 { (sse / (m - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(ScalingFit { slope, intercept, stderr, npoints: points.len(), r2 })
}

/// Outcome of the modulated-packet norm law in one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketCheck {
    pub fit: ScalingFit,
    /// `(n, ||psi(n^-delta .) cos(n . + a)||_sigma)`.
    pub modulated: Vec<(f64, f64)>,
    /// `(n, ||psi(n^-delta .)||_sigma, n^(delta/2) ||psi||_sigma)`.
    pub unmodulated: Vec<(f64, f64, f64)>,
    pub inequality_holds: bool,
}

/// 1D grid on which `profile(n^-delta x)` (optionally modulated at
/// frequency `n`) is resolved: 8 points per wavelength of `n` plus
/// 128 scaled wavenumbers of envelope bandwidth.
pub fn packet_grid(profile: &dyn Profile, n: f64, delta: f64, margin: f64) -> Result<Grid1D> {
    let a = n.powf(delta);
    let l = profile.support().max_abs() * a + margin;
    let min_points = (2.0 * l * (n + 128.0 / a) / std::f64::consts::PI * 4.0).ceil() as usize;
    Grid1D::new(min_points.next_power_of_two().max(64), l)
}

pub fn packet_norm_check(
    profile: &dyn Profile,
    sigma: f64,
    delta: f64,
    shift: f64,
    n_list: &[f64],
) -> Result<PacketCheck> {
    let base = packet_grid(profile, 1.0, delta, 4.0)?;
    let base_norm = base.hs_norm(&sample_axis(profile, &base, 1.0, 0)?, sigma);
    let mut modulated = Vec::new();
    let mut unmodulated = Vec::new();
    for &n in n_list {
        let g = packet_grid(profile, n, delta, 4.0)?;
        let scale = n.powf(-delta);
        let env = sample_axis(profile, &g, scale, 0)?;
        let wave: Vec<f64> =
            env.iter().zip(g.coords()).map(|(e, x)| e * (n * x + shift).cos()).collect();
        modulated.push((n, g.hs_norm(&wave, sigma)));
        unmodulated.push((n, g.hs_norm(&env, sigma), n.powf(delta / 2.0) * base_norm));
    }
    let fit = fit_scaling(&modulated)?;
    let inequality_holds = unmodulated.iter().all(|(_, lhs, rhs)| *lhs <= rhs * (1.0 + 1e-12));
    Ok(PacketCheck { fit, modulated, unmodulated, inequality_holds })
}

/// `||f||_s / (||f||_sigma^alpha ||f||_tau^beta)`; at most 1 by Hölder.
pub fn interpolation_check(f: &SpectralField, sigma: f64, s: f64, tau: f64) -> Result<f64> {
    if !(sigma < s && s < tau) {
        return Err(LabError::InvalidParameter(format!(
            "interpolation needs sigma < s < tau, got {sigma}, {s}, {tau}"
        )));
    }
    let alpha = (tau - s) / (tau - sigma);
    let beta = (s - sigma) / (tau - sigma);
    let num = hs_norm(f, s)?.value;
    let den = hs_norm(f, sigma)?.value.powf(alpha) * hs_norm(f, tau)?.value.powf(beta);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Empirical constant of the commutator estimate
/// `||[Lambda^s, f] g|| <= C (||grad f||_inf ||Lambda^(s-1) g|| + ||Lambda^s f|| ||g||_inf)`.
pub fn kato_ponce_check(f: &SpectralField, g: &SpectralField, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(LabError::InvalidParameter(format!("commutator index must be >= 0, got {s}")));
    }
    let fg = f.mul(g)?;
    let comm = fg.bessel_potential(s)?.sub(&f.mul(&g.bessel_potential(s)?)?)?;
    let lhs = comm.l2_quadrature();
    let grad = f.derivative(Axis::X, 1)?.max_abs().max(f.derivative(Axis::Y, 1)?.max_abs());
    let rhs = grad * g.bessel_potential(s - 1.0)?.l2_quadrature()
        + f.bessel_potential(s)?.l2_quadrature() * g.max_abs();
    if g.max_abs() == 0.0 {
        return Err(LabError::InvalidParameter("g vanishes identically".into()));
    }
    if rhs == 0.0 {
        return Ok(0.0);
    }
    Ok(lhs / rhs)
}

/// Empirical constant of `||h/(g+b)||_s <= C (1 + ||g||_{C^1}^s + ||g||_s^s) ||h||_s`.
pub fn reciprocal_check(h: &SpectralField, g: &SpectralField, b: f64, s: f64) -> Result<f64> {
    h.grid().ensure_same(g.grid())?;
    let floor = g.physical().iter().fold(f64::INFINITY, |m, v| m.min(v + b));
    if !(floor > 0.5 * b) {
        return Err(LabError::InvalidParameter(format!(
            "g + b must exceed b/2 pointwise (min {floor}, b {b})"
        )));
    }
    let hn = hs_norm(h, s)?.value;
    if hn == 0.0 {
        return Ok(0.0);
    }
    let q = SpectralField::from_physical(
        h.grid(),
        h.physical().iter().zip(g.physical()).map(|(hv, gv)| hv / (gv + b)).collect(),
    )?;
    let c1 = g
        .max_abs()
        .max(g.derivative(Axis::X, 1)?.max_abs())
        .max(g.derivative(Axis::Y, 1)?.max_abs());
    let den = (1.0 + c1.powf(s) + hs_norm(g, s)?.value.powf(s)) * hn;
    Ok(hs_norm(&q, s)?.value / den)
}

/// `||fg||_s / (||f||_s ||g||_s)`.
pub fn algebra_ratio(f: &SpectralField, g: &SpectralField, s: f64) -> Result<f64> {
    let den = hs_norm(f, s)?.value * hs_norm(g, s)?.value;
    Ok(if den == 0.0 { 0.0 } else { hs_norm(&f.mul(g)?, s)?.value / den })
}

/// `||f||_{C^0} / ||f||_s`.
pub fn embedding_ratio(f: &SpectralField, s: f64) -> Result<f64> {
    let den = hs_norm(f, s)?.value;
    Ok(if den == 0.0 { 0.0 } else { f.max_abs() / den })
}

/// Random smooth trigonometric polynomial with physical wavenumbers
/// `pi*m/l_ref`, `|m| <= band`, and algebraically decaying amplitudes. The
/// same draw evaluated on any grid of the reference cell gives the same
/// function, which is what refinement studies need.
#[derive(Clone, Debug)]
pub struct RandomTrig {
    modes: Vec<(f64, f64, f64, f64)>,
    mean: f64,
}

impl RandomTrig {
    pub fn draw(rng: &mut impl Rng, band: i64, lx: f64, ly: f64) -> Self {
        let mut modes = Vec::new();
        for mx in -band..=band {
            for my in 0..=band {
                if my == 0 && mx < 0 {
                    continue;
                }
                let decay = 1.0 / (1.0 + (mx * mx + my * my) as f64).powf(1.25);
                let amp = rng.gen_range(-1.0..1.0) * decay;
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let kx = std::f64::consts::PI * mx as f64 / lx;
                let ky = std::f64::consts::PI * my as f64 / ly;
                modes.push((kx, ky, amp, phase));
            }
        }
        Self { modes, mean: 0.0 }
    }

    pub fn with_mean(mut self, mean: f64) -> Self {
        self.mean = mean;
        self
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.mean + self.modes.iter().map(|(kx, ky, a, p)| a * (kx * x + ky * y + p).cos()).sum::<f64>()
    }

    pub fn sample(&self, grid: &Grid2D) -> SpectralField {
        SpectralField::from_fn(grid, |x, y| self.eval(x, y))
    }

    /// Largest absolute deviation from the mean.
    pub fn amplitude_bound(&self) -> f64 {
        self.modes.iter().map(|m| m.2.abs()).sum()
    }
}

/// Summary of the randomized inequality suite at one grid and its doubling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub trials: usize,
    pub max_interpolation_ratio: f64,
    pub single_mode_interpolation_ratio: f64,
    pub monotonicity_violations: usize,
    pub kato_ponce: (f64, f64),
    pub reciprocal: (f64, f64),
    pub algebra: (f64, f64),
    pub embedding: (f64, f64),
}

impl InequalityReport {
    pub fn relative_change(pair: (f64, f64)) -> f64 {
        (pair.1 - pair.0).abs() / pair.0.abs().max(f64::MIN_POSITIVE)
    }
}

/// Runs every inequality check on `trials` random fields drawn from `rng`.
/// Constants are maxima over trials, reported on an `n x n` grid and on its
/// doubling so that their refinement stability can be judged.
pub fn inequality_lab(rng: &mut impl Rng, trials: usize, n: usize, s: f64) -> Result<InequalityReport> {
    let l = std::f64::consts::PI;
    let coarse = Grid2D::new(n, n, l, l)?;
    let fine = Grid2D::new(2 * n, 2 * n, l, l)?;
    let band = (n / 8) as i64;
    let (sigma, tau) = (s - 0.45, s + 0.55);

    let single = SpectralField::from_fn(&coarse, |x, y| (2.0 * x + y).cos());
    let single_mode_interpolation_ratio = interpolation_check(&single, sigma, s, tau)?;

    let mut report = InequalityReport {
        trials,
        max_interpolation_ratio: 0.0,
        single_mode_interpolation_ratio,
        monotonicity_violations: 0,
        kato_ponce: (0.0, 0.0),
        reciprocal: (0.0, 0.0),
        algebra: (0.0, 0.0),
        embedding: (0.0, 0.0),
    };
    let b = 1.0;
    for _ in 0..trials {
        let f = RandomTrig::draw(rng, band, l, l);
        let g = RandomTrig::draw(rng, band, l, l);
        // Keep g + b above b/2 by rescaling the perturbation.
        let gr = {
            let amp = g.amplitude_bound();
            let mut g = g.clone();
            let factor = if amp > 0.0 { 0.4 * b / amp } else { 1.0 };
            g.modes.iter_mut().for_each(|m| m.2 *= factor);
            g
        };
        let fc = f.sample(&coarse);
        report.max_interpolation_ratio =
            report.max_interpolation_ratio.max(interpolation_check(&fc, sigma, s, tau)?);
        let mut prev = 0.0;
        for k in 0..8 {
            let v = hs_norm(&fc, -1.0 + 0.5 * k as f64)?.value;
            if v < prev {
                report.monotonicity_violations += 1;
            }
            prev = v;
        }
        for (slot, grid) in [(0usize, &coarse), (1usize, &fine)] {
            let (fs, gs, gr_s) = (f.sample(grid), g.sample(grid), gr.sample(grid));
            let kp = kato_ponce_check(&fs, &gs, s)?;
            let rc = reciprocal_check(&fs, &gr_s, b, s)?;
            let al = algebra_ratio(&fs, &gs, s)?;
            let em = embedding_ratio(&fs, s)?;
            for (acc, v) in [
                (&mut report.kato_ponce, kp),
                (&mut report.reciprocal, rc),
                (&mut report.algebra, al),
                (&mut report.embedding, em),
            ] {
                let cur = if slot == 0 { &mut acc.0 } else { &mut acc.1 };
                *cur = cur.max(v);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoffs::CutoffFamily;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn zero_and_single_mode() {
        let g = Grid2D::new(32, 32, PI, PI).unwrap();
        assert_eq!(hs_norm(&SpectralField::zeros(&g), 2.0).unwrap().value, 0.0);
        let f = SpectralField::from_fn(&g, |x, _| x.sin());
        for s in [0.5, 1.0, 2.5] {
            let r = hs_norm(&f, s).unwrap().value / hs_norm(&f, 0.0).unwrap().value;
            assert!((r - 2f64.powf(s / 2.0)).abs() < 1e-12);
        }
    }

    /// Continuum oracle for a Gaussian: `||e^{-a|x|^2}||_s^2 =
    /// (pi/(2a^2)) * int_0^inf (1+r^2)^s e^{-r^2/(2a)} r dr` under the
    /// Fourier-series normalization used here.
    #[test]
    fn gaussian_matches_continuum_quadrature() {
        let a = 2.0;
        let s = 1.45;
        let g = Grid2D::new(128, 128, 8.0, 8.0).unwrap();
        let f = SpectralField::from_fn(&g, |x, y| (-a * (x * x + y * y)).exp());
        let numeric = hs_norm(&f, s).unwrap().value;
        let m = 400_000;
        let rmax = 40.0;
        let h = rmax / m as f64;
        let integral: f64 = (0..m)
            .map(|i| {
                let r = (i as f64 + 0.5) * h;
                (1.0 + r * r).powf(s) * (-r * r / (2.0 * a)).exp() * r
            })
            .sum::<f64>()
            * h;
        let oracle = (PI / (2.0 * a * a) * integral).sqrt();
        assert!((numeric - oracle).abs() < 1e-6 * oracle, "{numeric} vs {oracle}");
    }

    #[test]
    fn fit_examples() {
        let f = fit_scaling(&[(2.0, 4.0), (4.0, 16.0), (8.0, 64.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let c = fit_scaling(&[(2.0, 3.0), (4.0, 3.0), (8.0, 3.0)]).unwrap();
        assert!(c.slope.abs() < 1e-12);
        assert!(fit_scaling(&[(2.0, 3.0), (4.0, 3.0)]).is_err());
        assert!(fit_scaling(&[(2.0, 3.0), (4.0, 0.0), (8.0, 1.0)]).is_err());
    }

    #[test]
    fn state_norm_examples() {
        use crate::state::GasConstants;
        let g = Grid2D::new(32, 32, PI, PI).unwrap();
        let mut st = StateVector::zeros(&g, GasConstants::default());
        st.u = SpectralField::from_fn(&g, |x, y| (x + 2.0 * y).sin());
        let a = hs_norm_state(&st, 1.5).unwrap().value;
        assert!((a - hs_norm(&st.u, 1.5).unwrap().value).abs() < 1e-14);
        let b = hs_norm_state(&st.scale(2.0), 1.5).unwrap().value;
        assert!((b - 2.0 * a).abs() < 1e-13);
    }

    #[test]
    fn packet_law() {
        let fam = CutoffFamily::default();
        let ns = [16.0, 32.0, 64.0, 128.0, 256.0];
        let a = packet_norm_check(&fam.psi, 1.45, 0.25, 0.0, &ns).unwrap();
        assert!((a.fit.slope - 1.575).abs() < 0.05, "{:?}", a.fit);
        assert!(a.inequality_holds);
        let b = packet_norm_check(&fam.psi, 1.45, 0.25, 1.0, &ns).unwrap();
        assert!((a.fit.slope - b.fit.slope).abs() < 0.01);
        let l2 = packet_norm_check(&fam.psi, 0.0, 0.25, 0.0, &ns).unwrap();
        assert!((l2.fit.slope - 0.125).abs() < 0.01);
    }

    #[test]
    fn interpolation_single_mode_is_equality() {
        let g = Grid2D::new(32, 32, PI, PI).unwrap();
        let f = SpectralField::from_fn(&g, |x, y| (3.0 * x - y).sin());
        let r = interpolation_check(&f, 1.0, 2.0, 3.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(interpolation_check(&f, 2.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn trivial_commutator_and_reciprocal_cases() {
        let g = Grid2D::new(32, 32, PI, PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = RandomTrig::draw(&mut rng, 4, PI, PI).sample(&g);
        let c = SpectralField::constant(&g, 2.0);
        assert!(kato_ponce_check(&c, &h, 1.45).unwrap() < 1e-12);
        assert!(kato_ponce_check(&h, &h, 0.0).unwrap() < 1e-12);
        let b = 2.0;
        let r = reciprocal_check(&h, &SpectralField::zeros(&g), b, 1.45).unwrap();
        assert!((r - 1.0 / b).abs() < 1e-12);
        assert_eq!(reciprocal_check(&SpectralField::zeros(&g), &h.scale(0.01), b, 1.45).unwrap(), 0.0);
        assert!(reciprocal_check(&h, &SpectralField::constant(&g, -1.5), b, 1.45).is_err());
    }

    #[test]
    fn inequality_lab_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = inequality_lab(&mut rng, 10, 32, 1.45).unwrap();
        assert!(r.max_interpolation_ratio <= 1.0 + 1e-10);
        assert!((r.single_mode_interpolation_ratio - 1.0).abs() < 1e-10);
        assert_eq!(r.monotonicity_violations, 0);
        for pair in [r.kato_ponce, r.reciprocal, r.algebra, r.embedding] {
            assert!(InequalityReport::relative_change(pair) < 0.1, "{pair:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn norm_monotone_in_index(seed in 0u64..10_000, s1 in -2.0f64..3.0, ds in 0.0f64..2.0) {
            let g = Grid2D::new(32, 32, PI, PI).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = RandomTrig::draw(&mut rng, 5, PI, PI).sample(&g);
            prop_assert!(hs_norm(&f, s1).unwrap().value <= hs_norm(&f, s1 + ds).unwrap().value * (1.0 + 1e-14));
        }

        #[test]
        fn interpolation_bounded(seed in 0u64..10_000) {
            let g = Grid2D::new(32, 32, PI, PI).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = RandomTrig::draw(&mut rng, 5, PI, PI).sample(&g);
            prop_assert!(interpolation_check(&f, 1.45, 2.5, 3.0).unwrap() <= 1.0 + 1e-10);
        }
    }
}
