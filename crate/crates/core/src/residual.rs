//! Residual of the approximate solution in the velocity equations,
//! `R2 = u_t + u u_x + v u_y` and `R3 = v_t + u v_x + v v_y`, split into the
//! nine products of high/low-frequency pieces.
//!
//! Term order for `R2` (and likewise `R3` with `v` as the transported field):
//! `0: u2_t, 1: u1 u1_x, 2: u1 u2_x, 3: u2 u1_x, 4: u2 u2_x, 5: v1 u1_y,
//! 6: v1 u2_y, 7: v2 u1_y, 8: v2 u2_y`.
//! Terms 2, 3, 7 vanish identically because the cutoffs are nested, and
//! terms 0 and 6 cancel down to a lower-order remainder.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, AnsatzGridRule, AnsatzParams};
use crate::cutoffs::{sample_axis, CutoffFamily, Profile};
use crate::error::{LabError, Result};
use crate::separable::{hs_norms, SeparableField};
use crate::sobolev::{fit_scaling, ScalingFit};
use crate::spectral::{Axis, Grid2D, SpectralField};

pub const TERM_COUNT: usize = 9;
/// Terms that vanish by construction.
pub const VANISHING_TERMS: [usize; 3] = [2, 3, 7];

#[derive(Clone, Debug)]
pub struct ResidualBreakdown {
    pub t: f64,
    pub terms_u: Vec<SeparableField>,
    pub terms_v: Vec<SeparableField>,
    pub total_u: SeparableField,
    pub total_v: SeparableField,
    pub closed_form_u: SeparableField,
    pub closed_form_v: SeparableField,
    /// `max |u2|`, the reference scale for exact vanishing.
    pub u2_scale: f64,
}

impl ResidualBreakdown {
    pub fn compute(a: &Ansatz, t: f64) -> Result<Self> {
        let (u1, v1) = a.low_freq_velocity();
        let (u2, v2) = a.high_freq_velocity(t);
        let (ut, vt) = a.time_derivative(t);
        let g = a.gradients(t);
        let terms_u = vec![
            ut,
            u1.mul(&g.u1x)?,
            u1.mul(&g.u2x)?,
            u2.mul(&g.u1x)?,
            u2.mul(&g.u2x)?,
            v1.mul(&g.u1y)?,
            v1.mul(&g.u2y)?,
            v2.mul(&g.u1y)?,
            v2.mul(&g.u2y)?,
        ];
        let terms_v = vec![
            vt,
            u1.mul(&g.v1x)?,
            u1.mul(&g.v2x)?,
            u2.mul(&g.v1x)?,
            u2.mul(&g.v2x)?,
            v1.mul(&g.v1y)?,
            v1.mul(&g.v2y)?,
            v2.mul(&g.v1y)?,
            v2.mul(&g.v2y)?,
        ];
        let grid = a.grid();
        let total_u = SeparableField::sum(grid, &terms_u)?;
        let total_v = SeparableField::sum(grid, &terms_v)?;
        let closed = |head: SeparableField, terms: &[SeparableField]| -> Result<SeparableField> {
            SeparableField::sum(grid, [&head, &terms[1], &terms[4], &terms[5], &terms[8]])
        };
        let closed_form_u = closed(cancellation_closed_form(a, t), &terms_u)?;
        let closed_form_v = closed(r3_cancellation_closed_form(a, t), &terms_v)?;
        Ok(Self {
            t,
            terms_u,
            terms_v,
            total_u,
            total_v,
            closed_form_u,
            closed_form_v,
            u2_scale: u2.max_abs(),
        })
    }

    /// Largest max-norm among the terms that vanish by construction.
    pub fn vanishing_max(&self) -> f64 {
        VANISHING_TERMS
            .iter()
            .flat_map(|&i| [self.terms_u[i].max_abs(), self.terms_v[i].max_abs()])
            .fold(0.0, f64::max)
    }

    /// Relative max-norm gap between the totals and the simplified closed
    /// forms.
    pub fn closed_form_error(&self) -> Result<f64> {
        let eu = self.total_u.max_abs_diff(&self.closed_form_u)? / self.total_u.max_abs();
        let ev = self.total_v.max_abs_diff(&self.closed_form_v)? / self.total_v.max_abs();
        Ok(eu.max(ev))
    }

    /// Gap between the total and the term sum accumulated in the opposite
    /// order.
    pub fn associativity_error(&self) -> Result<f64> {
        let grid = self.total_u.grid();
        let rev_u = SeparableField::sum(grid, self.terms_u.iter().rev())?;
        let rev_v = SeparableField::sum(grid, self.terms_v.iter().rev())?;
        let eu = self.total_u.max_abs_diff(&rev_u)? / self.total_u.max_abs();
        let ev = self.total_v.max_abs_diff(&rev_v)? / self.total_v.max_abs();
        Ok(eu.max(ev))
    }

    pub fn cancellation_u(&self) -> Result<SeparableField> {
        self.terms_u[0].add(&self.terms_u[6])
    }

    pub fn cancellation_v(&self) -> Result<SeparableField> {
        self.terms_v[0].add(&self.terms_v[6])
    }
}

/// `-(omega/n^(2+2delta+s)) psi(x') [n^-delta psi''(y') sin + n psi'(y') cos]`.
pub fn cancellation_closed_form(a: &Ansatz, t: f64) -> SeparableField {
    let p = a.params();
    let (n, d, s, w) = (p.nf(), p.delta, p.s, p.omega);
    let parts = second_y_parts(a, t);
    let c = -w / n.powf(2.0 + 2.0 * d + s);
    parts.0.scale(c * n.powf(-d)).add(&parts.1.scale(c * n)).expect("same grid")
}

/// `(psi(x') psi''(y') sin, psi(x') psi'(y') cos)`.
fn second_y_parts(a: &Ansatz, t: f64) -> (SeparableField, SeparableField) {
    let p = a.params();
    let grid = a.grid();
    let scale = 1.0 / p.envelope_width();
    let fam = a.cutoffs();
    let px = Arc::new(
        sample_axis(&fam.psi, grid.x_axis(), scale, 0).expect("fits grid"),
    );
    let ys = grid.y_axis().coords();
    let theta = |y: f64| p.nf() * y + p.omega * t;
    let psi = |y: f64, k: u32| Profile::eval(&fam.psi, scale * y, k);
    let a1 = ys.iter().map(|&y| psi(y, 2) * theta(y).sin()).collect();
    let a2 = ys.iter().map(|&y| psi(y, 1) * theta(y).cos()).collect();
    (
        SeparableField::outer(grid, 1.0, px.clone(), Arc::new(a1)).expect("grid"),
        SeparableField::outer(grid, 1.0, px, Arc::new(a2)).expect("grid"),
    )
}

/// `(omega/n^(3delta+s+2)) psi'(x') psi'(y') sin(n y + omega t)`.
pub fn r3_cancellation_closed_form(a: &Ansatz, t: f64) -> SeparableField {
    let p = a.params();
    let grid = a.grid();
    let scale = 1.0 / p.envelope_width();
    let fam = a.cutoffs();
    let x = sample_axis(&fam.psi, grid.x_axis(), scale, 1).expect("fits grid");
    let y = grid
        .y_axis()
        .coords()
        .into_iter()
        .map(|y| Profile::eval(&fam.psi, scale * y, 1) * (p.nf() * y + p.omega * t).sin())
        .collect();
    let c = p.omega / p.nf().powf(3.0 * p.delta + p.s + 2.0);
    SeparableField::outer(grid, c, Arc::new(x), Arc::new(y)).expect("grid")
}

#[derive(Clone, Debug)]
pub struct Cancellation {
    pub lhs: SeparableField,
    pub rhs: SeparableField,
    pub max_rel_err: f64,
}

pub fn crucial_cancellation_for(a: &Ansatz, t: f64) -> Result<Cancellation> {
    let b = ResidualBreakdown::compute(a, t)?;
    let lhs = b.cancellation_u()?;
    let rhs = cancellation_closed_form(a, t);
    let den = rhs.max_abs();
    if den == 0.0 {
        return Err(LabError::InvalidParameter("cancellation closed form vanishes".into()));
    }
    let max_rel_err = lhs.max_abs_diff(&rhs)? / den;
    Ok(Cancellation { lhs, rhs, max_rel_err })
}

pub fn residual_terms(p: &AnsatzParams, t: f64, g: &Grid2D) -> Result<ResidualBreakdown> {
    ResidualBreakdown::compute(&Ansatz::new(*p, &CutoffFamily::default(), g)?, t)
}

pub fn crucial_cancellation(p: &AnsatzParams, t: f64, g: &Grid2D) -> Result<Cancellation> {
    crucial_cancellation_for(&Ansatz::new(*p, &CutoffFamily::default(), g)?, t)
}

pub fn r3_closed_form(p: &AnsatzParams, t: f64, g: &Grid2D) -> Result<SeparableField> {
    Ok(r3_cancellation_closed_form(&Ansatz::new(*p, &CutoffFamily::default(), g)?, t))
}

/// Independent evaluation of `(R2, R3)` on dense samples: spatial
/// derivatives spectrally, time derivative by a fourth-order central
/// difference with step `h`.
pub fn spectral_oracle(a: &Ansatz, t: f64, h: f64) -> Result<(SpectralField, SpectralField)> {
    let sample = |tt: f64| {
        let (u, v) = a.velocity(tt);
        (u.to_dense(), v.to_dense())
    };
    let (u, v) = sample(t);
    let stencil = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let mut ut = SpectralField::zeros(a.grid());
    let mut vt = SpectralField::zeros(a.grid());
    for (k, c) in stencil {
        let (us, vs) = sample(t + k * h);
        ut = ut.add(&us.scale(c / (12.0 * h)))?;
        vt = vt.add(&vs.scale(c / (12.0 * h)))?;
    }
    let transport = |f: &SpectralField| -> Result<SpectralField> {
        u.mul(&f.derivative(Axis::X, 1)?)?.add(&v.mul(&f.derivative(Axis::Y, 1)?)?)
    };
    Ok((ut.add(&transport(&u)?)?, vt.add(&transport(&v)?)?))
}

/// One CSV row of the residual scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermNorm {
    pub n: u32,
    pub delta: f64,
    pub s: f64,
    pub sigma: f64,
    pub t: f64,
    pub term_label: String,
    pub h_sigma_norm: f64,
    pub linf_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualScan {
    pub rows: Vec<TermNorm>,
    /// Fit of `max_t ||(R2, R3)||_sigma`.
    pub total_fit: ScalingFit,
    /// Per-label fits of `max_t` norms, in label order.
    pub term_fits: Vec<(String, ScalingFit)>,
}

impl ResidualScan {
    pub fn fit(&self, label: &str) -> Option<&ScalingFit> {
        self.term_fits.iter().find(|(l, _)| l == label).map(|(_, f)| f)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_rows(path: &Path) -> Result<Vec<TermNorm>> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for r in rd.deserialize() {
            rows.push(r?);
        }
        Ok(rows)
    }

    /// Rebuilds the fits from stored rows alone.
    pub fn from_rows(rows: Vec<TermNorm>) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        for r in &rows {
            if !labels.contains(&r.term_label) {
                labels.push(r.term_label.clone());
            }
        }
        let mut term_fits = Vec::new();
        for l in &labels {
            let pts = max_over_t(&rows, l);
            if pts.iter().all(|(_, v)| *v > 0.0) {
                term_fits.push((l.clone(), fit_scaling(&pts)?));
            }
        }
        let total_fit = fit_scaling(&max_over_t(&rows, "R"))?;
        Ok(Self { rows, total_fit, term_fits })
    }
}

fn max_over_t(rows: &[TermNorm], label: &str) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.term_label == label) {
        match out.iter_mut().find(|(n, _)| *n == r.n as f64) {
            Some(e) => e.1 = e.1.max(r.h_sigma_norm),
            None => out.push((r.n as f64, r.h_sigma_norm)),
        }
    }
    out
}

pub fn term_label(component: usize, i: usize) -> String {
    format!("R{}[{}]", component, i)
}

/// Predicted exponents of `||term||_sigma` in `n`: `delta - 2` for terms 1
/// and 5 of both components, `-2(s - sigma) - delta` for terms 4 and 8 of
/// `R2`, `-2(s - sigma) - 2 delta - 1` for those of `R3`, and the upper bound
/// `sigma - delta - s - 1` for the two cancellation pairs.
pub fn expected_term_slopes(p: &AnsatzParams, sigma: f64) -> Vec<(String, f64)> {
    let (d, s) = (p.delta, p.s);
    let mut out = Vec::new();
    for c in [2, 3] {
        out.push((term_label(c, 1), d - 2.0));
        out.push((term_label(c, 5), d - 2.0));
    }
    for i in [4, 8] {
        out.push((term_label(2, i), -2.0 * (s - sigma) - d));
        out.push((term_label(3, i), -2.0 * (s - sigma) - 2.0 * d - 1.0));
    }
    out.push(("R2[0+6]".into(), sigma - d - s - 1.0));
    out.push(("R3[0+6]".into(), sigma - d - s - 1.0));
    out
}

/// Norms of every term, of the two cancellation pairs and of the totals,
/// at each `n` and `t`, with `max_t` fits over `n`.
pub fn residual_norm_scan(
    n_list: &[u32],
    template: &AnsatzParams,
    cutoffs: &CutoffFamily,
    rule: &AnsatzGridRule,
    sigma: f64,
    times: &[f64],
) -> Result<ResidualScan> {
    if n_list.len() < 4 {
        return Err(LabError::InsufficientData(format!(
            "need >= 4 points for scaling fit, got {}",
            n_list.len()
        )));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let p = template.with_n(n);
        let grid = rule.grid(&p, cutoffs)?;
        let a = Ansatz::new(p, cutoffs, &grid)?;
        for &t in times {
            let b = ResidualBreakdown::compute(&a, t)?;
            let mut labels = Vec::new();
            let mut fields: Vec<SeparableField> = Vec::new();
            for (c, terms) in [(2usize, &b.terms_u), (3, &b.terms_v)] {
                for (i, f) in terms.iter().enumerate() {
                    labels.push(term_label(c, i));
                    fields.push(f.clone());
                }
            }
            labels.push("R2[0+6]".into());
            fields.push(b.cancellation_u()?);
            labels.push("R3[0+6]".into());
            fields.push(b.cancellation_v()?);
            labels.push("R2".into());
            fields.push(b.total_u.clone());
            labels.push("R3".into());
            fields.push(b.total_v.clone());
            let refs: Vec<&SeparableField> = fields.iter().collect();
            let norms = hs_norms(&refs, sigma)?;
            let mut push = |label: String, hs: f64, linf: f64| {
                rows.push(TermNorm {
                    n,
                    delta: p.delta,
                    s: p.s,
                    sigma,
                    t,
                    term_label: label,
                    h_sigma_norm: hs,
                    linf_norm: linf,
                })
            };
            let k = labels.len();
            for (i, label) in labels.into_iter().enumerate() {
                push(label, norms[i], fields[i].max_abs());
            }
            push(
                "R".into(),
                norms[k - 2].hypot(norms[k - 1]),
                fields[k - 2].max_abs().max(fields[k - 1].max_abs()),
            );
        }
    }
    ResidualScan::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: u32, omega: f64) -> Ansatz {
        let p = AnsatzParams::default().with_n(n).with_omega(omega);
        let c = CutoffFamily::default();
        let g = AnsatzGridRule::default().grid(&p, &c).unwrap();
        Ansatz::new(p, &c, &g).unwrap()
    }

    #[test]
    fn vanishing_terms_are_exactly_zero() {
        for omega in [1.0, -1.0] {
            let a = setup(16, omega);
            for t in [0.0, 0.5, 1.0] {
                let b = ResidualBreakdown::compute(&a, t).unwrap();
                assert!(b.vanishing_max() < 1e-13 * b.u2_scale);
            }
        }
    }

    #[test]
    fn term_six_is_transport_by_constant_drift() {
        let a = setup(16, 1.0);
        let b = ResidualBreakdown::compute(&a, 0.3).unwrap();
        let u2y = a.gradients(0.3).u2y;
        let expect = u2y.scale(-1.0 / 16.0);
        assert!(b.terms_u[6].max_abs_diff(&expect).unwrap() < 1e-15 * expect.max_abs());
    }

    #[test]
    fn totals_and_closed_forms() {
        let a = setup(16, -1.0);
        let b = ResidualBreakdown::compute(&a, 0.7).unwrap();
        assert!(b.associativity_error().unwrap() < 1e-14);
        assert!(b.closed_form_error().unwrap() < 1e-10);
    }

    #[test]
    fn crucial_cancellation_closed_form() {
        let p = AnsatzParams::default().with_n(32);
        let g = AnsatzGridRule::default().grid(&p, &CutoffFamily::default()).unwrap();
        let c = crucial_cancellation(&p, 0.7, &g).unwrap();
        assert!(c.max_rel_err < 1e-10, "{}", c.max_rel_err);
        // On the plateau of psi in y both sides vanish.
        let w = p.envelope_width();
        for iy in 0..g.ny() {
            if (g.y_axis().coord(iy) / w).abs() < 1.9 {
                for ix in (0..g.nx()).step_by(17) {
                    assert!(c.lhs.value(ix, iy).abs() < 1e-18);
                }
            }
        }
    }

    #[test]
    fn r3_closed_form_matches_pair() {
        for omega in [1.0, -1.0] {
            let a = setup(16, omega);
            let b = ResidualBreakdown::compute(&a, 0.4).unwrap();
            let lhs = b.cancellation_v().unwrap();
            let rhs = r3_cancellation_closed_form(&a, 0.4);
            assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10 * rhs.max_abs());
        }
        // At t = 0 the closed form is odd in omega through its prefactor only.
        let p = setup(16, 1.0);
        let m = setup(16, -1.0);
        let sum = r3_cancellation_closed_form(&p, 0.0).add(&r3_cancellation_closed_form(&m, 0.0)).unwrap();
        assert!(sum.max_abs() < 1e-20);
    }

    #[test]
    fn spectral_oracle_agrees() {
        let p = AnsatzParams::default();
        let c = CutoffFamily::default();
        let rule = AnsatzGridRule { envelope_wavenumber: 256.0, ..AnsatzGridRule::default() };
        let g = rule.grid(&p, &c).unwrap();
        let a = Ansatz::new(p, &c, &g).unwrap();
        let b = ResidualBreakdown::compute(&a, 0.5).unwrap();
        let (r2, r3) = spectral_oracle(&a, 0.5, 1e-3).unwrap();
        let e2 = b.total_u.to_dense().sub(&r2).unwrap().max_abs() / b.total_u.max_abs();
        let e3 = b.total_v.to_dense().sub(&r3).unwrap().max_abs() / b.total_v.max_abs();
        assert!(e2 < 1e-7 && e3 < 1e-7, "{e2:e} {e3:e}");
    }

    #[test]
    fn scan_requires_four_points() {
        let e = residual_norm_scan(
            &[16, 32],
            &AnsatzParams::default(),
            &CutoffFamily::default(),
            &AnsatzGridRule::default(),
            1.45,
            &[0.0],
        )
        .unwrap_err();
        assert!(e.to_string().contains("need >= 4 points"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn boxed_terms_vanish(n in 8u32..96, t in 0.0f64..1.0, plus: bool) {
            let b = ResidualBreakdown::compute(&setup(n, if plus { 1.0 } else { -1.0 }), t).unwrap();
            proptest::prop_assert!(b.vanishing_max() < 1e-13 * b.u2_scale);
        }
    }
}
