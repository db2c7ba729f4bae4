//! Fields written as finite sums of outer products `sum_i c_i X_i(x) Y_i(y)`.
//!
//! Every ansatz and residual quantity has this form, so derivatives reduce to
//! 1D transforms of the factors and norms to a tensor sum over 1D spectra.
//! The 2D DFT of an outer product is the outer product of the 1D DFTs, hence
//! all results coincide (to rounding) with the dense [`SpectralField`] path
//! while grids with tens of millions of points stay cheap.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::spectral::{Axis, Grid2D, SpectralField};

#[derive(Clone, Debug)]
pub struct Rank1 {
    pub coef: f64,
    pub x: Arc<Vec<f64>>,
    pub y: Arc<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SeparableField {
    grid: Grid2D,
    terms: Vec<Rank1>,
}

impl SeparableField {
    pub fn zero(grid: &Grid2D) -> Self {
        Self { grid: grid.clone(), terms: Vec::new() }
    }

    /// `coef * x(x_i) * y(y_j)` from 1D samples along each axis.
    pub fn outer(grid: &Grid2D, coef: f64, x: Arc<Vec<f64>>, y: Arc<Vec<f64>>) -> Result<Self> {
        if x.len() != grid.nx() || y.len() != grid.ny() {
            return Err(LabError::InvalidGrid(format!(
                "factor lengths {}x{} do not match grid {}",
                x.len(),
                y.len(),
                grid.id()
            )));
        }
        Ok(Self { grid: grid.clone(), terms: vec![Rank1 { coef, x, y }] })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn terms(&self) -> &[Rank1] {
        &self.terms
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self { grid: self.grid.clone(), terms })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        let terms = self.terms.iter().map(|t| Rank1 { coef: c * t.coef, ..t.clone() }).collect();
        Self { grid: self.grid.clone(), terms }
    }

    /// Sum of several fields on one grid.
    pub fn sum<'a>(grid: &Grid2D, fields: impl IntoIterator<Item = &'a SeparableField>) -> Result<Self> {
        let mut acc = Self::zero(grid);
        for f in fields {
            acc = acc.add(f)?;
        }
        Ok(acc)
    }

    /// Pointwise product; the rank multiplies.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let mut terms = Vec::with_capacity(self.rank() * other.rank());
        for a in &self.terms {
            for b in &other.terms {
                let x = a.x.iter().zip(b.x.iter()).map(|(p, q)| p * q).collect();
                let y = a.y.iter().zip(b.y.iter()).map(|(p, q)| p * q).collect();
                terms.push(Rank1 { coef: a.coef * b.coef, x: Arc::new(x), y: Arc::new(y) });
            }
        }
        Ok(Self { grid: self.grid.clone(), terms })
    }

    /// Spectral derivative, identical to differentiating the dense samples.
    pub fn derivative(&self, axis: Axis, order: u32) -> Result<Self> {
        if order != 1 && order != 2 {
            return Err(LabError::UnsupportedOrder(order));
        }
        let g = self.grid.axis(axis);
        let terms = self
            .terms
            .iter()
            .map(|t| match axis {
                Axis::X => Rank1 { x: Arc::new(g.differentiate(&t.x, order)), ..t.clone() },
                Axis::Y => Rank1 { y: Arc::new(g.differentiate(&t.y, order)), ..t.clone() },
            })
            .collect();
        Ok(Self { grid: self.grid.clone(), terms })
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.terms.iter().map(|t| t.coef * t.x[ix] * t.y[iy]).sum()
    }

    /// Physical samples of row `iy` written into `row`.
    fn fill_row(&self, iy: usize, row: &mut [f64]) {
        row.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            let a = t.coef * t.y[iy];
            if a != 0.0 {
                row.iter_mut().zip(t.x.iter()).for_each(|(r, x)| *r += a * x);
            }
        }
    }

    pub fn to_dense(&self) -> SpectralField {
        let nx = self.grid.nx();
        let mut v = vec![0.0; self.grid.len()];
        for (iy, row) in v.chunks_mut(nx).enumerate() {
            self.fill_row(iy, row);
        }
        SpectralField::from_physical(&self.grid, v).expect("grid-sized buffer")
    }

    pub fn max_abs(&self) -> f64 {
        let mut row = vec![0.0; self.grid.nx()];
        let mut m = 0.0f64;
        for iy in 0..self.grid.ny() {
            self.fill_row(iy, &mut row);
            m = row.iter().fold(m, |m, v| m.max(v.abs()));
        }
        m
    }

    /// Largest `|self - other|` over the grid.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn hs_norm(&self, s: f64) -> Result<f64> {
        Ok(hs_norms(&[self], s)?[0])
    }
}

/// `H^s` norms of several separable fields on one grid, sharing the weight
/// evaluations: `||f||_s^2 = area * sum (1+kx^2+ky^2)^s |c(kx,ky)|^2`.
pub fn hs_norms(fields: &[&SeparableField], s: f64) -> Result<Vec<f64>> {
    let Some(first) = fields.first() else {
        return Ok(Vec::new());
    };
    let grid = first.grid.clone();
    for f in fields {
        grid.ensure_same(&f.grid)?;
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let gx = grid.x_axis();
    let gy = grid.y_axis();

    // Per field: x-spectra laid out [jx][term] and y-spectra [jy][term].
    let mut xs: Vec<Vec<Complex64>> = Vec::with_capacity(fields.len());
    let mut ys: Vec<Vec<Complex64>> = Vec::with_capacity(fields.len());
    for f in fields {
        let r = f.rank();
        let mut xr = vec![Complex64::default(); nx * r];
        let mut yr = vec![Complex64::default(); ny * r];
        for (i, t) in f.terms.iter().enumerate() {
            let cx = gx.forward(&t.x);
            let cy = gy.forward(&t.y);
            for jx in 0..nx {
                xr[jx * r + i] = cx[jx] * t.coef;
            }
            for jy in 0..ny {
                yr[jy * r + i] = cy[jy];
            }
        }
        xs.push(xr);
        ys.push(yr);
    }

    let kx2: Vec<f64> = gx.wavenumbers().iter().map(|k| k * k).collect();
    let ky = gy.wavenumbers();
    let mut acc = vec![0.0f64; fields.len()];
    let mut weights = vec![0.0f64; nx];
    // Real fields: |c(-k)| = |c(k)|, so sum half of the ky range twice.
    for jy in 0..=ny / 2 {
        let mult = if jy == 0 || jy == ny / 2 { 1.0 } else { 2.0 };
        let a = 1.0 + ky[jy] * ky[jy];
        for (w, k2) in weights.iter_mut().zip(&kx2) {
            *w = (a + k2).powf(s);
        }
        for (fi, f) in fields.iter().enumerate() {
            let r = f.rank();
            if r == 0 {
                continue;
            }
            let yv = &ys[fi][jy * r..(jy + 1) * r];
            if yv.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            let xr = &xs[fi];
            let mut sum = 0.0;
            for jx in 0..nx {
                let xv = &xr[jx * r..(jx + 1) * r];
                let c: Complex64 = xv.iter().zip(yv).map(|(a, b)| a * b).sum();
                sum += weights[jx] * c.norm_sqr();
            }
            acc[fi] += mult * sum;
        }
    }
    let area = grid.area();
    let out: Vec<f64> = acc.into_iter().map(|v| (area * v).sqrt()).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("separable H^s norm".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sobolev::hs_norm;

    fn sample(grid: &Grid2D) -> SeparableField {
        let xs = grid.x_axis().coords();
        let ys = grid.y_axis().coords();
        let a = SeparableField::outer(
            grid,
            0.7,
            Arc::new(xs.iter().map(|x| (-x * x).exp()).collect()),
            Arc::new(ys.iter().map(|y| (3.0 * y).sin() * (-0.5 * y * y).exp()).collect()),
        )
        .unwrap();
        let b = SeparableField::outer(
            grid,
            -1.3,
            Arc::new(xs.iter().map(|x| x * (-x * x).exp()).collect()),
            Arc::new(ys.iter().map(|y| (-y * y).exp()).collect()),
        )
        .unwrap();
        a.add(&b).unwrap()
    }

    #[test]
    fn dense_and_separable_agree() {
        let g = Grid2D::new(64, 128, 6.0, 7.0).unwrap();
        let f = sample(&g);
        let d = f.to_dense();
        assert!((f.value(10, 70) - d.at(10, 70)).abs() < 1e-15);
        assert!((f.max_abs() - d.max_abs()).abs() < 1e-15);
        for s in [0.0, 1.45, 2.5] {
            let a = f.hs_norm(s).unwrap();
            let b = hs_norm(&d, s).unwrap().value;
            assert!((a - b).abs() < 1e-11 * b, "s={s}: {a} vs {b}");
        }
        for axis in [Axis::X, Axis::Y] {
            for order in [1, 2] {
                let sd = f.derivative(axis, order).unwrap().to_dense();
                let dd = d.derivative(axis, order).unwrap();
                let err = sd.sub(&dd).unwrap().max_abs();
                assert!(err < 1e-12 * dd.max_abs());
            }
        }
    }

    #[test]
    fn products_and_batches() {
        let g = Grid2D::new(32, 32, 5.0, 5.0).unwrap();
        let f = sample(&g);
        let p = f.mul(&f).unwrap();
        assert_eq!(p.rank(), 4);
        let dense = f.to_dense().mul(&f.to_dense()).unwrap();
        assert!(p.to_dense().sub(&dense).unwrap().max_abs() < 1e-14);
        let norms = hs_norms(&[&f, &p, &SeparableField::zero(&g)], 1.0).unwrap();
        assert!((norms[0] - f.hs_norm(1.0).unwrap()).abs() < 1e-14 * norms[0]);
        assert!((norms[1] - p.hs_norm(1.0).unwrap()).abs() < 1e-14 * norms[1]);
        assert_eq!(norms[2], 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let g = Grid2D::new(32, 32, 5.0, 5.0).unwrap();
        let r = SeparableField::outer(&g, 1.0, Arc::new(vec![0.0; 16]), Arc::new(vec![0.0; 32]));
        assert!(r.is_err());
    }
}
