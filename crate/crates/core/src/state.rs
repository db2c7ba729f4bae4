//! Gas constants and the four-component state `(rho, u, v, h)`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::spectral::{Grid2D, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasConstants {
    pub rho0: f64,
    pub h0: f64,
    pub gamma: f64,
}

impl GasConstants {
    pub fn new(rho0: f64, h0: f64, gamma: f64) -> Result<Self> {
        if !(rho0 > 0.0 && rho0.is_finite()) {
            return Err(LabError::InvalidParameter(format!("rho0 must be positive, got {rho0}")));
        }
        if !(h0 > 0.0 && h0.is_finite()) {
            return Err(LabError::InvalidParameter(format!("h0 must be positive, got {h0}")));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(LabError::InvalidParameter(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(Self { rho0, h0, gamma })
    }

    /// Background sound speed `sqrt(gamma*h0)`.
    pub fn sound_speed(&self) -> f64 {
        (self.gamma * self.h0).sqrt()
    }
}

impl Default for GasConstants {
    fn default() -> Self {
        Self { rho0: 1.0, h0: 1.0, gamma: 1.4 }
    }
}

/// Floors defining the hyperbolic region: `rho0 + rho >= rho_fraction*rho0`
/// and `h0 + h >= h_fraction*h0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardMargins {
    pub rho_fraction: f64,
    pub h_fraction: f64,
}

impl Default for GuardMargins {
    fn default() -> Self {
        Self { rho_fraction: 0.5, h_fraction: 0.5 }
    }
}

/// State at a single point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub rho: f64,
    pub u: f64,
    pub v: f64,
    pub h: f64,
}

impl PointState {
    pub fn check_margin(&self, c: &GasConstants, m: &GuardMargins) -> Result<()> {
        let r = c.rho0 + self.rho;
        let e = c.h0 + self.h;
        if !(r >= m.rho_fraction * c.rho0) {
            return Err(LabError::Margin(format!("rho0+rho = {r} below {}", m.rho_fraction * c.rho0)));
        }
        if !(e >= m.h_fraction * c.h0) {
            return Err(LabError::Margin(format!("h0+h = {e} below {}", m.h_fraction * c.h0)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StateVector {
    pub rho: SpectralField,
    pub u: SpectralField,
    pub v: SpectralField,
    pub h: SpectralField,
    pub constants: GasConstants,
}

impl StateVector {
    pub fn new(
        rho: SpectralField,
        u: SpectralField,
        v: SpectralField,
        h: SpectralField,
        constants: GasConstants,
    ) -> Result<Self> {
        for f in [&u, &v, &h] {
            rho.grid().ensure_same(f.grid())?;
        }
        Ok(Self { rho, u, v, h, constants })
    }

    pub fn zeros(grid: &Grid2D, constants: GasConstants) -> Self {
        let z = SpectralField::zeros(grid);
        Self { rho: z.clone(), u: z.clone(), v: z.clone(), h: z, constants }
    }

    pub fn grid(&self) -> &Grid2D {
        self.rho.grid()
    }

    pub fn components(&self) -> [&SpectralField; 4] {
        [&self.rho, &self.u, &self.v, &self.h]
    }

    pub fn point(&self, ix: usize, iy: usize) -> PointState {
        PointState {
            rho: self.rho.at(ix, iy),
            u: self.u.at(ix, iy),
            v: self.v.at(ix, iy),
            h: self.h.at(ix, iy),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::new(
            self.rho.sub(&other.rho)?,
            self.u.sub(&other.u)?,
            self.v.sub(&other.v)?,
            self.h.sub(&other.h)?,
            self.constants,
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rho: self.rho.scale(c),
            u: self.u.scale(c),
            v: self.v.scale(c),
            h: self.h.scale(c),
            constants: self.constants,
        }
    }

    /// `(min(rho0+rho), min(h0+h))` over the grid.
    pub fn margins(&self) -> (f64, f64) {
        let min = |f: &SpectralField| f.physical().iter().fold(f64::INFINITY, |m, v| m.min(*v));
        (self.constants.rho0 + min(&self.rho), self.constants.h0 + min(&self.h))
    }

    /// Checks the floors and reports the first offending grid location.
    pub fn check_margin(&self, m: &GuardMargins) -> Result<()> {
        let c = &self.constants;
        let nx = self.grid().nx();
        let rho_floor = m.rho_fraction * c.rho0;
        let h_floor = m.h_fraction * c.h0;
        for (idx, (r, h)) in self.rho.physical().iter().zip(self.h.physical()).enumerate() {
            if !(c.rho0 + r >= rho_floor) || !(c.h0 + h >= h_floor) {
                return Err(LabError::Margin(format!(
                    "at (ix={}, iy={}): rho0+rho = {}, h0+h = {} (floors {rho_floor}, {h_floor})",
                    idx % nx,
                    idx / nx,
                    c.rho0 + r,
                    c.h0 + h
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|f| f.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_validation() {
        assert!(GasConstants::new(1.0, 1.0, 1.4).is_ok());
        assert!(GasConstants::new(0.0, 1.0, 1.4).is_err());
        assert!(GasConstants::new(1.0, -1.0, 1.4).is_err());
        assert!(GasConstants::new(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn margin_reports_location() {
        let g = Grid2D::new(16, 16, 1.0, 1.0).unwrap();
        let mut s = StateVector::zeros(&g, GasConstants::default());
        assert!(s.check_margin(&GuardMargins::default()).is_ok());
        let mut h = vec![0.0; g.len()];
        h[3 * 16 + 5] = -0.6;
        s.h = SpectralField::from_physical(&g, h).unwrap();
        let err = s.check_margin(&GuardMargins::default()).unwrap_err().to_string();
        assert!(err.contains("ix=5, iy=3"), "{err}");
        assert_eq!(s.margins(), (1.0, 0.4));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = Grid2D::new(16, 16, 1.0, 1.0).unwrap();
        let b = Grid2D::new(32, 16, 1.0, 1.0).unwrap();
        let za = SpectralField::zeros(&a);
        let zb = SpectralField::zeros(&b);
        assert!(StateVector::new(za.clone(), za.clone(), zb, za, GasConstants::default()).is_err());
    }
}
