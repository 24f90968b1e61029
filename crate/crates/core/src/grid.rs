//! The reduced density matrix sampled on a uniform `(r, s)` grid, with
//! `r = (X + Y)/2` the mean and `s = X - Y` the relative coordinate.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::is_power_of_two;

/// Point counts and spans of a periodic `(r, s)` grid. Each axis covers
/// `[-L/2, L/2)`, so `s = 0` sits at index `ns / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nr: usize,
    pub ns: usize,
    pub r_extent: f64,
    pub s_extent: f64,
}

impl GridGeometry {
    pub fn new(nr: usize, ns: usize, r_extent: f64, s_extent: f64) -> Result<Self> {
        if !is_power_of_two(nr) || nr < 2 {
            return Err(Error::invalid("grid.nr", format!("must be a power of two >= 2, got {nr}")));
        }
        if !is_power_of_two(ns) || ns < 2 {
            return Err(Error::invalid("grid.ns", format!("must be a power of two >= 2, got {ns}")));
        }
        for (name, v) in [("grid.r_extent", r_extent), ("grid.s_extent", s_extent)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(Self {
            nr,
            ns,
            r_extent,
            s_extent,
        })
    }

    pub fn dr(&self) -> f64 {
        self.r_extent / self.nr as f64
    }
    pub fn ds(&self) -> f64 {
        self.s_extent / self.ns as f64
    }
    pub fn r(&self, i: usize) -> f64 {
        -0.5 * self.r_extent + i as f64 * self.dr()
    }
    pub fn s(&self, j: usize) -> f64 {
        -0.5 * self.s_extent + j as f64 * self.ds()
    }
    pub fn r_axis(&self) -> Vec<f64> {
        (0..self.nr).map(|i| self.r(i)).collect()
    }
    pub fn s_axis(&self) -> Vec<f64> {
        (0..self.ns).map(|j| self.s(j)).collect()
    }
    pub fn s_zero(&self) -> usize {
        self.ns / 2
    }
    /// Index of `-s` on the periodic grid.
    pub fn mirror_s(&self, j: usize) -> usize {
        (self.ns - j) % self.ns
    }
    /// Momentum values conjugate to `s` (`p = hbar * wavenumber`), ascending.
    pub fn momentum_axis(&self, hbar: f64) -> Vec<f64> {
        let dp = 2.0 * PI * hbar / self.s_extent;
        (0..self.ns)
            .map(|j| (j as f64 - (self.ns / 2) as f64) * dp)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixGrid {
    pub geometry: GridGeometry,
    /// Row-major over `(r-index, s-index)`.
    pub values: Array2<Complex64>,
    pub time: f64,
}

impl DensityMatrixGrid {
    pub fn new(geometry: GridGeometry, values: Array2<Complex64>, time: f64) -> Result<Self> {
        if values.dim() != (geometry.nr, geometry.ns) {
            return Err(Error::invalid(
                "values",
                format!("shape {:?} does not match grid {}x{}", values.dim(), geometry.nr, geometry.ns),
            ));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().to_owned()
        };
        Ok(Self {
            geometry,
            values,
            time,
        })
    }

    pub fn from_fn<F: Fn(f64, f64) -> Complex64>(geometry: GridGeometry, time: f64, f: F) -> Self {
        let values = Array2::from_shape_fn((geometry.nr, geometry.ns), |(i, j)| {
            f(geometry.r(i), geometry.s(j))
        });
        Self {
            geometry,
            values,
            time,
        }
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[[i, j]]
    }

    /// `dr * sum_r rho(r, 0)`.
    pub fn trace(&self) -> Complex64 {
        let j0 = self.geometry.s_zero();
        self.values.column(j0).iter().sum::<Complex64>() * self.geometry.dr()
    }

    /// `max |rho(r, -s) - conj(rho(r, s))|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let g = &self.geometry;
        let mut worst: f64 = 0.0;
        for row in self.values.rows() {
            for j in 0..g.ns {
                let d = (row[g.mirror_s(j)] - row[j].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Position density `rho(r, 0)`, real part.
    pub fn diagonal(&self) -> Vec<f64> {
        self.values.column(self.geometry.s_zero()).iter().map(|v| v.re).collect()
    }

    /// `chi(s) = dr * sum_r rho(r, s)`, the momentum characteristic function
    /// `<exp(i P s / hbar)>`.
    pub fn momentum_characteristic(&self) -> Vec<Complex64> {
        let dr = self.geometry.dr();
        (0..self.geometry.ns)
            .map(|j| self.values.column(j).iter().sum::<Complex64>() * dr)
            .collect()
    }

    /// Grid L2 norm `sqrt(dr ds sum |rho|^2)`.
    pub fn l2_norm(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (sum * self.geometry.dr() * self.geometry.ds()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &DensityMatrixGrid) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest |rho| on the outermost rows and columns, relative to max |rho|.
    pub fn boundary_fraction(&self) -> f64 {
        let g = &self.geometry;
        let mut edge: f64 = 0.0;
        for j in 0..g.ns {
            edge = edge.max(self.values[[0, j]].norm()).max(self.values[[g.nr - 1, j]].norm());
        }
        for i in 0..g.nr {
            edge = edge.max(self.values[[i, 0]].norm()).max(self.values[[i, g.ns - 1]].norm());
        }
        edge / self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Checks the normalization, hermiticity and diagonal-positivity invariants.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Domain("density matrix contains non-finite values".into()));
        }
        let tr = self.trace();
        if (tr - 1.0).norm() > tolerance {
            return Err(Error::Domain(format!("trace {tr} differs from 1 by more than {tolerance}")));
        }
        let h = self.hermiticity_defect();
        if h > tolerance {
            return Err(Error::Domain(format!("hermiticity defect {h:.3e} exceeds {tolerance}")));
        }
        let scale = self.max_abs();
        let worst = self.diagonal().into_iter().fold(0.0, f64::min);
        if worst < -tolerance * scale {
            return Err(Error::Domain(format!("diagonal has negative value {worst:.3e}")));
        }
        Ok(())
    }
}

/// A Gaussian state with uncorrelated position and momentum spreads: a pure
/// wave packet when `sigma_q * sigma_p = hbar / 2`, a thermal-like mixture
/// when larger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub q0: f64,
    pub p0: f64,
    pub sigma_q: f64,
    pub sigma_p: f64,
}

impl GaussianState {
    /// Minimum-uncertainty packet with the ground-state width of an oscillator
    /// of mass `mass` and angular frequency `omega`.
    pub fn coherent(q0: f64, p0: f64, mass: f64, omega: f64, hbar: f64) -> Self {
        let sigma_q = (hbar / (2.0 * mass * omega)).sqrt();
        Self {
            q0,
            p0,
            sigma_q,
            sigma_p: hbar / (2.0 * sigma_q),
        }
    }

    /// Mixed state with momentum variance `mass * temperature`.
    pub fn thermal(q0: f64, p0: f64, sigma_q: f64, mass: f64, temperature: f64) -> Self {
        Self {
            q0,
            p0,
            sigma_q,
            sigma_p: (mass * temperature).sqrt(),
        }
    }

    pub fn validate(&self, hbar: f64) -> Result<()> {
        if !(self.sigma_q > 0.0 && self.sigma_p > 0.0) {
            return Err(Error::invalid("initial", "widths must be positive"));
        }
        if self.sigma_q * self.sigma_p < 0.5 * hbar * (1.0 - 1e-12) {
            return Err(Error::invalid(
                "initial",
                format!(
                    "sigma_q * sigma_p = {} violates the uncertainty bound hbar/2 = {}",
                    self.sigma_q * self.sigma_p,
                    0.5 * hbar
                ),
            ));
        }
        Ok(())
    }

    pub fn value(&self, r: f64, s: f64, hbar: f64) -> Complex64 {
        let norm = 1.0 / (2.0 * PI * self.sigma_q * self.sigma_q).sqrt();
        let amp = norm
            * (-(r - self.q0).powi(2) / (2.0 * self.sigma_q * self.sigma_q)
                - self.sigma_p * self.sigma_p * s * s / (2.0 * hbar * hbar))
                .exp();
        Complex64::from_polar(amp, self.p0 * s / hbar)
    }

    pub fn density(&self, geometry: GridGeometry, hbar: f64) -> Result<DensityMatrixGrid> {
        self.validate(hbar)?;
        Ok(DensityMatrixGrid::from_fn(geometry, 0.0, |r, s| self.value(r, s, hbar)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> GridGeometry {
        GridGeometry::new(128, 128, 24.0, 24.0).unwrap()
    }

    #[test]
    fn gaussian_state_is_normalized_and_hermitian() {
        let st = GaussianState {
            q0: 1.0,
            p0: 0.7,
            sigma_q: 1.2,
            sigma_p: 0.9,
        };
        let rho = st.density(geom(), 1.0).unwrap();
        assert!((rho.trace() - 1.0).norm() < 1e-12);
        assert!(rho.hermiticity_defect() < 1e-15);
        rho.validate(1e-10).unwrap();
        assert!(rho.boundary_fraction() < 1e-10);
    }

    #[test]
    fn uncertainty_violation_is_rejected() {
        let st = GaussianState {
            q0: 0.0,
            p0: 0.0,
            sigma_q: 0.1,
            sigma_p: 0.1,
        };
        assert!(st.density(geom(), 1.0).is_err());
    }

    #[test]
    fn geometry_rejects_non_power_of_two() {
        assert!(GridGeometry::new(100, 128, 1.0, 1.0).is_err());
        assert!(GridGeometry::new(128, 128, 0.0, 1.0).is_err());
        let g = geom();
        assert_eq!(g.s(g.s_zero()), 0.0);
        assert_eq!(g.mirror_s(g.s_zero()), g.s_zero());
        assert_eq!(g.s(g.mirror_s(3)), -g.s(3));
    }
}
