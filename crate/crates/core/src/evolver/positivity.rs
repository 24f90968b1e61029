//! Coarse-grained eigenvalue diagnostic for the density matrix in `(X, Y)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::grid::DensityMatrixGrid;

/// Largest coarse matrix dimension used by the monitor.
const MAX_POINTS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityRecord {
    pub time: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub dimension: usize,
}

impl PositivityRecord {
    /// Most negative eigenvalue relative to the largest one (zero if none).
    pub fn violation(&self) -> f64 {
        (-self.min_eigenvalue / self.max_eigenvalue.abs().max(f64::MIN_POSITIVE)).max(0.0)
    }
}

/// Samples `rho(X, Y)` on a coarse uniform `X` lattice whose spacing is a
/// multiple of the s spacing, interpolating cubically in r, and returns the
/// extreme eigenvalues of the quadrature-weighted Hermitian matrix.
pub fn coarse_spectrum(rho: &DensityMatrixGrid) -> PositivityRecord {
    let g = rho.geometry;
    let ds = g.ds();
    let stride = ((g.r_extent / (MAX_POINTS as f64 * ds)).ceil() as usize).max(1);
    let h = stride as f64 * ds;
    let half = (0.5 * g.r_extent / h).floor() as i64;
    let xs: Vec<i64> = (-half..half).collect();
    let n = xs.len();
    let j0 = g.s_zero() as i64;
    let r_min = g.r(0);
    let dr = g.dr();

    let value = |a: i64, b: i64| -> Complex64 {
        let j = j0 + (a - b) * stride as i64;
        if j < 0 || j >= g.ns as i64 {
            return Complex64::new(0.0, 0.0);
        }
        let r = 0.5 * (a + b) as f64 * h;
        let u = (r - r_min) / dr;
        let i = u.floor();
        if i < 1.0 || i as usize + 2 >= g.nr {
            return Complex64::new(0.0, 0.0);
        }
        let w = u - i;
        let (i, j) = (i as usize, j as usize);
        // Four-point Lagrange weights on nodes i-1..=i+2.
        let c = [
            -w * (w - 1.0) * (w - 2.0) / 6.0,
            (w + 1.0) * (w - 1.0) * (w - 2.0) / 2.0,
            -(w + 1.0) * w * (w - 2.0) / 2.0,
            (w + 1.0) * w * (w - 1.0) / 6.0,
        ];
        (0..4).map(|k| rho.values[[i + k - 1, j]] * c[k]).sum()
    };

    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for (ia, &a) in xs.iter().enumerate() {
        for (ib, &b) in xs.iter().enumerate().skip(ia) {
            let v = if ia == ib {
                Complex64::new(value(a, a).re, 0.0)
            } else {
                0.5 * (value(a, b) + value(b, a).conj())
            };
            m[(ia, ib)] = v * h;
            m[(ib, ia)] = v.conj() * h;
        }
    }
    let eig = m.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    PositivityRecord {
        time: rho.time,
        min_eigenvalue: min,
        max_eigenvalue: max,
        dimension: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GaussianState, GridGeometry};

    #[test]
    fn pure_state_has_one_unit_eigenvalue() {
        let geo = GridGeometry::new(128, 128, 16.0, 16.0).unwrap();
        let st = GaussianState::coherent(0.0, 0.5, 1.0, 1.0, 1.0);
        let rho = st.density(geo, 1.0).unwrap();
        let rec = coarse_spectrum(&rho);
        assert!((rec.max_eigenvalue - 1.0).abs() < 1e-3, "{rec:?}");
        assert!(rec.violation() < 1e-6, "{rec:?}");
    }
}
