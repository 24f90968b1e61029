//! Two-dimensional FFTs over row-major `(r, s)` arrays.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

/// Angular wavenumbers of an `n`-point periodic grid of length `extent`, in
/// FFT order. The unpaired Nyquist mode is reported as zero so that odd
/// symbols stay conjugate-symmetric.
pub fn wavenumbers(n: usize, extent: f64) -> Vec<f64> {
    let dk = 2.0 * PI / extent;
    (0..n)
        .map(|j| {
            if j < n / 2 {
                j as f64 * dk
            } else if j == n / 2 {
                0.0
            } else {
                (j as f64 - n as f64) * dk
            }
        })
        .collect()
}

#[derive(Clone)]
pub struct Fft2 {
    nr: usize,
    ns: usize,
    fwd_s: Arc<dyn Fft<f64>>,
    inv_s: Arc<dyn Fft<f64>>,
    fwd_r: Arc<dyn Fft<f64>>,
    inv_r: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("nr", &self.nr).field("ns", &self.ns).finish()
    }
}

const ROWS_PER_TASK: usize = 16;

impl Fft2 {
    pub fn new(nr: usize, ns: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nr,
            ns,
            fwd_s: planner.plan_fft_forward(ns),
            inv_s: planner.plan_fft_inverse(ns),
            fwd_r: planner.plan_fft_forward(nr),
            inv_r: planner.plan_fft_inverse(nr),
        }
    }

    fn rows(fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64], len: usize) {
        data.par_chunks_mut(len * ROWS_PER_TASK).for_each(|chunk| fft.process(chunk));
    }

    fn columns(&self, fft: &Arc<dyn Fft<f64>>, a: &mut Array2<Complex64>) {
        let (nr, ns) = (self.nr, self.ns);
        let src = a.as_slice().expect("standard layout");
        let mut t = vec![Complex64::new(0.0, 0.0); nr * ns];
        t.par_chunks_mut(nr).enumerate().for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = src[i * ns + j];
            }
        });
        Self::rows(fft, &mut t, nr);
        let dst = a.as_slice_mut().expect("standard layout");
        dst.par_chunks_mut(ns).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = t[j * nr + i];
            }
        });
    }

    /// Unnormalized forward transform along s only.
    pub fn forward_s(&self, a: &mut Array2<Complex64>) {
        Self::rows(&self.fwd_s, a.as_slice_mut().expect("standard layout"), self.ns);
    }

    /// Normalized inverse transform along s only.
    pub fn inverse_s(&self, a: &mut Array2<Complex64>) {
        Self::rows(&self.inv_s, a.as_slice_mut().expect("standard layout"), self.ns);
        let scale = 1.0 / self.ns as f64;
        a.par_mapv_inplace(|v| v * scale);
    }

    pub fn forward_r(&self, a: &mut Array2<Complex64>) {
        self.columns(&self.fwd_r, a);
    }

    pub fn inverse_r(&self, a: &mut Array2<Complex64>) {
        self.columns(&self.inv_r, a);
        let scale = 1.0 / self.nr as f64;
        a.par_mapv_inplace(|v| v * scale);
    }

    pub fn forward(&self, a: &mut Array2<Complex64>) {
        self.forward_s(a);
        self.forward_r(a);
    }

    pub fn inverse(&self, a: &mut Array2<Complex64>) {
        Self::rows(&self.inv_s, a.as_slice_mut().expect("standard layout"), self.ns);
        self.columns(&self.inv_r, a);
        let scale = 1.0 / (self.nr * self.ns) as f64;
        a.par_mapv_inplace(|v| v * scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let (nr, ns) = (8, 16);
        let fft = Fft2::new(nr, ns);
        let a = Array2::from_shape_fn((nr, ns), |(i, j)| {
            Complex64::new((i * 3 + j) as f64, (i as f64 - j as f64).sin())
        });
        let mut b = a.clone();
        fft.forward(&mut b);
        fft.inverse(&mut b);
        let err = (&a - &b).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn spectral_derivative_of_periodic_function() {
        let (nr, ns) = (4, 32);
        let extent = 2.0 * PI;
        let fft = Fft2::new(nr, ns);
        let s = |j: usize| -PI + j as f64 * extent / ns as f64;
        let mut a = Array2::from_shape_fn((nr, ns), |(_, j)| Complex64::new(s(j).sin(), 0.0));
        fft.forward_s(&mut a);
        let k = wavenumbers(ns, extent);
        for mut row in a.rows_mut() {
            for (v, &kk) in row.iter_mut().zip(&k) {
                *v *= Complex64::new(0.0, kk);
            }
        }
        fft.inverse_s(&mut a);
        for j in 0..ns {
            assert!((a[[1, j]].re - s(j).cos()).abs() < 1e-12);
        }
    }
}
