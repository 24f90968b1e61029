//! Sub-steps of the split-operator scheme.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use super::generator::Generator;
use crate::error::Result;
use crate::model::{CorrelatorSpec, PhysicalParams};

const LAGRANGE_POINTS: usize = 12;
const MAX_SUBSTEPS: usize = 4096;

/// Interpolation stencil for one s column: first index (unwrapped) and weights.
#[derive(Debug, Clone)]
struct Stencil {
    base: i64,
    weights: [f64; LAGRANGE_POINTS],
}

/// Advances `d rho/dt = c(s) d_s rho` by moving every s sample to the foot of
/// its characteristic, `rho(s, t + dt) = rho(Phi_dt(s), t)`, with periodic
/// twelve-point Lagrange interpolation.
#[derive(Debug, Clone)]
pub struct FrictionStep {
    stencils: Vec<Stencil>,
    ns: usize,
}

impl FrictionStep {
    pub fn new(gen: &Generator, p: &PhysicalParams, g: &CorrelatorSpec, dt: f64) -> Result<Self> {
        let geo = gen.geometry();
        let ds = geo.ds();
        let coef = gen.coefficients().friction;
        let x0 = p.correlation_length();
        let velocity = |s: f64| -> Result<f64> { Ok(coef * g.deriv_symmetric(s / x0)?) };

        // Substeps resolve the drift's variation across one grid cell.
        let drift = gen.drift();
        let mut steep: f64 = 0.0;
        for j in 1..geo.ns {
            steep = steep.max((drift[j] - drift[j - 1]).abs() / ds);
        }
        let n_sub = ((dt * steep * 8.0).ceil() as usize).clamp(4, MAX_SUBSTEPS);
        let h = dt / n_sub as f64;

        let j0 = geo.s_zero() as i64;
        let stencils = (0..geo.ns)
            .map(|j| {
                if j == 0 {
                    // Self-mirrored column: the friction velocity is zero there.
                    return Ok(Stencil {
                        base: j as i64 - (LAGRANGE_POINTS as i64 / 2 - 1),
                        weights: lagrange_weights(0.0),
                    });
                }
                let s0 = geo.s(j);
                let mut s = s0;
                for _ in 0..n_sub {
                    let k1 = velocity(s)?;
                    let k2 = velocity(s + 0.5 * h * k1)?;
                    let k3 = velocity(s + 0.5 * h * k2)?;
                    let k4 = velocity(s + h * k3)?;
                    let next = s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    // The flow never crosses the fixed point at s = 0.
                    s = if next * s0 < 0.0 { 0.0 } else { next };
                }
                let v = s / ds;
                let fl = v.floor();
                let theta = v - fl;
                let base = j0 + fl as i64 - (LAGRANGE_POINTS as i64 / 2 - 1);
                Ok(Stencil {
                    base,
                    weights: lagrange_weights(theta),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stencils, ns: geo.ns })
    }

    pub fn apply(&self, values: &mut Array2<Complex64>) {
        let ns = self.ns;
        values.as_slice_mut().unwrap().par_chunks_mut(ns).for_each(|row| {
            let src = row.to_vec();
            for (out, st) in row.iter_mut().zip(&self.stencils) {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &w) in st.weights.iter().enumerate() {
                    let idx = (st.base + k as i64).rem_euclid(ns as i64) as usize;
                    acc += src[idx] * w;
                }
                *out = acc;
            }
        });
    }
}

/// Weights of the twelve-point Lagrange interpolant on nodes `-5..=6` at
/// fractional offset `theta` in `[0, 1)`.
fn lagrange_weights(theta: f64) -> [f64; LAGRANGE_POINTS] {
    let half = LAGRANGE_POINTS as i64 / 2 - 1;
    let nodes: Vec<f64> = (0..LAGRANGE_POINTS).map(|k| (k as i64 - half) as f64).collect();
    let mut w = [0.0; LAGRANGE_POINTS];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut num = 1.0;
        let mut den = 1.0;
        for (m, &xm) in nodes.iter().enumerate() {
            if m != k {
                num *= theta - xm;
                den *= nodes[k] - xm;
            }
        }
        *wk = num / den;
    }
    w
}

/// Pointwise exponential of the local rates over a time `tau`.
pub fn local_propagator(gen: &Generator, tau: f64) -> Array2<Complex64> {
    gen.local_rates().mapv(|rate| (rate * tau).exp())
}

/// Exact propagator of the mixed kinetic term in double-Fourier space, with
/// an optional two-thirds dealiasing mask.
#[derive(Debug, Clone)]
pub struct KineticStep {
    phase_rate: Vec<f64>,
    keep_r: Vec<bool>,
    keep_s: Vec<bool>,
    dealias: bool,
    nr: usize,
    ns: usize,
}

impl KineticStep {
    pub fn new(gen: &Generator, dealias: bool) -> Self {
        let geo = gen.geometry();
        let (kr, ks) = gen.wavenumbers();
        let c = gen.coefficients().kinetic;
        let mut phase_rate = Vec::with_capacity(geo.nr * geo.ns);
        for &a in kr {
            for &b in ks {
                phase_rate.push(-c * a * b);
            }
        }
        let keep = |k: &[f64], n: usize, extent: f64| -> Vec<bool> {
            let kmax = std::f64::consts::PI * n as f64 / extent;
            let nyquist = n / 2;
            k.iter()
                .enumerate()
                .map(|(j, v)| j != nyquist && v.abs() <= 2.0 / 3.0 * kmax)
                .collect()
        };
        Self {
            phase_rate,
            keep_r: keep(kr, geo.nr, geo.r_extent),
            keep_s: keep(ks, geo.ns, geo.s_extent),
            dealias,
            nr: geo.nr,
            ns: geo.ns,
        }
    }

    /// Applies `exp(tau * kinetic)` to `values` in place.
    pub fn apply(&self, gen: &Generator, values: &mut Array2<Complex64>, tau: f64) {
        let fft = gen.fft();
        fft.forward(values);
        let ns = self.ns;
        let keep_s = &self.keep_s;
        values
            .as_slice_mut()
            .unwrap()
            .par_chunks_mut(ns)
            .zip(self.phase_rate.par_chunks(ns))
            .zip(self.keep_r.par_iter())
            .for_each(|((row, rate), &kr_ok)| {
                for ((v, &w), &ks_ok) in row.iter_mut().zip(rate).zip(keep_s) {
                    if self.dealias && !(kr_ok && ks_ok) {
                        *v = Complex64::new(0.0, 0.0);
                    } else {
                        *v *= Complex64::from_polar(1.0, w * tau);
                    }
                }
            });
        debug_assert_eq!(values.len(), self.nr * self.ns);
        fft.inverse(values);
    }
}

/// Smooth `cos^(1/8)` damping of the outer `fraction` of the r extent at
/// both edges.
pub fn absorbing_mask(nr: usize, fraction: f64) -> Vec<f64> {
    let width = (fraction * nr as f64).round().max(1.0) as usize;
    (0..nr)
        .map(|i| {
            let depth = i.min(nr - 1 - i);
            if depth >= width {
                1.0
            } else {
                let x = (width - depth) as f64 / width as f64;
                (0.5 * std::f64::consts::PI * x).cos().max(0.0).powf(0.125)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_weights_reproduce_polynomials() {
        for &theta in &[0.0, 0.3, 0.77] {
            let w = lagrange_weights(theta);
            for deg in 0..12 {
                let v: f64 = w
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * ((k as f64 - 5.0).powi(deg)))
                    .sum();
                assert!((v - theta.powi(deg)).abs() < 1e-12 * 6f64.powi(deg), "deg {deg} theta {theta}");
            }
        }
    }

    #[test]
    fn mask_is_one_in_the_interior() {
        let m = absorbing_mask(64, 0.1);
        assert_eq!(m[32], 1.0);
        assert!(m[0] < 0.01);
        assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
