//! Physics extracted from density-matrix grids: Wigner function, marginals,
//! cumulants, diffusion-exponent fits and stable-law diagnostics.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::DensityMatrixGrid;
use crate::model::PhysicalParams;
use crate::numerics::{central_stencil, fit_line, LineFit};

/// Highest cumulant order the finite-difference estimator supports.
pub const MAX_CUMULANT_ORDER: usize = 8;
/// Accuracy order of the finite-difference stencils.
pub const STENCIL_ACCURACY: usize = 8;
/// Allowed deviation of `chi(0)` from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Phase-space quasi-distribution `W(r, p)` on the r grid and the momentum
/// grid conjugate to s.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WignerGrid {
    pub r_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    /// Row-major over `(r-index, p-index)`.
    #[serde(skip)]
    pub values: Array2<f64>,
    /// Largest imaginary part discarded from `W` (zero for Hermitian input).
    pub max_imaginary: f64,
}

impl WignerGrid {
    pub fn dr(&self) -> f64 {
        self.r_axis[1] - self.r_axis[0]
    }
    pub fn dp(&self) -> f64 {
        self.p_axis[1] - self.p_axis[0]
    }
    /// `integral W dp`, the position density.
    pub fn position_marginal(&self) -> Vec<f64> {
        let dp = self.dp();
        self.values.rows().into_iter().map(|row| row.sum() * dp).collect()
    }
    /// `integral W dr`, the momentum density.
    pub fn momentum_marginal(&self) -> MomentumMarginal {
        let dr = self.dr();
        MomentumMarginal {
            p_axis: self.p_axis.clone(),
            density: self.values.columns().into_iter().map(|c| c.sum() * dr).collect(),
        }
    }
}

/// A momentum probability density on a uniform ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentumMarginal {
    pub p_axis: Vec<f64>,
    pub density: Vec<f64>,
}

impl MomentumMarginal {
    pub fn dp(&self) -> f64 {
        self.p_axis[1] - self.p_axis[0]
    }
    pub fn total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.dp()
    }
    /// `chi(s) = integral f(p) exp(i p s / hbar) dp` by the rectangle rule.
    pub fn characteristic(&self, s: f64, hbar: f64) -> Complex64 {
        let dp = self.dp();
        self.p_axis
            .iter()
            .zip(&self.density)
            .map(|(&p, &f)| Complex64::from_polar(f, p * s / hbar))
            .sum::<Complex64>()
            * dp
    }
}

/// `W(r, p) = (1/(2 pi hbar)) integral ds exp(-i p s / hbar) rho(r, s)`,
/// evaluated exactly on the conjugate grid `p_m = m 2 pi hbar / S`.
pub fn wigner_transform(rho: &DensityMatrixGrid, p: &PhysicalParams) -> WignerGrid {
    let g = rho.geometry;
    let hbar = p.hbar();
    let ns = g.ns;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(ns);
    let scale = g.ds() / (2.0 * std::f64::consts::PI * hbar);
    let mut values = Array2::<f64>::zeros((g.nr, ns));
    let mut max_imag: f64 = 0.0;
    let mut buf = vec![Complex64::new(0.0, 0.0); ns];
    for (i, row) in rho.values.rows().into_iter().enumerate() {
        buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        fft.process(&mut buf);
        for m in 0..ns {
            // p index m maps to momentum (m - ns/2) dp; s starts at -S/2,
            // giving the alternating sign.
            let k = (m + ns / 2) % ns;
            let sign = if (m + ns / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
            let w = buf[k] * (sign * scale);
            values[[i, m]] = w.re;
            max_imag = max_imag.max(w.im.abs());
        }
    }
    WignerGrid {
        r_axis: g.r_axis(),
        p_axis: g.momentum_axis(hbar),
        values,
        max_imaginary: max_imag,
    }
}

/// `2 pi hbar sum |W|^2 dr dp` relative to `sum |rho|^2 dr ds`, minus one.
pub fn parseval_defect(rho: &DensityMatrixGrid, w: &WignerGrid, p: &PhysicalParams) -> f64 {
    let lhs: f64 = w.values.iter().map(|v| v * v).sum::<f64>()
        * w.dr()
        * w.dp()
        * 2.0
        * std::f64::consts::PI
        * p.hbar();
    let rhs = rho.l2_norm().powi(2);
    lhs / rhs - 1.0
}

/// Momentum density obtained directly from the characteristic function.
pub fn momentum_density(rho: &DensityMatrixGrid, p: &PhysicalParams) -> MomentumMarginal {
    let w = wigner_transform(rho, p);
    w.momentum_marginal()
}

/// Cumulants `kappa_1..kappa_max` with a per-order precision estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulantEstimate {
    /// `values[n - 1]` is the n-th cumulant.
    pub values: Vec<f64>,
    /// Difference between the estimate and a lower-accuracy one, per order.
    pub precision: Vec<f64>,
}

impl CumulantEstimate {
    pub fn order(&self, n: usize) -> f64 {
        self.values[n - 1]
    }
}

fn check_order(max_order: usize) -> Result<()> {
    if max_order == 0 || max_order > MAX_CUMULANT_ORDER {
        return Err(Error::Domain(format!(
            "cumulant order must lie in 1..={MAX_CUMULANT_ORDER}, got {max_order}"
        )));
    }
    Ok(())
}

/// Momentum cumulants `(-i hbar)^n d^n ln chi / ds^n` at `s = 0`, where
/// `chi(s) = integral dr rho(r, s)`, from centered finite differences on the
/// s grid.
pub fn momentum_cumulants(rho: &DensityMatrixGrid, p: &PhysicalParams, max_order: usize) -> Result<CumulantEstimate> {
    check_order(max_order)?;
    let chi = rho.momentum_characteristic();
    let g = rho.geometry;
    let j0 = g.s_zero();
    let chi0 = chi[j0];
    if (chi0 - 1.0).norm() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized { chi0: chi0.re });
    }
    let half = max_order.div_ceil(2) + STENCIL_ACCURACY / 2 - 1;
    if j0 < half || j0 + half >= g.ns {
        return Err(Error::Domain("s grid too small for the cumulant stencil".into()));
    }
    // ln chi with the phase unwrapped outward from s = 0.
    let mut log = vec![Complex64::new(0.0, 0.0); 2 * half + 1];
    log[half] = chi0.ln();
    for dir in [1i64, -1] {
        let mut prev = log[half].im;
        for k in 1..=half as i64 {
            let idx = (half as i64 + dir * k) as usize;
            let c = chi[(j0 as i64 + dir * k) as usize];
            if c.norm() == 0.0 {
                return Err(Error::IllConditioned("characteristic function vanishes near s = 0".into()));
            }
            let mut l = c.ln();
            let tau = 2.0 * std::f64::consts::PI;
            l.im += tau * ((prev - l.im) / tau).round();
            prev = l.im;
            log[idx] = l;
        }
    }
    let ds = g.ds();
    let hbar = p.hbar();
    let derivative = |n: usize, accuracy: usize| -> Complex64 {
        let w = central_stencil(n, accuracy);
        let m = (w.len() - 1) / 2;
        w.iter()
            .enumerate()
            .map(|(k, &wk)| log[half - m + k] * wk)
            .sum::<Complex64>()
            / ds.powi(n as i32)
    };
    let mut values = Vec::with_capacity(max_order);
    let mut precision = Vec::with_capacity(max_order);
    for n in 1..=max_order {
        let factor = Complex64::new(0.0, -hbar).powu(n as u32);
        let hi = (factor * derivative(n, STENCIL_ACCURACY)).re;
        let lo = (factor * derivative(n, STENCIL_ACCURACY - 2)).re;
        values.push(hi);
        precision.push((hi - lo).abs());
    }
    Ok(CumulantEstimate { values, precision })
}

/// Converts raw moments `m[0] = 1, m[1], ..` into cumulants `kappa_1..`.
fn moments_to_cumulants(m: &[f64]) -> Vec<f64> {
    let n_max = m.len() - 1;
    let mut kappa = vec![0.0; n_max + 1];
    let mut binom = vec![vec![0.0; n_max + 1]; n_max + 1];
    for n in 0..=n_max {
        binom[n][0] = 1.0;
        for k in 1..=n {
            binom[n][k] = binom[n - 1][k - 1] + if k < n { binom[n - 1][k] } else { 0.0 };
        }
    }
    for n in 1..=n_max {
        let mut acc = m[n];
        for k in 1..n {
            acc -= binom[n - 1][k - 1] * kappa[k] * m[n - k];
        }
        kappa[n] = acc;
    }
    kappa[1..].to_vec()
}

/// Cumulants of a density sampled on a uniform grid, with moments taken
/// about the mean for stability.
pub fn grid_cumulants(x: &[f64], density: &[f64], max_order: usize) -> Result<Vec<f64>> {
    check_order(max_order)?;
    let dx = x[1] - x[0];
    let total: f64 = density.iter().sum::<f64>() * dx;
    if !(total > 0.0) {
        return Err(Error::Domain("density has no positive mass".into()));
    }
    let mean = x.iter().zip(density).map(|(a, f)| a * f).sum::<f64>() * dx / total;
    let mut m = vec![0.0; max_order + 1];
    m[0] = 1.0;
    for (a, f) in x.iter().zip(density) {
        let d = a - mean;
        let mut pw = d;
        for mk in m.iter_mut().skip(1) {
            *mk += pw * f * dx / total;
            pw *= d;
        }
    }
    let mut k = moments_to_cumulants(&m);
    k[0] = mean;
    Ok(k)
}

/// Cumulants of the position density `rho(r, 0)`.
pub fn coordinate_cumulants(rho: &DensityMatrixGrid, _p: &PhysicalParams, max_order: usize) -> Result<Vec<f64>> {
    check_order(max_order)?;
    let tr = rho.trace();
    if (tr - 1.0).norm() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized { chi0: tr.re });
    }
    grid_cumulants(&rho.geometry.r_axis(), &rho.diagonal(), max_order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Variable {
    Q,
    P,
}

/// Least-squares power law `y = A t^nu` plus a straight line `y = a + slope t`
/// over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub nu: f64,
    pub nu_stderr: f64,
    pub prefactor: f64,
    pub prefactor_stderr: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    pub r_squared: f64,
}

/// Time series of cumulants computed from one set of snapshots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulantSeries {
    pub times: Vec<f64>,
    pub cumulants: BTreeMap<(Variable, usize), Vec<f64>>,
    pub fit: Option<ExponentFit>,
}

impl CumulantSeries {
    pub fn from_snapshots(
        snapshots: &[DensityMatrixGrid],
        p: &PhysicalParams,
        q_orders: usize,
        p_orders: usize,
    ) -> Result<Self> {
        let mut cumulants: BTreeMap<(Variable, usize), Vec<f64>> = BTreeMap::new();
        for snap in snapshots {
            if q_orders > 0 {
                let q = coordinate_cumulants(snap, p, q_orders)?;
                for (n, v) in q.into_iter().enumerate() {
                    cumulants.entry((Variable::Q, n + 1)).or_default().push(v);
                }
            }
            if p_orders > 0 {
                let k = momentum_cumulants(snap, p, p_orders)?;
                for (n, v) in k.values.into_iter().enumerate() {
                    cumulants.entry((Variable::P, n + 1)).or_default().push(v);
                }
            }
        }
        Ok(Self {
            times: snapshots.iter().map(|s| s.time).collect(),
            cumulants,
            fit: None,
        })
    }

    pub fn get(&self, var: Variable, order: usize) -> Option<&[f64]> {
        self.cumulants.get(&(var, order)).map(|v| v.as_slice())
    }
}

/// Minimum number of samples inside a fit window.
pub const MIN_FIT_POINTS: usize = 10;

/// Fits `ln y` against `ln t` and `y` against `t` over `window`.
pub fn fit_power_law(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<ExponentFit> {
    let (t, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(&t, _)| t >= window.0 && t <= window.1)
        .map(|(&t, &y)| (t, y))
        .unzip();
    if t.len() < MIN_FIT_POINTS {
        return Err(Error::Domain(format!(
            "fit window holds {} points, need at least {MIN_FIT_POINTS}",
            t.len()
        )));
    }
    if let Some(bad) = y.iter().zip(&t).find(|(&v, &tt)| !(v > 0.0) || !(tt > 0.0)) {
        return Err(Error::Domain(format!("non-positive value {} at t = {} in fit window", bad.0, bad.1)));
    }
    let lt: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let log_fit: LineFit = fit_line(&lt, &ly);
    let lin = fit_line(&t, &y);
    let prefactor = log_fit.intercept.exp();
    Ok(ExponentFit {
        nu: log_fit.slope,
        nu_stderr: log_fit.slope_stderr,
        prefactor,
        prefactor_stderr: prefactor * log_fit.intercept_stderr,
        slope: lin.slope,
        slope_stderr: lin.slope_stderr,
        window,
        n_points: t.len(),
        r_squared: log_fit.r_squared,
    })
}

/// Fits the second coordinate cumulant of `series` and stores the result.
pub fn fit_diffusion_exponent(series: &mut CumulantSeries, window: (f64, f64)) -> Result<ExponentFit> {
    let q2 = series
        .get(Variable::Q, 2)
        .ok_or_else(|| Error::Domain("series holds no second coordinate cumulant".into()))?
        .to_vec();
    let fit = fit_power_law(&series.times, &q2, window)?;
    series.fit = Some(fit);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailIndexFit {
    pub alpha: f64,
    pub alpha_stderr: f64,
    /// `ln c` in `chi = exp(-c |s|^alpha)`.
    pub log_scale: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Estimates the stability index from `ln(-ln |chi(s)|)` versus `ln s` over
/// `n_points` log-spaced s values in `window`.
pub fn stable_tail_index(
    marginal: &MomentumMarginal,
    p: &PhysicalParams,
    window: (f64, f64),
    n_points: usize,
) -> Result<TailIndexFit> {
    let total = marginal.total();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Unnormalized { chi0: total });
    }
    if !(window.0 > 0.0 && window.1 > window.0) || n_points < 3 {
        return Err(Error::Domain("tail-index window must satisfy 0 < s_min < s_max with >= 3 points".into()));
    }
    let hbar = p.hbar();
    let mut xs = Vec::with_capacity(n_points);
    let mut ys = Vec::with_capacity(n_points);
    let ratio = (window.1 / window.0).ln() / (n_points - 1) as f64;
    for k in 0..n_points {
        let s = window.0 * (ratio * k as f64).exp();
        let chi = marginal.characteristic(s, hbar);
        if !(chi.re > 0.0) || chi.norm() >= 1.0 {
            return Err(Error::IllConditioned(format!(
                "characteristic function {chi:.3e} at s = {s:.4} is outside (0, 1)"
            )));
        }
        xs.push(s.ln());
        ys.push((-chi.norm().ln()).ln());
    }
    let fit = fit_line(&xs, &ys);
    Ok(TailIndexFit {
        alpha: fit.slope,
        alpha_stderr: fit.slope_stderr,
        log_scale: fit.intercept,
        window,
        n_points,
    })
}

/// Exceedance of a density relative to the Gaussian with the same mean and
/// variance, at a fixed two-sided tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRatio {
    pub probability: f64,
    pub threshold: f64,
    pub exceedance: f64,
    pub ratio: f64,
}

pub const TAIL_PROBABILITIES: [f64; 3] = [1e-2, 1e-3, 1e-4];

pub fn tail_exceedance(x: &[f64], density: &[f64]) -> Result<Vec<TailRatio>> {
    let k = grid_cumulants(x, density, 2)?;
    let (mean, sd) = (k[0], k[1].sqrt());
    let dx = x[1] - x[0];
    let total: f64 = density.iter().sum::<f64>() * dx;
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    TAIL_PROBABILITIES
        .iter()
        .map(|&q| {
            let threshold = sd * normal.inverse_cdf(1.0 - 0.5 * q);
            let exceed: f64 = x
                .iter()
                .zip(density)
                .filter(|(&a, _)| (a - mean).abs() > threshold)
                .map(|(_, &f)| f * dx)
                .sum::<f64>()
                / total;
            Ok(TailRatio {
                probability: q,
                threshold,
                exceedance: exceed,
                ratio: exceed / q,
            })
        })
        .collect()
}

/// Density of the symmetric stable law with characteristic function
/// `exp(-|c k|^alpha)`, by Gauss–Legendre quadrature of the inverse Fourier
/// integral.
pub fn stable_density(alpha: f64, scale: f64, x: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-15 {
        return scale / (std::f64::consts::PI * (scale * scale + x * x));
    }
    if (alpha - 2.0).abs() < 1e-15 {
        let var = 2.0 * scale * scale;
        return (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    }
    // Integrand decays as exp(-(c k)^alpha); truncate where it is below 1e-18.
    let k_max = 41.5f64.powf(1.0 / alpha) / scale;
    let panel = (std::f64::consts::PI / x.abs().max(1e-300)).min(k_max / 64.0);
    crate::numerics::integrate_panels(
        |k| (k * x).cos() * (-(scale * k).powf(alpha)).exp(),
        0.0,
        k_max,
        panel,
        &[0.0],
    ) / std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GaussianState, GridGeometry};
    use approx::assert_relative_eq;

    fn state() -> (DensityMatrixGrid, PhysicalParams) {
        let p = PhysicalParams::unit();
        let geo = GridGeometry::new(128, 256, 20.0, 24.0).unwrap();
        let st = GaussianState {
            q0: 0.7,
            p0: 0.0,
            sigma_q: 1.1,
            sigma_p: 0.9,
        };
        (st.density(geo, 1.0).unwrap(), p)
    }

    #[test]
    fn wigner_of_gaussian_state_has_right_moments_and_marginals() {
        let (rho, p) = state();
        let w = wigner_transform(&rho, &p);
        assert!(w.max_imaginary < 1e-12);
        assert!(w.values.iter().all(|&v| v > -1e-12));
        let pos = w.position_marginal();
        for (a, b) in pos.iter().zip(rho.diagonal()) {
            assert!((a - b).abs() < 1e-8);
        }
        let mom = w.momentum_marginal();
        let k = grid_cumulants(&mom.p_axis, &mom.density, 2).unwrap();
        assert_relative_eq!(k[1], 0.81, max_relative = 1e-8);
        let kq = grid_cumulants(&w.r_axis, &pos, 2).unwrap();
        assert_relative_eq!(kq[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(kq[1], 1.21, max_relative = 1e-8);
        assert!(parseval_defect(&rho, &w, &p).abs() < 1e-10);
    }

    #[test]
    fn gaussian_momentum_cumulants() {
        let (rho, p) = state();
        let k = momentum_cumulants(&rho, &p, 8).unwrap();
        assert_relative_eq!(k.order(2), 0.81, max_relative = 1e-9);
        for n in [1, 3, 4, 5, 6, 7, 8] {
            assert!(k.order(n).abs() < 1e-8 + 10.0 * k.precision[n - 1], "order {n}: {}", k.order(n));
        }
    }

    #[test]
    fn momentum_cumulants_of_shifted_state() {
        let p = PhysicalParams::unit();
        let geo = GridGeometry::new(64, 256, 16.0, 24.0).unwrap();
        let rho = GaussianState {
            q0: 0.0,
            p0: 1.3,
            sigma_q: 1.0,
            sigma_p: 1.0,
        }
        .density(geo, 1.0)
        .unwrap();
        let k = momentum_cumulants(&rho, &p, 4).unwrap();
        assert_relative_eq!(k.order(1), 1.3, max_relative = 1e-9);
        assert_relative_eq!(k.order(2), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn unnormalized_state_is_rejected() {
        let (mut rho, p) = state();
        rho.values.mapv_inplace(|v| v * 1.01);
        assert!(matches!(momentum_cumulants(&rho, &p, 4), Err(Error::Unnormalized { .. })));
        assert!(momentum_cumulants(&rho, &p, 9).is_err());
    }

    #[test]
    fn coordinate_cumulants_of_gaussian() {
        let (rho, p) = state();
        let k = coordinate_cumulants(&rho, &p, 4).unwrap();
        assert_relative_eq!(k[1], 1.21, max_relative = 1e-10);
        assert!(k[2].abs() < 1e-10 && k[3].abs() < 1e-10);
    }

    #[test]
    fn cumulants_of_exponential_distribution() {
        // kappa_n = (n - 1)! for the unit exponential.
        let x: Vec<f64> = (0..200_000).map(|i| (i as f64 + 0.5) * 2e-4).collect();
        let f: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
        let k = grid_cumulants(&x, &f, 5).unwrap();
        for (n, fact) in [(2, 1.0), (3, 2.0), (4, 6.0), (5, 24.0)] {
            assert_relative_eq!(k[n - 1], fact, max_relative = 1e-5);
        }
    }

    #[test]
    fn planted_power_laws() {
        let t: Vec<f64> = (1..=50).map(|i| i as f64 * 0.2).collect();
        let y1: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        let f1 = fit_power_law(&t, &y1, (0.0, 100.0)).unwrap();
        assert!((f1.nu - 1.0).abs() < 1e-12 && (f1.slope - 2.0).abs() < 1e-12);
        let y3: Vec<f64> = t.iter().map(|v| v.powi(3)).collect();
        let f3 = fit_power_law(&t, &y3, (0.0, 100.0)).unwrap();
        assert!((f3.nu - 3.0).abs() < 1e-12);
        assert_relative_eq!(f3.prefactor, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn fit_rejects_short_or_non_positive_windows() {
        let t: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let mut y: Vec<f64> = t.clone();
        assert!(fit_power_law(&t, &y, (1.0, 5.0)).is_err());
        y[3] = -1.0;
        assert!(fit_power_law(&t, &y, (0.0, 100.0)).is_err());
    }

    fn marginal_from(f: impl Fn(f64) -> f64, p_max: f64, n: usize) -> MomentumMarginal {
        let dp = 2.0 * p_max / n as f64;
        let p_axis: Vec<f64> = (0..n).map(|i| -p_max + i as f64 * dp).collect();
        let density: Vec<f64> = p_axis.iter().map(|&p| f(p)).collect();
        MomentumMarginal { p_axis, density }
    }

    #[test]
    fn tail_index_of_gaussian_and_cauchy() {
        let p = PhysicalParams::unit();
        let gauss = marginal_from(|x| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(), 40.0, 1 << 14);
        let fit = stable_tail_index(&gauss, &p, (0.3, 2.0), 16).unwrap();
        assert!((fit.alpha - 2.0).abs() < 0.05, "{}", fit.alpha);
        // Cauchy tails need a wide grid; renormalize the truncated mass.
        let mut cauchy = marginal_from(|x| 1.0 / (std::f64::consts::PI * (1.0 + x * x)), 20000.0, 1 << 20);
        let tot = cauchy.total();
        cauchy.density.iter_mut().for_each(|v| *v /= tot);
        let fit = stable_tail_index(&cauchy, &p, (0.2, 2.0), 16).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.05, "{}", fit.alpha);
    }

    #[test]
    fn tail_index_window_crossing_zero_is_ill_conditioned() {
        let p = PhysicalParams::unit();
        // Uniform density on [-1, 1]: chi = sin(s)/s crosses zero at pi.
        let m = marginal_from(|x| if x.abs() < 1.0 { 0.5 } else { 0.0 }, 2.0, 4096);
        let tot = m.total();
        let m = MomentumMarginal {
            density: m.density.iter().map(|v| v / tot).collect(),
            ..m
        };
        assert!(matches!(stable_tail_index(&m, &p, (1.0, 5.0), 10), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn tail_ratios_of_gaussian_are_one() {
        let x: Vec<f64> = (0..400_001).map(|i| -20.0 + i as f64 * 1e-4).collect();
        let f: Vec<f64> = x.iter().map(|v| (-v * v / 2.0).exp()).collect();
        for t in tail_exceedance(&x, &f).unwrap() {
            assert!((t.ratio - 1.0).abs() < 1e-2, "{t:?}");
        }
    }

    #[test]
    fn stable_density_special_cases() {
        let x = 0.7;
        let via_quad = {
            let alpha = 1.0 + 1e-9;
            stable_density(alpha, 1.3, x)
        };
        assert_relative_eq!(via_quad, stable_density(1.0, 1.3, x), max_relative = 1e-6);
        let g = stable_density(2.0 - 1e-9, 1.0, x);
        assert_relative_eq!(g, stable_density(2.0, 1.0, x), max_relative = 1e-6);
    }
}
