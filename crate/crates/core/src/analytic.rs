//! Closed-form and quadrature reference solutions used as oracles for the
//! numerical evolver.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{wavenumbers, Fft2};
use crate::grid::DensityMatrixGrid;
use crate::model::{CorrelatorSpec, PhysicalParams};
use crate::numerics::integrate_panels;

/// Panel width, in units of the correlation length, for the inner integral
/// of `G - 1`.
const PANEL_WIDTH: f64 = 0.25;

/// Columns whose spectral weight falls below this fraction of the largest are
/// ignored when checking for aliasing.
const SIGNIFICANT_WEIGHT: f64 = 1e-20;

/// `integral_{a}^{b} (G(s'/X0) - 1) ds'`.
pub fn integrate_g_minus_one(g: &CorrelatorSpec, x0: f64, a: f64, b: f64) -> f64 {
    let kinks = g.kinks();
    x0 * integrate_panels(
        |x| g.eval(x).map(|v| v - 1.0).unwrap_or(f64::NAN),
        a / x0,
        b / x0,
        PANEL_WIDTH,
        &kinks,
    )
}

/// Largest `|k|` (momentum units) carrying spectral weight in `rho`, taken
/// over the Fourier transform along r.
fn significant_k_max(spectrum: &Array2<Complex64>, k: &[f64]) -> f64 {
    let weights: Vec<f64> = spectrum
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.norm_sqr()).sum())
        .collect();
    let top = weights.iter().copied().fold(0.0, f64::max);
    weights
        .iter()
        .zip(k)
        .filter(|(&w, _)| w > SIGNIFICANT_WEIGHT * top)
        .map(|(_, &k)| k.abs())
        .fold(0.0, f64::max)
}

/// Largest time for which the free-motion shift `k t / M` of every
/// significant Fourier column stays inside the s extent.
pub fn max_safe_time(rho0: &DensityMatrixGrid, p: &PhysicalParams) -> f64 {
    let g = rho0.geometry;
    let fft = Fft2::new(g.nr, g.ns);
    let mut spec = rho0.values.clone();
    fft.forward_r(&mut spec);
    let k: Vec<f64> = wavenumbers(g.nr, g.r_extent).iter().map(|v| v * p.hbar()).collect();
    let kmax = significant_k_max(&spec, &k);
    if kmax == 0.0 {
        f64::INFINITY
    } else {
        g.s_extent * p.mass() / kmax
    }
}

/// Free-motion (`U = 0`) solution without the friction term:
///
/// `rho(r,s,t) = int dr' dk/(2 pi hbar) rho0(r', s - k t/M)
///      exp[i k (r - r')/hbar + (Gamma M/(hbar k)) int_{s-kt/M}^{s} (G(s'/X0) - 1) ds']`.
///
/// The r' integral is a discrete Fourier transform, the shifted argument is
/// evaluated by band-limited interpolation (zero outside the s domain) and
/// the k -> 0 columns use the limit `(Gamma t/hbar)(G(s/X0) - 1)`.
pub fn free_propagate(
    rho0: &DensityMatrixGrid,
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    t: f64,
) -> Result<DensityMatrixGrid> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
    }
    let geo = rho0.geometry;
    let fft = Fft2::new(geo.nr, geo.ns);
    let mut spec = rho0.values.clone();
    fft.forward_r(&mut spec);

    let hbar = p.hbar();
    let mass = p.mass();
    let gamma = p.spreading_width();
    let x0 = p.correlation_length();
    let k: Vec<f64> = wavenumbers(geo.nr, geo.r_extent).iter().map(|v| v * hbar).collect();
    let kmax = significant_k_max(&spec, &k);
    let max_shift = kmax * t / mass;
    if max_shift > geo.s_extent {
        return Err(Error::Aliasing {
            max_shift,
            s_extent: geo.s_extent,
            max_safe_time: geo.s_extent * mass / kmax,
        });
    }

    let ds = geo.ds();
    let s_axis = geo.s_axis();
    let kappa_s = wavenumbers(geo.ns, geo.s_extent);
    let k_threshold = 1e-8 * hbar / ds;
    let half = 0.5 * geo.s_extent;
    let limit_factor: Vec<f64> = s_axis
        .iter()
        .map(|&s| g.eval(s / x0).map(|v| gamma * t / hbar * (v - 1.0)))
        .collect::<Result<_>>()?;

    let planner_fwd = rustfft::FftPlanner::new().plan_fft_forward(geo.ns);
    let planner_inv = rustfft::FftPlanner::new().plan_fft_inverse(geo.ns);

    spec.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .zip(k.par_iter())
        .for_each(|(mut row, &kk)| {
            let shift = kk * t / mass;
            let mut buf: Vec<Complex64> = row.iter().copied().collect();
            if shift != 0.0 {
                planner_fwd.process(&mut buf);
                for (v, &q) in buf.iter_mut().zip(&kappa_s) {
                    *v *= Complex64::from_polar(1.0 / geo.ns as f64, -q * shift);
                }
                planner_inv.process(&mut buf);
            }
            for (j, v) in buf.iter_mut().enumerate() {
                let s = s_axis[j];
                let src = s - shift;
                if src < -half || src >= half {
                    *v = Complex64::new(0.0, 0.0);
                    continue;
                }
                let exponent = if kk.abs() < k_threshold {
                    limit_factor[j]
                } else {
                    gamma * mass / (hbar * kk) * integrate_g_minus_one(g, x0, src, s)
                };
                *v *= exponent.exp();
            }
            for (dst, v) in row.iter_mut().zip(buf) {
                *dst = v;
            }
        });

    fft.inverse_r(&mut spec);
    if spec.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NumericalAbort("free propagator produced non-finite values".into()));
    }
    DensityMatrixGrid::new(geo, spec, rho0.time + t)
}

/// Infinite-mass limit: only the `i Gamma (G - 1)` term acts, giving
/// `rho0(r, s) exp[(Gamma t / hbar)(G(s/X0) - 1)]`.
pub fn decoherence_limit(
    rho0: &DensityMatrixGrid,
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    t: f64,
) -> Result<DensityMatrixGrid> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
    }
    let geo = rho0.geometry;
    let rate = p.spreading_width() * t / p.hbar();
    let factor: Vec<f64> = geo
        .s_axis()
        .iter()
        .map(|&s| g.eval(s / p.correlation_length()).map(|v| (rate * (v - 1.0)).exp()))
        .collect::<Result<_>>()?;
    let mut out = rho0.clone();
    for mut row in out.values.rows_mut() {
        for (v, f) in row.iter_mut().zip(&factor) {
            *v *= *f;
        }
    }
    out.time = rho0.time + t;
    Ok(out)
}

fn double_factorial_odd(n: u32) -> f64 {
    // (2n - 1)!!
    (1..=n).map(|k| (2 * k - 1) as f64).product()
}

/// Equilibrium even momentum cumulant for the Gaussian correlator:
/// `(-1)^(n-1) (2n-1)!!/n (M X0^2 / (hbar^2 beta)) (hbar/X0)^(2n)`, `n >= 2`.
pub fn momentum_cumulant_formula(n: u32, p: &PhysicalParams) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("cumulant formula is stated for n >= 2, got {n}")));
    }
    Ok(cumulant_formula_unchecked(n, p))
}

fn cumulant_formula_unchecked(n: u32, p: &PhysicalParams) -> f64 {
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    let x0 = p.correlation_length();
    let hbar = p.hbar();
    sign * double_factorial_odd(n) / n as f64 * p.mass() * x0 * x0 / (hbar * hbar * p.beta())
        * (hbar / x0).powi(2 * n as i32)
}

/// Equilibrium second momentum cumulant `2 M T` for a correlator that is
/// quadratic at small argument.
pub fn equilibrium_p2(p: &PhysicalParams) -> f64 {
    2.0 * p.mass() * p.temperature()
}

/// The even-cumulant formula evaluated at `n = 1`, which reduces to `M T`.
pub fn equilibrium_p2_formula_extension(p: &PhysicalParams) -> f64 {
    cumulant_formula_unchecked(1, p)
}

/// Stationary momentum characteristic function of the free equation with
/// friction, `ln chi(s) = -(2 X0 M/(beta hbar^2)) int_0^s (G(u/X0) - 1)/G'(u/X0) du`.
///
/// Valid for correlators strictly decreasing on `(0, s]`.
pub fn stationary_log_characteristic(p: &PhysicalParams, g: &CorrelatorSpec, s: f64) -> Result<f64> {
    let x0 = p.correlation_length();
    let pref = 2.0 * x0 * p.mass() / (p.beta() * p.hbar() * p.hbar());
    let x_end = s.abs() / x0;
    if x_end == 0.0 {
        return Ok(0.0);
    }
    let failure = std::cell::Cell::new(None);
    let integrand = |x: f64| -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        match (g.eval(x), g.deriv(x)) {
            (Ok(v), Ok(d)) if d < 0.0 => (v - 1.0) / d,
            _ => {
                failure.set(Some(x));
                f64::NAN
            }
        }
    };
    let val = integrate_panels(integrand, 0.0, x_end, PANEL_WIDTH, &[]);
    if let Some(x) = failure.get() {
        return Err(Error::Domain(format!("correlator is not strictly decreasing at x = {x}")));
    }
    Ok(-pref * x0 * val)
}
