use std::f64::consts::PI;

use num_complex::Complex64;
use qkinetic::analytic::free_propagate;
use qkinetic::{CorrelatorSpec, GaussianState, GridGeometry, PhysicalParams};
use statrs::function::erf::erf;

const MASS: f64 = 1.0;
const HBAR: f64 = 1.0;
const GAMMA: f64 = 1.0;
const X0: f64 = 2.0;
const T: f64 = 1.0;

fn initial(r: f64, s: f64) -> Complex64 {
    let (q0, p0, sq, sp) = (0.3, 0.5, 1.0, 1.0);
    let amp = (-(r - q0).powi(2) / (2.0 * sq * sq) - sp * sp * s * s / (2.0 * HBAR * HBAR)).exp()
        / (2.0 * PI * sq * sq).sqrt();
    Complex64::from_polar(amp, p0 * s / HBAR)
}

/// Integral of `exp(-x^2/(2 X0^2)) - 1` over `[a, b]`.
fn decoherence_integral(a: f64, b: f64) -> f64 {
    let c = X0 * (PI / 2.0).sqrt();
    let w = std::f64::consts::SQRT_2 * X0;
    c * (erf(b / w) - erf(a / w)) - (b - a)
}

/// Direct midpoint quadrature over source position and momentum.
fn oracle(r: f64, s: f64) -> Complex64 {
    let (r_lo, r_hi, nr) = (-12.0, 12.0, 960);
    let (k_lo, k_hi, nk) = (-12.0, 12.0, 1200);
    let hr = (r_hi - r_lo) / nr as f64;
    let hk = (k_hi - k_lo) / nk as f64;
    let mut total = Complex64::new(0.0, 0.0);
    for a in 0..nk {
        let k = k_lo + (a as f64 + 0.5) * hk;
        let src = s - k * T / MASS;
        let damp = GAMMA * MASS / (HBAR * k) * decoherence_integral(src, s);
        let mut inner = Complex64::new(0.0, 0.0);
        for b in 0..nr {
            let rp = r_lo + (b as f64 + 0.5) * hr;
            inner += initial(rp, src) * Complex64::from_polar(1.0, k * (r - rp) / HBAR);
        }
        total += inner * damp.exp();
    }
    total * hr * hk / (2.0 * PI * HBAR)
}

#[test]
fn free_propagator_matches_direct_quadrature() {
    let p = PhysicalParams::new(MASS, HBAR, 1.0, GAMMA, X0).unwrap();
    let geo = GridGeometry::new(128, 128, 32.0, 32.0).unwrap();
    let state = GaussianState {
        q0: 0.3,
        p0: 0.5,
        sigma_q: 1.0,
        sigma_p: 1.0,
    };
    let rho0 = state.density(geo, HBAR).unwrap();
    let rho = free_propagate(&rho0, &p, &CorrelatorSpec::Gaussian, T).unwrap();
    let scale = rho.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for &i in &[56, 62, 67, 72] {
        for &j in &[58, 64, 66, 72] {
            let (r, s) = (geo.r(i), geo.s(j));
            let d = (rho.values[[i, j]] - oracle(r, s)).norm() / scale;
            worst = worst.max(d);
        }
    }
    assert!(worst < 1e-6, "relative deviation {worst:e}");
}
