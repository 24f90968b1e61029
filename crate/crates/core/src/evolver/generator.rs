//! The evolution generator in `(r, s)` coordinates and its numerical
//! cross-check against the original `(X, Y)` form.
//!
//! In `(r, s)` form
//!
//! ```text
//! i hbar d/dt rho = [ -(hbar^2/M) d_r d_s + U(r + s/2) - U(r - s/2)
//!                     + i (beta Gamma hbar^2 / (2 X0 M)) G'(s/X0) d_s
//!                     + i Gamma (G(s/X0) - 1) ] rho
//! ```
//!
//! using `d_X - d_Y = 2 d_s` and `d_X^2 - d_Y^2 = 2 d_r d_s`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{wavenumbers, Fft2};
use crate::grid::{DensityMatrixGrid, GridGeometry};
use crate::model::{CorrelatorSpec, PhysicalParams, PotentialSpec};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Which terms of the generator are active. Disabling `kinetic` and
/// `friction` gives the infinite-mass configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Terms {
    pub kinetic: bool,
    pub potential: bool,
    pub friction: bool,
    pub decoherence: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self::all()
    }
}

impl Terms {
    pub fn all() -> Self {
        Self {
            kinetic: true,
            potential: true,
            friction: true,
            decoherence: true,
        }
    }
    pub fn infinite_mass() -> Self {
        Self {
            kinetic: false,
            friction: false,
            ..Self::all()
        }
    }
    pub fn without_friction() -> Self {
        Self {
            friction: false,
            ..Self::all()
        }
    }
}

/// Scalar coefficients of the `(r, s)` generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    /// Multiplies `d_r d_s` in `d rho/dt`: `hbar / M` (times i).
    pub kinetic: f64,
    /// Multiplies `G'(s/X0) d_s` in `d rho/dt`: `beta Gamma hbar / (2 X0 M)`.
    pub friction: f64,
    /// Multiplies `G - 1` in `d rho/dt`: `Gamma / hbar`.
    pub decoherence: f64,
}

impl Coefficients {
    pub fn new(p: &PhysicalParams) -> Self {
        let (m, hbar, x0) = (p.mass(), p.hbar(), p.correlation_length());
        Self {
            kinetic: hbar / m,
            friction: p.beta() * p.spreading_width() * hbar / (2.0 * x0 * m),
            decoherence: p.spreading_width() / hbar,
        }
    }
}

/// A complex Gaussian `exp(z^T A z / 2 + b^T z + c)` in two variables with
/// closed-form derivatives.
#[derive(Debug, Clone, Copy)]
struct QuadraticExp {
    a: [[Complex64; 2]; 2],
    b: [Complex64; 2],
    c: Complex64,
}

impl QuadraticExp {
    fn value(&self, z: [f64; 2]) -> Complex64 {
        let q = 0.5
            * (self.a[0][0] * z[0] * z[0] + 2.0 * self.a[0][1] * z[0] * z[1] + self.a[1][1] * z[1] * z[1]);
        (q + self.b[0] * z[0] + self.b[1] * z[1] + self.c).exp()
    }
    fn grad_factor(&self, z: [f64; 2], i: usize) -> Complex64 {
        self.a[i][0] * z[0] + self.a[i][1] * z[1] + self.b[i]
    }
    /// `d_i f`.
    fn d1(&self, z: [f64; 2], i: usize) -> Complex64 {
        self.grad_factor(z, i) * self.value(z)
    }
    /// `d_i d_j f`.
    fn d2(&self, z: [f64; 2], i: usize, j: usize) -> Complex64 {
        (self.grad_factor(z, i) * self.grad_factor(z, j) + self.a[i][j]) * self.value(z)
    }
    /// Same function expressed in new variables `w` with `z = T w`.
    fn change_variables(&self, t: [[f64; 2]; 2]) -> Self {
        let mut a = [[Complex64::new(0.0, 0.0); 2]; 2];
        let mut b = [Complex64::new(0.0, 0.0); 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        a[i][j] += t[k][i] * self.a[k][l] * t[l][j];
                    }
                }
            }
            for k in 0..2 {
                b[i] += t[k][i] * self.b[k];
            }
        }
        Self { a, b, c: self.c }
    }
}

fn random_test_function(rng: &mut ChaCha8Rng) -> QuadraticExp {
    // Negative-definite real part keeps the function bounded.
    let w1: f64 = rng.random_range(0.2..1.0);
    let w2: f64 = rng.random_range(0.2..1.0);
    let off: f64 = rng.random_range(-0.15..0.15);
    let mut a = [[Complex64::new(-w1, 0.0), Complex64::new(off, 0.0)], [
        Complex64::new(off, 0.0),
        Complex64::new(-w2, 0.0),
    ]];
    for row in a.iter_mut() {
        for v in row.iter_mut() {
            v.im = rng.random_range(-0.5..0.5);
        }
    }
    let im01: f64 = rng.random_range(-0.5..0.5);
    a[0][1].im = im01;
    a[1][0].im = im01;
    let b = [
        Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)),
        Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)),
    ];
    QuadraticExp {
        a,
        b,
        c: Complex64::new(0.0, 0.0),
    }
}

/// Relative tolerance for the `(X, Y)` versus `(r, s)` comparison.
pub const TRANSFORM_TOLERANCE: f64 = 1e-8;

/// Outcome of comparing both forms of the generator on random test functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformCheck {
    pub max_relative_mismatch: f64,
    pub n_functions: usize,
    pub n_points: usize,
}

/// `i hbar d rho/dt` as given in `(X, Y)` coordinates, applied to `f` at `(x, y)`.
fn xy_form(
    f: &QuadraticExp,
    x: f64,
    y: f64,
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    u: &PotentialSpec,
) -> Result<(Complex64, f64)> {
    let (m, hbar, x0) = (p.mass(), p.hbar(), p.correlation_length());
    let z = [x, y];
    let arg = (x - y) / x0;
    // P_X^2 - P_Y^2 = -hbar^2 (d_X^2 - d_Y^2); P_X - P_Y = -i hbar (d_X - d_Y).
    let kinetic = -hbar * hbar / (2.0 * m) * (f.d2(z, 0, 0) - f.d2(z, 1, 1));
    let potential = (u.eval(x)? - u.eval(y)?) * f.value(z);
    let friction = -(p.beta() * p.spreading_width() * hbar / (4.0 * x0 * m))
        * g.deriv_symmetric(arg)?
        * (-I * hbar)
        * (f.d1(z, 0) - f.d1(z, 1));
    let decoherence = I * p.spreading_width() * (g.eval(arg)? - 1.0) * f.value(z);
    let scale = kinetic.norm() + potential.norm() + friction.norm() + decoherence.norm();
    Ok((kinetic + potential + friction + decoherence, scale))
}

/// `i hbar d rho/dt` from the `(r, s)` form, applied to `h(r, s) = f(r + s/2, r - s/2)`.
fn rs_form(
    h: &QuadraticExp,
    r: f64,
    s: f64,
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    u: &PotentialSpec,
) -> Result<Complex64> {
    let (m, hbar, x0) = (p.mass(), p.hbar(), p.correlation_length());
    let w = [r, s];
    let kinetic = -(hbar * hbar / m) * h.d2(w, 0, 1);
    let potential = (u.eval(r + 0.5 * s)? - u.eval(r - 0.5 * s)?) * h.value(w);
    let friction = I * (p.beta() * p.spreading_width() * hbar * hbar / (2.0 * x0 * m))
        * g.deriv_symmetric(s / x0)?
        * h.d1(w, 1);
    let decoherence = I * p.spreading_width() * (g.eval(s / x0)? - 1.0) * h.value(w);
    Ok(kinetic + potential + friction + decoherence)
}

/// Applies the `(X, Y)` and `(r, s)` forms of the generator to random complex
/// Gaussian test functions at random points and compares them. Fails with
/// [`Error::TransformationMismatch`] above [`TRANSFORM_TOLERANCE`].
pub fn transform_equation(
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    u: &PotentialSpec,
    seed: u64,
) -> Result<TransformCheck> {
    const N_FUNCTIONS: usize = 8;
    const N_POINTS: usize = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_xy = [[1.0, 0.5], [1.0, -0.5]];
    let span = 2.0 * p.correlation_length();
    let mut worst: f64 = 0.0;
    for _ in 0..N_FUNCTIONS {
        let f = random_test_function(&mut rng);
        let h = f.change_variables(to_xy);
        for _ in 0..N_POINTS {
            let r: f64 = rng.random_range(-span..span);
            let mut s: f64 = rng.random_range(-span..span);
            if s == 0.0 {
                s = 0.5 * span;
            }
            let (lhs, scale) = xy_form(&f, r + 0.5 * s, r - 0.5 * s, p, g, u)?;
            let rhs = rs_form(&h, r, s, p, g, u)?;
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).norm() / scale);
            }
        }
    }
    if !(worst <= TRANSFORM_TOLERANCE) {
        return Err(Error::TransformationMismatch { mismatch: worst });
    }
    Ok(TransformCheck {
        max_relative_mismatch: worst,
        n_functions: N_FUNCTIONS,
        n_points: N_POINTS,
    })
}

/// Discretized generator `L` with `d rho/dt = L rho` on a periodic grid,
/// derivatives taken spectrally.
#[derive(Debug, Clone)]
pub struct Generator {
    geometry: GridGeometry,
    terms: Terms,
    coeffs: Coefficients,
    fft: Fft2,
    kr: Vec<f64>,
    ks: Vec<f64>,
    /// `(Gamma/hbar)(G - 1) - (i/hbar)(U(r + s/2) - U(r - s/2))`, row-major.
    local: Array2<Complex64>,
    /// Friction velocity `c(s) = friction * G'(s/X0)` per s column.
    drift: Vec<f64>,
}

impl Generator {
    pub fn new(
        geometry: GridGeometry,
        p: &PhysicalParams,
        g: &CorrelatorSpec,
        u: &PotentialSpec,
        terms: Terms,
    ) -> Result<Self> {
        let coeffs = Coefficients::new(p);
        let local = local_rates(&geometry, p, g, u, terms)?;
        let drift = friction_drift(&geometry, p, g, terms)?;
        Ok(Self {
            geometry,
            terms,
            coeffs,
            fft: Fft2::new(geometry.nr, geometry.ns),
            kr: wavenumbers(geometry.nr, geometry.r_extent),
            ks: wavenumbers(geometry.ns, geometry.s_extent),
            local,
            drift,
        })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }
    pub fn terms(&self) -> Terms {
        self.terms
    }
    pub fn coefficients(&self) -> Coefficients {
        self.coeffs
    }
    pub fn local_rates(&self) -> &Array2<Complex64> {
        &self.local
    }
    pub fn drift(&self) -> &[f64] {
        &self.drift
    }
    pub(crate) fn fft(&self) -> &Fft2 {
        &self.fft
    }
    pub(crate) fn wavenumbers(&self) -> (&[f64], &[f64]) {
        (&self.kr, &self.ks)
    }

    /// `L rho` for the values of a grid with this generator's geometry.
    pub fn apply(&self, rho: &Array2<Complex64>) -> Array2<Complex64> {
        let ns = self.geometry.ns;
        let mut out = Array2::zeros(rho.raw_dim());
        if self.terms.kinetic || self.terms.friction {
            let mut spec = rho.as_standard_layout().to_owned();
            self.fft.forward(&mut spec);
            if self.terms.kinetic {
                let mut mixed = spec.clone();
                let c = self.coeffs.kinetic;
                let ks = &self.ks;
                mixed
                    .as_slice_mut()
                    .unwrap()
                    .par_chunks_mut(ns)
                    .zip(self.kr.par_iter())
                    .for_each(|(row, &kr)| {
                        // (i hbar/M)(i kr)(i ks) = -i (hbar/M) kr ks
                        for (v, &k) in row.iter_mut().zip(ks) {
                            *v *= Complex64::new(0.0, -c * kr * k);
                        }
                    });
                self.fft.inverse(&mut mixed);
                out += &mixed;
            }
            if self.terms.friction {
                let mut ds = spec;
                let ks = &self.ks;
                ds.as_slice_mut().unwrap().par_chunks_mut(ns).for_each(|row| {
                    for (v, &k) in row.iter_mut().zip(ks) {
                        *v *= Complex64::new(0.0, k);
                    }
                });
                self.fft.inverse(&mut ds);
                let drift = &self.drift;
                ds.as_slice_mut().unwrap().par_chunks_mut(ns).for_each(|row| {
                    for (v, &c) in row.iter_mut().zip(drift) {
                        *v *= c;
                    }
                });
                out += &ds;
            }
        }
        out.zip_mut_with(&(&self.local * rho), |o, l| *o += l);
        out
    }

    /// `L` applied to a grid state.
    pub fn apply_grid(&self, rho: &DensityMatrixGrid) -> Result<Array2<Complex64>> {
        if rho.geometry != self.geometry {
            return Err(Error::Domain("state geometry differs from the generator's".into()));
        }
        Ok(self.apply(&rho.values))
    }
}

fn local_rates(
    geo: &GridGeometry,
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    u: &PotentialSpec,
    terms: Terms,
) -> Result<Array2<Complex64>> {
    let x0 = p.correlation_length();
    let hbar = p.hbar();
    let rate = p.spreading_width() / hbar;
    let decoherence: Vec<f64> = if terms.decoherence {
        geo.s_axis()
            .iter()
            .map(|&s| g.eval(s / x0).map(|v| rate * (v - 1.0)))
            .collect::<Result<_>>()?
    } else {
        vec![0.0; geo.ns]
    };
    let mut out = Array2::zeros((geo.nr, geo.ns));
    for i in 0..geo.nr {
        let r = geo.r(i);
        for j in 0..geo.ns {
            let s = geo.s(j);
            // The s = -S/2 column is its own periodic mirror, so odd
            // coefficients take their symmetric value 0 there.
            let du = if terms.potential && !u.is_free() && j != 0 {
                u.eval(r + 0.5 * s)? - u.eval(r - 0.5 * s)?
            } else {
                0.0
            };
            out[[i, j]] = Complex64::new(decoherence[j], -du / hbar);
        }
    }
    Ok(out)
}

fn friction_drift(geo: &GridGeometry, p: &PhysicalParams, g: &CorrelatorSpec, terms: Terms) -> Result<Vec<f64>> {
    if !terms.friction {
        return Ok(vec![0.0; geo.ns]);
    }
    let c = Coefficients::new(p).friction;
    let x0 = p.correlation_length();
    geo.s_axis()
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if j == 0 {
                Ok(0.0)
            } else {
                g.deriv_symmetric(s / x0).map(|d| c * d)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GaussianState;

    fn params() -> PhysicalParams {
        PhysicalParams::new(1.3, 0.8, 2.0, 0.7, 1.1).unwrap()
    }

    #[test]
    fn both_forms_agree_for_harmonic_potential() {
        let chk = transform_equation(
            &params(),
            &CorrelatorSpec::Gaussian,
            &PotentialSpec::Harmonic { stiffness: 1.7 },
            1,
        )
        .unwrap();
        assert!(chk.max_relative_mismatch < TRANSFORM_TOLERANCE);
    }

    #[test]
    fn both_forms_agree_for_other_models() {
        let cases = [
            (CorrelatorSpec::QuadraticTruncated, PotentialSpec::DoubleWell { a: 1.0, b: 0.5 }),
            (
                CorrelatorSpec::levy(1.5, crate::model::LevyCompletion::Exponential).unwrap(),
                PotentialSpec::Linear { slope: 0.3 },
            ),
            (CorrelatorSpec::Gaussian, PotentialSpec::Free),
        ];
        for (i, (g, u)) in cases.iter().enumerate() {
            transform_equation(&params(), g, u, 10 + i as u64).unwrap();
        }
    }

    #[test]
    fn wrong_friction_sign_is_detected() {
        // Flipping the sign of the (r, s) friction term must break agreement.
        let p = params();
        let g = CorrelatorSpec::Gaussian;
        let u = PotentialSpec::Free;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_test_function(&mut rng);
        let h = f.change_variables([[1.0, 0.5], [1.0, -0.5]]);
        let (r, s) = (0.3, 0.9);
        let (lhs, scale) = xy_form(&f, r + 0.5 * s, r - 0.5 * s, &p, &g, &u).unwrap();
        let rhs = rs_form(&h, r, s, &p, &g, &u).unwrap();
        let friction = I * (p.beta() * p.spreading_width() * p.hbar().powi(2) / (2.0 * p.correlation_length() * p.mass()))
            * g.deriv(s / p.correlation_length()).unwrap()
            * h.d1([r, s], 1);
        assert!((lhs - rhs).norm() / scale < 1e-12);
        assert!((lhs - (rhs - 2.0 * friction)).norm() / scale > 1e-3);
    }

    #[test]
    fn free_lossless_generator_is_mixed_derivative() {
        let p = params().with_spreading_width(1e-300).unwrap();
        let geo = GridGeometry::new(64, 64, 16.0, 16.0).unwrap();
        let gen = Generator::new(geo, &p, &CorrelatorSpec::Gaussian, &PotentialSpec::Free, Terms::all()).unwrap();
        let st = GaussianState {
            q0: 0.5,
            p0: 0.4,
            sigma_q: 1.0,
            sigma_p: 1.2,
        };
        let rho = st.density(geo, p.hbar()).unwrap();
        let l = gen.apply(&rho.values);
        // Closed-form mixed derivative of the Gaussian state.
        let (a, b) = (1.0 / (2.0 * st.sigma_q.powi(2)), st.sigma_p.powi(2) / (2.0 * p.hbar().powi(2)));
        let mut worst: f64 = 0.0;
        for i in 0..geo.nr {
            for j in 0..geo.ns {
                let (r, s) = (geo.r(i), geo.s(j));
                let v = rho.at(i, j);
                let dr = -2.0 * a * (r - st.q0);
                let ds = Complex64::new(-2.0 * b * s, st.p0 / p.hbar());
                let exact = I * p.hbar() / p.mass() * dr * ds * v;
                worst = worst.max((l[[i, j]] - exact).norm());
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn dissipative_part_vanishes_on_the_diagonal() {
        let p = params();
        let geo = GridGeometry::new(16, 32, 10.0, 10.0).unwrap();
        let gen = Generator::new(
            geo,
            &p,
            &CorrelatorSpec::Gaussian,
            &PotentialSpec::Harmonic { stiffness: 1.0 },
            Terms::all(),
        )
        .unwrap();
        let j0 = geo.s_zero();
        assert_eq!(gen.drift()[j0], 0.0);
        for i in 0..geo.nr {
            assert_eq!(gen.local_rates()[[i, j0]], Complex64::new(0.0, 0.0));
        }
    }
}
