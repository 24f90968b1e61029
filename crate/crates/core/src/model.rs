//! Physical parameters, the bath correlator family and external potentials.
//!
//! Everything here is immutable after construction and cheap to clone, so
//! the same values can be shared by concurrent workers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::CubicSpline;

/// Subsystem mass, quantum of action, bath temperature, spreading width and
/// correlation length. Unit-agnostic: any self-consistent system works, with
/// the value of hbar carried explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PhysicalParams {
    mass: f64,
    hbar: f64,
    temperature: f64,
    spreading_width: f64,
    correlation_length: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    mass: f64,
    hbar: f64,
    temperature: f64,
    spreading_width: f64,
    correlation_length: f64,
}

impl TryFrom<RawParams> for PhysicalParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        PhysicalParams::new(r.mass, r.hbar, r.temperature, r.spreading_width, r.correlation_length)
    }
}

impl From<PhysicalParams> for RawParams {
    fn from(p: PhysicalParams) -> Self {
        RawParams {
            mass: p.mass,
            hbar: p.hbar,
            temperature: p.temperature,
            spreading_width: p.spreading_width,
            correlation_length: p.correlation_length,
        }
    }
}

impl PhysicalParams {
    pub fn new(
        mass: f64,
        hbar: f64,
        temperature: f64,
        spreading_width: f64,
        correlation_length: f64,
    ) -> Result<Self> {
        let check = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        check("mass", mass)?;
        check("hbar", hbar)?;
        check("temperature", temperature)?;
        check("spreading_width", spreading_width)?;
        check("correlation_length", correlation_length)?;
        Ok(Self {
            mass,
            hbar,
            temperature,
            spreading_width,
            correlation_length,
        })
    }

    /// All five parameters equal to one.
    pub fn unit() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }
    pub fn spreading_width(&self) -> f64 {
        self.spreading_width
    }
    pub fn correlation_length(&self) -> f64 {
        self.correlation_length
    }

    pub fn with_spreading_width(self, spreading_width: f64) -> Result<Self> {
        Self::new(self.mass, self.hbar, self.temperature, spreading_width, self.correlation_length)
    }
    pub fn with_correlation_length(self, correlation_length: f64) -> Result<Self> {
        Self::new(self.mass, self.hbar, self.temperature, self.spreading_width, correlation_length)
    }
}

/// How the small-argument law `1 - |x|^alpha` is continued to large |x|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "completion", rename_all = "kebab-case")]
pub enum LevyCompletion {
    /// `max(1 - |x|^alpha, lower)`.
    Clamped { lower: f64 },
    /// `exp(-|x|^alpha)`, the characteristic function of a symmetric stable law.
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorrelatorSpec {
    /// `exp(-x^2/2)`.
    Gaussian,
    /// `1 - x^2/2`, held at -1 for |x| >= 2.
    QuadraticTruncated,
    Levy { alpha: f64, completion: LevyCompletion },
    Tabulated(TabulatedCorrelator),
}

/// Even correlator given on `x >= 0`; the table is mirrored about zero and
/// interpolated with a natural cubic spline.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCorrelator {
    x: Vec<f64>,
    g: Vec<f64>,
    spline: CubicSpline,
}

impl TabulatedCorrelator {
    pub fn new(x: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if x.first() != Some(&0.0) {
            return Err(Error::invalid("correlator.table_x", "table must start at x = 0"));
        }
        if g.first() != Some(&1.0) {
            return Err(Error::invalid("correlator.table_g", "G(0) must equal 1"));
        }
        if g.iter().any(|v| v.abs() > 1.0) {
            return Err(Error::invalid("correlator.table_g", "|G| must not exceed 1"));
        }
        let mut xs: Vec<f64> = x.iter().skip(1).rev().map(|v| -v).collect();
        let mut ys: Vec<f64> = g.iter().skip(1).rev().copied().collect();
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&g);
        let spline = CubicSpline::new(xs, ys)?;
        Ok(Self { x, g, spline })
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }
    pub fn table(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.g)
    }
}

/// Relative step of the centered difference used for tabulated derivatives.
pub const TABULATED_FD_STEP: f64 = 1e-5;

impl CorrelatorSpec {
    pub fn levy(alpha: f64, completion: LevyCompletion) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::invalid("correlator.alpha", format!("must lie in (0, 2], got {alpha}")));
        }
        if let LevyCompletion::Clamped { lower } = completion {
            if !(-1.0..1.0).contains(&lower) {
                return Err(Error::invalid("correlator.lower_clamp", "must lie in [-1, 1)"));
            }
        }
        Ok(CorrelatorSpec::Levy { alpha, completion })
    }

    pub fn tabulated(x: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        Ok(CorrelatorSpec::Tabulated(TabulatedCorrelator::new(x, g)?))
    }

    /// True when the correlator behaves as `1 - x^2/2` at small argument.
    pub fn is_quadratic_at_origin(&self) -> bool {
        matches!(self, CorrelatorSpec::Gaussian | CorrelatorSpec::QuadraticTruncated)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("correlator argument must be finite, got {x}")));
        }
        let ax = x.abs();
        Ok(match self {
            CorrelatorSpec::Gaussian => (-0.5 * x * x).exp(),
            CorrelatorSpec::QuadraticTruncated => (1.0 - 0.5 * x * x).max(-1.0),
            CorrelatorSpec::Levy { alpha, completion } => match completion {
                LevyCompletion::Clamped { lower } => (1.0 - ax.powf(*alpha)).max(*lower),
                LevyCompletion::Exponential => (-ax.powf(*alpha)).exp(),
            },
            CorrelatorSpec::Tabulated(t) => {
                let v = t.spline.eval(ax).ok_or(Error::OutOfDomain {
                    what: "tabulated correlator",
                    value: x,
                    min: -t.x_max(),
                    max: t.x_max(),
                })?;
                if ax == 0.0 {
                    1.0
                } else {
                    v.clamp(-1.0, 1.0)
                }
            }
        })
    }

    /// `dG/dx`. Tabulated correlators use a centered difference with step
    /// `TABULATED_FD_STEP * max(1, |x|)`, pulled inside the table near its edge.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("correlator argument must be finite, got {x}")));
        }
        let ax = x.abs();
        let sign = x.signum();
        Ok(match self {
            CorrelatorSpec::Gaussian => -x * (-0.5 * x * x).exp(),
            CorrelatorSpec::QuadraticTruncated => {
                if ax < 2.0 {
                    -x
                } else {
                    0.0
                }
            }
            CorrelatorSpec::Levy { alpha, completion } => {
                if ax == 0.0 {
                    if *alpha <= 1.0 {
                        return Err(Error::SingularDerivative { x });
                    }
                    return Ok(0.0);
                }
                let core = -alpha * ax.powf(alpha - 1.0) * sign;
                match completion {
                    LevyCompletion::Clamped { lower } => {
                        if 1.0 - ax.powf(*alpha) > *lower {
                            core
                        } else {
                            0.0
                        }
                    }
                    LevyCompletion::Exponential => core * (-ax.powf(*alpha)).exp(),
                }
            }
            CorrelatorSpec::Tabulated(t) => {
                let h = TABULATED_FD_STEP * ax.max(1.0);
                let hi = t.x_max();
                if ax > hi {
                    return Err(Error::OutOfDomain {
                        what: "tabulated correlator",
                        value: x,
                        min: -hi,
                        max: hi,
                    });
                }
                let (a, b) = if ax + h > hi { (ax - 2.0 * h, ax) } else { (ax - h, ax + h) };
                let ga = t.spline.eval(a).unwrap_or(1.0);
                let gb = t.spline.eval(b).unwrap_or(1.0);
                sign * (gb - ga) / (b - a)
            }
        })
    }

    /// Friction-term profile `G'(x)` with the symmetric value 0 taken at the
    /// origin, where the Levy derivative is singular for alpha <= 1.
    pub fn deriv_symmetric(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            Ok(0.0)
        } else {
            self.deriv(x)
        }
    }

    /// Points where the correlator is not smooth; quadrature panels split there.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            CorrelatorSpec::Gaussian => vec![],
            CorrelatorSpec::QuadraticTruncated => vec![-2.0, 2.0],
            CorrelatorSpec::Levy { alpha, completion } => {
                let mut k = vec![0.0];
                if let LevyCompletion::Clamped { lower } = completion {
                    let edge = (1.0 - lower).powf(1.0 / alpha);
                    k.extend([-edge, edge]);
                }
                k
            }
            CorrelatorSpec::Tabulated(t) => {
                let mut k: Vec<f64> = t.x.iter().map(|v| -v).collect();
                k.extend_from_slice(&t.x);
                k
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Free,
    /// `U = slope * q`.
    Linear { slope: f64 },
    /// `U = k q^2 / 2`.
    Harmonic { stiffness: f64 },
    /// `U = -k q^2 / 2`.
    ParabolicBarrier { curvature: f64 },
    /// `U = b (q^2 - a^2)^2 / 4`.
    DoubleWell { a: f64, b: f64 },
    Tabulated(CubicSpline),
}

impl PotentialSpec {
    pub fn tabulated(q: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        Ok(PotentialSpec::Tabulated(CubicSpline::new(q, u)?))
    }

    pub fn is_free(&self) -> bool {
        matches!(self, PotentialSpec::Free)
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        Ok(match self {
            PotentialSpec::Free => 0.0,
            PotentialSpec::Linear { slope } => slope * q,
            PotentialSpec::Harmonic { stiffness } => 0.5 * stiffness * q * q,
            PotentialSpec::ParabolicBarrier { curvature } => -0.5 * curvature * q * q,
            PotentialSpec::DoubleWell { a, b } => {
                let d = q * q - a * a;
                0.25 * b * d * d
            }
            PotentialSpec::Tabulated(s) => {
                let (min, max) = s.domain();
                s.eval(q).ok_or(Error::OutOfDomain {
                    what: "tabulated potential",
                    value: q,
                    min,
                    max,
                })?
            }
        })
    }

    /// `dU/dq`; tabulated potentials use a centered difference.
    pub fn force_gradient(&self, q: f64) -> Result<f64> {
        Ok(match self {
            PotentialSpec::Free => 0.0,
            PotentialSpec::Linear { slope } => *slope,
            PotentialSpec::Harmonic { stiffness } => stiffness * q,
            PotentialSpec::ParabolicBarrier { curvature } => -curvature * q,
            PotentialSpec::DoubleWell { a, b } => b * q * (q * q - a * a),
            PotentialSpec::Tabulated(s) => {
                let h = 1e-6 * q.abs().max(1.0);
                let (min, max) = s.domain();
                let lo = (q - h).max(min);
                let hi = (q + h).min(max);
                (self.eval(hi)? - self.eval(lo)?) / (hi - lo)
            }
        })
    }
}
