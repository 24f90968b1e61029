//! Direct numerical integration of the density-matrix evolution equation on
//! a periodic `(r, s)` grid.

mod generator;
mod positivity;
mod split;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use generator::{
    transform_equation, Coefficients, Generator, Terms, TransformCheck, TRANSFORM_TOLERANCE,
};
pub use positivity::{coarse_spectrum, PositivityRecord};
pub use split::absorbing_mask;

use crate::error::{Error, Result};
use crate::grid::DensityMatrixGrid;
use crate::model::{CorrelatorSpec, PhysicalParams, PotentialSpec};
use crate::numerics::fd_weights;
use split::{local_propagator, FrictionStep, KineticStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `A(dt/2) B(dt) A(dt/2)` with the kinetic term as A and
    /// `B = D(dt/2) F(dt) D(dt/2)`, D the local exponentials and F friction.
    StrangSplit,
    /// Classical fourth-order Runge–Kutta on the spectral generator.
    Rk4Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub dt: f64,
    pub scheme: Scheme,
    pub n_steps: usize,
    pub snapshot_stride: usize,
    pub dealias: bool,
    /// Fraction of the r extent damped at each edge; `None` disables the mask.
    pub absorbing_mask: Option<f64>,
    /// Allowed drift of the trace from its initial value.
    pub trace_tolerance: f64,
    pub hermiticity_tolerance: f64,
    /// Run the coarse eigenvalue monitor at every snapshot.
    pub positivity_monitor: bool,
    pub terms: Terms,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            scheme: Scheme::StrangSplit,
            n_steps: 100,
            snapshot_stride: 10,
            dealias: false,
            absorbing_mask: None,
            trace_tolerance: 1e-6,
            hermiticity_tolerance: 1e-6,
            positivity_monitor: false,
            terms: Terms::all(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("solver.dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if self.n_steps < 1 {
            return Err(Error::invalid("solver.n_steps", "must be >= 1"));
        }
        if self.snapshot_stride < 1 {
            return Err(Error::invalid("solver.snapshot_stride", "must be >= 1"));
        }
        if let Some(f) = self.absorbing_mask {
            if !(f > 0.0 && f < 0.5) {
                return Err(Error::invalid("solver.absorbing_mask", "fraction must lie in (0, 0.5)"));
            }
        }
        if !(self.trace_tolerance > 0.0 && self.hermiticity_tolerance > 0.0) {
            return Err(Error::invalid("solver", "tolerances must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConservationRecord {
    pub step: usize,
    pub time: f64,
    pub trace: Complex64,
    pub hermiticity_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// A conservation monitor exceeded its tolerance.
    EarlyStop { step: usize, reason: String },
    /// Non-finite values appeared; the last snapshot is the last valid state.
    Aborted { step: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<DensityMatrixGrid>,
    /// One record per completed step.
    pub conservation: Vec<ConservationRecord>,
    pub positivity: Vec<PositivityRecord>,
    pub provenance: String,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn last(&self) -> &DensityMatrixGrid {
        self.snapshots.last().expect("trajectory always holds the initial state")
    }
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }
    pub fn max_trace_error(&self) -> f64 {
        self.conservation
            .iter()
            .map(|c| (c.trace - 1.0).norm())
            .fold(0.0, f64::max)
    }
    pub fn max_hermiticity_defect(&self) -> f64 {
        self.conservation
            .iter()
            .map(|c| c.hermiticity_defect)
            .fold(0.0, f64::max)
    }
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Stepping machinery shared by [`evolve`] and callers that need to advance
/// a state without recording a trajectory.
#[derive(Debug, Clone)]
pub struct Propagator {
    gen: Generator,
    scheme: Scheme,
    dt: f64,
    kinetic: Option<KineticStep>,
    friction: Option<FrictionStep>,
    local_half: Array2<Complex64>,
    mask: Option<Vec<f64>>,
    dealias: bool,
}

impl Propagator {
    pub fn new(
        geometry: crate::grid::GridGeometry,
        p: &PhysicalParams,
        g: &CorrelatorSpec,
        u: &PotentialSpec,
        opts: &SolverOptions,
    ) -> Result<Self> {
        opts.validate()?;
        let gen = Generator::new(geometry, p, g, u, opts.terms)?;
        let kinetic = (opts.terms.kinetic || opts.dealias).then(|| KineticStep::new(&gen, opts.dealias));
        let friction = if opts.terms.friction {
            Some(FrictionStep::new(&gen, p, g, opts.dt)?)
        } else {
            None
        };
        let local_half = local_propagator(&gen, 0.5 * opts.dt);
        Ok(Self {
            scheme: opts.scheme,
            dt: opts.dt,
            kinetic,
            friction,
            local_half,
            mask: opts.absorbing_mask.map(|f| absorbing_mask(geometry.nr, f)),
            dealias: opts.dealias,
            gen,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    fn kinetic(&self, v: &mut Array2<Complex64>, tau: f64) {
        if let Some(k) = &self.kinetic {
            let tau = if self.gen.terms().kinetic { tau } else { 0.0 };
            k.apply(&self.gen, v, tau);
        }
    }

    fn local_and_friction(&self, v: &mut Array2<Complex64>) {
        v.zip_mut_with(&self.local_half, |a, b| *a *= b);
        if let Some(f) = &self.friction {
            f.apply(v);
        }
        v.zip_mut_with(&self.local_half, |a, b| *a *= b);
    }

    fn rk4(&self, v: &mut Array2<Complex64>) {
        let h = self.dt;
        let k1 = self.gen.apply(v);
        let k2 = self.gen.apply(&(&*v + &(&k1 * (0.5 * h))));
        let k3 = self.gen.apply(&(&*v + &(&k2 * (0.5 * h))));
        let k4 = self.gen.apply(&(&*v + &(&k3 * h)));
        v.zip_mut_with(&(k1 + (k2 + k3) * 2.0 + k4), |a, b| *a += b * (h / 6.0));
        if self.dealias {
            // A zero-time kinetic step applies only the dealiasing mask.
            if let Some(k) = &self.kinetic {
                k.apply(&self.gen, v, 0.0);
            }
        }
    }

    fn apply_mask(&self, v: &mut Array2<Complex64>) {
        if let Some(mask) = &self.mask {
            for (mut row, &m) in v.rows_mut().into_iter().zip(mask) {
                if m != 1.0 {
                    row.mapv_inplace(|x| x * m);
                }
            }
        }
    }

    /// Advances `values` by `n` steps, returning the values in sync with the
    /// step count.
    pub fn advance(&self, values: &mut Array2<Complex64>, n: usize) {
        match self.scheme {
            Scheme::Rk4Spectral => {
                for _ in 0..n {
                    self.rk4(values);
                    self.apply_mask(values);
                }
            }
            Scheme::StrangSplit => {
                if n == 0 {
                    return;
                }
                self.kinetic(values, 0.5 * self.dt);
                for i in 0..n {
                    self.local_and_friction(values);
                    self.apply_mask(values);
                    let tau = if i + 1 == n { 0.5 * self.dt } else { self.dt };
                    self.kinetic(values, tau);
                }
            }
        }
    }
}

fn provenance(p: &PhysicalParams, g: &CorrelatorSpec, u: &PotentialSpec, opts: &SolverOptions) -> String {
    format!(
        "params = {}\ncorrelator = {g:?}\npotential = {u:?}\nsolver = {}",
        serde_json::to_string(p).unwrap_or_default(),
        serde_json::to_string(opts).unwrap_or_default()
    )
}

/// Integrates the evolution equation from `rho0`, recording snapshots every
/// `snapshot_stride` steps (plus the initial and final states) and the
/// trace and Hermiticity monitors after every step.
pub fn evolve(
    rho0: &DensityMatrixGrid,
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    u: &PotentialSpec,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    rho0.validate(1e-6)?;
    let prop = Propagator::new(rho0.geometry, p, g, u, opts)?;
    let mut traj = Trajectory {
        snapshots: vec![rho0.clone()],
        conservation: Vec::with_capacity(opts.n_steps),
        positivity: Vec::new(),
        provenance: provenance(p, g, u, opts),
        status: RunStatus::Completed,
    };
    if opts.positivity_monitor {
        traj.positivity.push(coarse_spectrum(rho0));
    }
    let trace0 = rho0.trace();
    let mut state = rho0.clone();
    let dt = opts.dt;
    let strang = opts.scheme == Scheme::StrangSplit;
    // In the Strang loop consecutive half kinetic steps are fused, so the
    // state between snapshots lags by A(dt/2). Trace and Hermiticity are
    // invariant under A, so the monitors are unaffected.
    let mut lagging = false;
    for step in 1..=opts.n_steps {
        if strang {
            prop.kinetic(&mut state.values, if lagging { dt } else { 0.5 * dt });
            prop.local_and_friction(&mut state.values);
            prop.apply_mask(&mut state.values);
            lagging = true;
        } else {
            prop.rk4(&mut state.values);
            prop.apply_mask(&mut state.values);
        }
        state.time = rho0.time + step as f64 * dt;

        if !state.is_finite() {
            traj.status = RunStatus::Aborted {
                step,
                reason: "non-finite values in the density matrix".into(),
            };
            return Ok(traj);
        }
        let trace = state.trace();
        let herm = state.hermiticity_defect();
        traj.conservation.push(ConservationRecord {
            step,
            time: state.time,
            trace,
            hermiticity_defect: herm,
        });
        let drift = (trace - trace0).norm();
        let stop = if drift > opts.trace_tolerance {
            Some(format!("trace drifted by {drift:.3e} (tolerance {:.1e})", opts.trace_tolerance))
        } else if herm > opts.hermiticity_tolerance {
            Some(format!(
                "Hermiticity defect {herm:.3e} (tolerance {:.1e})",
                opts.hermiticity_tolerance
            ))
        } else {
            None
        };
        let record = stop.is_some() || step % opts.snapshot_stride == 0 || step == opts.n_steps;
        if record {
            if lagging {
                prop.kinetic(&mut state.values, 0.5 * dt);
                lagging = false;
            }
            traj.snapshots.push(state.clone());
            if opts.positivity_monitor {
                traj.positivity.push(coarse_spectrum(&state));
            }
        }
        if let Some(reason) = stop {
            traj.status = RunStatus::EarlyStop { step, reason };
            return Ok(traj);
        }
    }
    Ok(traj)
}

/// Normalized residual `||d rho/dt - L rho|| / ||d rho/dt||` of a candidate
/// solution, with the time derivative taken by finite differences across all
/// supplied slices at the middle one (second order for three slices, fourth
/// for five).
pub fn residual_norm(
    candidate: &[DensityMatrixGrid],
    p: &PhysicalParams,
    g: &CorrelatorSpec,
    u: &PotentialSpec,
    terms: Terms,
) -> Result<f64> {
    if candidate.len() < 3 {
        return Err(Error::Domain(format!(
            "residual needs at least three time slices, got {}",
            candidate.len()
        )));
    }
    let geo = candidate[0].geometry;
    if candidate.iter().any(|c| c.geometry != geo) {
        return Err(Error::Domain("time slices have different grids".into()));
    }
    let times: Vec<f64> = candidate.iter().map(|c| c.time).collect();
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("time slices must be strictly increasing".into()));
    }
    let mid = candidate.len() / 2;
    let w = fd_weights(times[mid], &times, 1);
    let mut dt_rho = Array2::<Complex64>::zeros((geo.nr, geo.ns));
    for (c, &wk) in candidate.iter().zip(&w) {
        dt_rho.scaled_add(Complex64::new(wk, 0.0), &c.values);
    }
    let gen = Generator::new(geo, p, g, u, terms)?;
    let l_rho = gen.apply(&candidate[mid].values);
    let num: f64 = dt_rho
        .iter()
        .zip(l_rho.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = dt_rho.iter().map(|a| a.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Domain("candidate is stationary; residual is undefined".into()));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests;
