//! The classical Kramers/Langevin limit: friction and diffusion coefficients
//! and a stochastic walker ensemble.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PhysicalParams, PotentialSpec};

/// Largest allowed `dt * gamma` for a Langevin step.
pub const STABILITY_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassicalCoefficients {
    /// Momentum relaxation rate `beta Gamma hbar / (2 M X0^2)`.
    pub gamma: f64,
    /// Spatial diffusion `2 X0^2 / (beta^2 Gamma hbar)`.
    pub d_qq: f64,
    /// Momentum diffusion `M gamma T`.
    pub d_pp: f64,
}

impl ClassicalCoefficients {
    /// `M beta gamma D_QQ`, identically one.
    pub fn einstein_ratio(&self, p: &PhysicalParams) -> f64 {
        p.mass() * p.beta() * self.gamma * self.d_qq
    }
}

pub fn coefficients(p: &PhysicalParams) -> ClassicalCoefficients {
    let (m, hbar, beta, gd, x0) = (
        p.mass(),
        p.hbar(),
        p.beta(),
        p.spreading_width(),
        p.correlation_length(),
    );
    let gamma = beta * gd * hbar / (2.0 * m * x0 * x0);
    ClassicalCoefficients {
        gamma,
        d_qq: 2.0 * x0 * x0 / (beta * beta * gd * hbar),
        d_pp: m * gamma * p.temperature(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    EulerMaruyama,
    /// Kick, drift, exact Ornstein–Uhlenbeck, drift, kick.
    Baoab,
}

/// Independent walkers, each with its own random stream derived from
/// `(seed, walker index)`, so results do not depend on how walkers are
/// partitioned across threads.
#[derive(Debug, Clone)]
pub struct LangevinEnsemble {
    pub positions: Vec<f64>,
    pub momenta: Vec<f64>,
    pub seed: u64,
    pub time: f64,
    streams: Vec<ChaCha8Rng>,
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl LangevinEnsemble {
    /// Walkers drawn from independent Gaussians in position and momentum.
    pub fn gaussian(n_walkers: usize, q0: f64, sigma_q: f64, p0: f64, sigma_p: f64, seed: u64) -> Result<Self> {
        if n_walkers == 0 {
            return Err(Error::invalid("langevin.n_walkers", "must be >= 1"));
        }
        if !(sigma_q >= 0.0 && sigma_p >= 0.0) {
            return Err(Error::invalid("langevin", "initial widths must be >= 0"));
        }
        let mut streams: Vec<ChaCha8Rng> = (0..n_walkers).map(|i| stream(seed, i)).collect();
        let (positions, momenta): (Vec<f64>, Vec<f64>) = streams
            .par_iter_mut()
            .map(|rng| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                (q0 + sigma_q * a, p0 + sigma_p * b)
            })
            .unzip();
        Ok(Self {
            positions,
            momenta,
            seed,
            time: 0.0,
            streams,
        })
    }

    /// Walkers at the given phase-space points.
    pub fn from_points(positions: Vec<f64>, momenta: Vec<f64>, seed: u64) -> Result<Self> {
        if positions.len() != momenta.len() || positions.is_empty() {
            return Err(Error::invalid("langevin", "position and momentum arrays must match and be non-empty"));
        }
        let streams = (0..positions.len()).map(|i| stream(seed, i)).collect();
        Ok(Self {
            positions,
            momenta,
            seed,
            time: 0.0,
            streams,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Mean and variance of positions and momenta, summed sequentially so
    /// results are bit-reproducible.
    pub fn moments(&self) -> EnsembleMoments {
        let (mq, vq) = mean_var(&self.positions);
        let (mp, vp) = mean_var(&self.momenta);
        EnsembleMoments {
            time: self.time,
            mean_q: mq,
            var_q: vq,
            mean_p: mp,
            var_p: vp,
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleMoments {
    pub time: f64,
    pub mean_q: f64,
    pub var_q: f64,
    pub mean_p: f64,
    pub var_p: f64,
}

/// One step of `dQ = P/M dt`, `dP = (-U'(Q) - gamma P) dt + sqrt(2 d_pp dt) xi`.
pub fn langevin_step(
    ens: &mut LangevinEnsemble,
    c: &ClassicalCoefficients,
    u: &PotentialSpec,
    p: &PhysicalParams,
    dt: f64,
    integrator: Integrator,
) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("langevin.dt", format!("must be finite and > 0, got {dt}")));
    }
    if dt * c.gamma >= STABILITY_LIMIT {
        return Err(Error::invalid(
            "langevin.dt",
            format!(
                "dt * gamma = {:.3} violates the stability guard {STABILITY_LIMIT}; use dt <= {:.3e}",
                dt * c.gamma,
                0.5 * STABILITY_LIMIT / c.gamma
            ),
        ));
    }
    let m = p.mass();
    let noise = (2.0 * c.d_pp * dt).sqrt();
    let decay = (-c.gamma * dt).exp();
    let ou_noise = (m * p.temperature() * (1.0 - decay * decay)).sqrt();
    let failed = std::sync::atomic::AtomicBool::new(false);
    ens.positions
        .par_iter_mut()
        .zip(ens.momenta.par_iter_mut())
        .zip(ens.streams.par_iter_mut())
        .for_each(|((q, pm), rng)| {
            let force = |x: f64| match u.force_gradient(x) {
                Ok(v) => -v,
                Err(_) => {
                    failed.store(true, std::sync::atomic::Ordering::Relaxed);
                    f64::NAN
                }
            };
            match integrator {
                Integrator::EulerMaruyama => {
                    let xi: f64 = StandardNormal.sample(rng);
                    let f = force(*q);
                    let q_new = *q + *pm / m * dt;
                    *pm += (f - c.gamma * *pm) * dt + noise * xi;
                    *q = q_new;
                }
                Integrator::Baoab => {
                    let xi: f64 = StandardNormal.sample(rng);
                    *pm += 0.5 * dt * force(*q);
                    *q += 0.5 * dt * *pm / m;
                    *pm = decay * *pm + ou_noise * xi;
                    *q += 0.5 * dt * *pm / m;
                    *pm += 0.5 * dt * force(*q);
                }
            }
        });
    if failed.into_inner() {
        return Err(Error::Domain("a walker left the potential's domain".into()));
    }
    ens.time += dt;
    Ok(())
}

/// Runs `n_steps` steps, returning moments at the start and after every
/// `record_stride` steps.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    ens: &mut LangevinEnsemble,
    c: &ClassicalCoefficients,
    u: &PotentialSpec,
    p: &PhysicalParams,
    dt: f64,
    n_steps: usize,
    record_stride: usize,
    integrator: Integrator,
) -> Result<Vec<EnsembleMoments>> {
    let stride = record_stride.max(1);
    let mut out = vec![ens.moments()];
    for step in 1..=n_steps {
        langevin_step(ens, c, u, p, dt, integrator)?;
        if step % stride == 0 || step == n_steps {
            out.push(ens.moments());
        }
    }
    Ok(out)
}
