//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::Integrator;
use crate::error::{Error, Result};
use crate::evolver::SolverOptions;
use crate::grid::{GaussianState, GridGeometry};
use crate::model::{CorrelatorSpec, LevyCompletion, PhysicalParams, PotentialSpec};
use crate::rmt::{EnsembleSpec, SymmetryClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    Evolve,
    FreeAnalytic,
    Decoherence,
    Langevin,
    RmtVerify,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionConfig {
    Clamped,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorrelatorConfig {
    Gaussian,
    QuadraticTruncated,
    Levy {
        alpha: f64,
        #[serde(default = "default_completion")]
        completion: CompletionConfig,
        #[serde(default = "default_lower_clamp")]
        lower_clamp: f64,
    },
    Tabulated {
        x: Vec<f64>,
        g: Vec<f64>,
    },
}

fn default_completion() -> CompletionConfig {
    CompletionConfig::Clamped
}

fn default_lower_clamp() -> f64 {
    -1.0
}

impl CorrelatorConfig {
    pub fn build(&self) -> Result<CorrelatorSpec> {
        match self {
            CorrelatorConfig::Gaussian => Ok(CorrelatorSpec::Gaussian),
            CorrelatorConfig::QuadraticTruncated => Ok(CorrelatorSpec::QuadraticTruncated),
            CorrelatorConfig::Levy {
                alpha,
                completion,
                lower_clamp,
            } => CorrelatorSpec::levy(
                *alpha,
                match completion {
                    CompletionConfig::Clamped => LevyCompletion::Clamped { lower: *lower_clamp },
                    CompletionConfig::Exponential => LevyCompletion::Exponential,
                },
            ),
            CorrelatorConfig::Tabulated { x, g } => CorrelatorSpec::tabulated(x.clone(), g.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    Free,
    Linear { slope: f64 },
    Harmonic { stiffness: f64 },
    ParabolicBarrier { curvature: f64 },
    DoubleWell { a: f64, b: f64 },
    Tabulated { q: Vec<f64>, u: Vec<f64> },
}

impl PotentialConfig {
    pub fn build(&self) -> Result<PotentialSpec> {
        Ok(match self {
            PotentialConfig::Free => PotentialSpec::Free,
            PotentialConfig::Linear { slope } => PotentialSpec::Linear { slope: *slope },
            PotentialConfig::Harmonic { stiffness } => PotentialSpec::Harmonic { stiffness: *stiffness },
            PotentialConfig::ParabolicBarrier { curvature } => PotentialSpec::ParabolicBarrier { curvature: *curvature },
            PotentialConfig::DoubleWell { a, b } => PotentialSpec::DoubleWell { a: *a, b: *b },
            PotentialConfig::Tabulated { q, u } => PotentialSpec::tabulated(q.clone(), u.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nr: usize,
    pub ns: usize,
    pub r_extent: f64,
    pub s_extent: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.nr, self.ns, self.r_extent, self.s_extent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub q0: f64,
    #[serde(default)]
    pub p0: f64,
    pub sigma_q: f64,
    pub sigma_p: f64,
}

impl InitialConfig {
    pub fn state(&self) -> GaussianState {
        GaussianState {
            q0: self.q0,
            p0: self.p0,
            sigma_q: self.sigma_q,
            sigma_p: self.sigma_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservablesConfig {
    /// Highest coordinate cumulant order tabulated.
    pub q_orders: usize,
    /// Highest momentum cumulant order tabulated.
    pub p_orders: usize,
    /// Time window of the diffusion-exponent fit; no fit when absent.
    pub fit_window: Option<[f64; 2]>,
    pub write_snapshots: bool,
}

impl Default for ObservablesConfig {
    fn default() -> Self {
        Self {
            q_orders: 2,
            p_orders: 4,
            fit_window: None,
            write_snapshots: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub n_walkers: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub record_stride: usize,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_pp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmtConfig {
    pub dimension: usize,
    pub class: SymmetryClass,
    pub rho0: f64,
    pub beta: f64,
    pub kappa0: f64,
    pub points: Vec<f64>,
    pub n_samples: usize,
    #[serde(default)]
    pub audit_seed: u64,
    /// Number of members written as binary snapshots.
    #[serde(default)]
    pub export_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub job: JobKind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub physics: Option<PhysicalParams>,
    pub correlator: Option<CorrelatorConfig>,
    pub potential: Option<PotentialConfig>,
    pub grid: Option<GridConfig>,
    pub initial: Option<InitialConfig>,
    pub solver: Option<SolverOptions>,
    #[serde(default)]
    pub observables: ObservablesConfig,
    pub langevin: Option<LangevinConfig>,
    pub rmt: Option<RmtConfig>,
}

fn require<'a, T>(block: &'a Option<T>, name: &str, job: JobKind) -> Result<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| Error::Config(format!("job `{}` requires the [{name}] block", job_name(job))))
}

fn job_name(job: JobKind) -> &'static str {
    match job {
        JobKind::Evolve => "evolve",
        JobKind::FreeAnalytic => "free-analytic",
        JobKind::Decoherence => "decoherence",
        JobKind::Langevin => "langevin",
        JobKind::RmtVerify => "rmt-verify",
        JobKind::Compare => "compare",
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization without the output
    /// directory, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn job_name(&self) -> &'static str {
        job_name(self.job)
    }

    /// Checks that every block the job reads is present and valid.
    pub fn validate(&self) -> Result<()> {
        let job = self.job;
        if self.seed > i64::MAX as u64 {
            return Err(Error::invalid("seed", format!("must be <= {}", i64::MAX)));
        }
        let needs_grid = matches!(
            job,
            JobKind::Evolve | JobKind::FreeAnalytic | JobKind::Decoherence | JobKind::Compare
        );
        if needs_grid || job == JobKind::Langevin || job == JobKind::RmtVerify {
            require(&self.physics, "physics", job)?;
        }
        if needs_grid || job == JobKind::RmtVerify {
            require(&self.correlator, "correlator", job)?.build()?;
        }
        if needs_grid {
            require(&self.grid, "grid", job)?.build()?;
            let p = self.physics.as_ref().expect("checked above");
            let init = require(&self.initial, "initial", job)?;
            init.state().validate(p.hbar())?;
            let solver = require(&self.solver, "solver", job)?;
            solver.validate()?;
            let o = &self.observables;
            if o.q_orders == 0 || o.p_orders == 0 || o.q_orders > 8 || o.p_orders > 8 {
                return Err(Error::invalid("observables", "cumulant orders must lie in 1..=8"));
            }
            if let Some([a, b]) = o.fit_window {
                if !(a > 0.0 && b > a) {
                    return Err(Error::invalid("observables.fit_window", "must satisfy 0 < start < end"));
                }
            }
        }
        if matches!(job, JobKind::Evolve | JobKind::Compare | JobKind::Langevin) {
            require(&self.potential, "potential", job)?.build()?;
        }
        if job == JobKind::Langevin {
            require(&self.initial, "initial", job)?;
            let l = require(&self.langevin, "langevin", job)?;
            if l.n_walkers == 0 || l.n_steps == 0 || l.record_stride == 0 || !(l.dt > 0.0) {
                return Err(Error::invalid(
                    "langevin",
                    "n_walkers, n_steps and record_stride must be >= 1 and dt > 0",
                ));
            }
            for (name, v) in [("langevin.gamma", l.gamma), ("langevin.d_pp", l.d_pp)] {
                if v.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                    return Err(Error::invalid(name, "must be finite and >= 0"));
                }
            }
        }
        if job == JobKind::RmtVerify {
            self.ensemble_spec()?.validate()?;
        }
        Ok(())
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        require(&self.physics, "physics", self.job).copied()
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec> {
        let r = require(&self.rmt, "rmt", self.job)?;
        let p = self.params()?;
        Ok(EnsembleSpec {
            dimension: r.dimension,
            class: r.class,
            rho0: r.rho0,
            beta: r.beta,
            kappa0: r.kappa0,
            spreading_width: p.spreading_width(),
            correlation_length: p.correlation_length(),
            correlator: require(&self.correlator, "correlator", self.job)?.build()?,
            points: r.points.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EVOLVE: &str = r#"
job = "evolve"
seed = 7

[physics]
mass = 1.0
hbar = 1.0
temperature = 1.0
spreading_width = 1.0
correlation_length = 1.0

[correlator]
kind = "gaussian"

[potential]
kind = "harmonic"
stiffness = 1.0

[grid]
nr = 32
ns = 32
r_extent = 16.0
s_extent = 16.0

[initial]
q0 = 1.0
sigma_q = 1.0
sigma_p = 1.0

[solver]
dt = 0.01
n_steps = 20
snapshot_stride = 10
"#;

    #[test]
    fn parses_and_hashes_stably() {
        let a = RunConfig::from_toml(EVOLVE).unwrap();
        let b = RunConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn missing_block_names_the_block() {
        let text = EVOLVE.replace("[grid]\nnr = 32\nns = 32\nr_extent = 16.0\ns_extent = 16.0\n", "");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("[grid]"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = EVOLVE.replace("stiffness = 1.0", "stiffness = 1.0\nspring = 2.0");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("spring"), "{err}");
    }

    #[test]
    fn invalid_value_reports_field() {
        let text = EVOLVE.replace("mass = 1.0", "mass = -1.0");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("mass"), "{err}");
    }

    #[test]
    fn levy_block_parses() {
        let text = EVOLVE.replace("kind = \"gaussian\"", "kind = \"levy\"\nalpha = 1.5\ncompletion = \"exponential\"");
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(
            cfg.correlator.unwrap().build().unwrap(),
            CorrelatorSpec::levy(1.5, LevyCompletion::Exponential).unwrap()
        );
    }
}
