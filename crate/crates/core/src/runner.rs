//! Executes a [`RunConfig`] and writes its artifacts.
//!
//! Every text artifact starts with a `# qkinetic job=... config_hash=...
//! seed=...` line followed by a `# `-prefixed column header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::analytic::{decoherence_limit, free_propagate};
use crate::classical::{coefficients, run_ensemble, ClassicalCoefficients, LangevinEnsemble};
use crate::config::{JobKind, RunConfig};
use crate::error::{Error, Result};
use crate::evolver::{evolve, residual_norm, RunStatus, SolverOptions, Trajectory};
use crate::grid::DensityMatrixGrid;
use crate::model::PhysicalParams;
use crate::observables::{
    fit_diffusion_exponent, momentum_density, wigner_transform, CumulantSeries, ExponentFit, Variable,
};
use crate::rmt::{BathSampler, CovarianceReport};
use crate::snapshot::Snapshot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_STATISTICAL: i32 = 4;

/// Process exit status for an error raised while running.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. }
        | Error::Config(_)
        | Error::Aliasing { .. }
        | Error::InvalidCorrelator(_)
        | Error::InsufficientSamples { .. }
        | Error::OutOfDomain { .. } => EXIT_CONFIG,
        Error::Domain(_)
        | Error::SingularDerivative { .. }
        | Error::TransformationMismatch { .. }
        | Error::Unnormalized { .. }
        | Error::IllConditioned(_)
        | Error::NumericalAbort(_) => EXIT_NUMERICAL,
        Error::Snapshot(_) | Error::Io(_) => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub summary: Value,
}

/// Writes tab-separated tables carrying the provenance line.
struct Artifacts {
    dir: PathBuf,
    stamp: String,
    hash: String,
    seed: u64,
}

impl Artifacts {
    fn new(cfg: &RunConfig, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let hash = cfg.hash();
        Ok(Self {
            dir: dir.to_path_buf(),
            stamp: format!("# qkinetic job={} config_hash={} seed={}", cfg.job_name(), hash, cfg.seed),
            hash,
            seed: cfg.seed,
        })
    }

    fn table(&self, name: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut s = format!("{}\n# {}\n", self.stamp, columns.join("\t"));
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s += &cells.join("\t");
            s.push('\n');
        }
        fs::write(self.dir.join(name), s)?;
        Ok(())
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), format!("{}\n{body}", self.stamp))?;
        Ok(())
    }

    fn snapshot(&self, name: &str, rho: &DensityMatrixGrid) -> Result<()> {
        let dir = self.dir.join("snapshots");
        fs::create_dir_all(&dir)?;
        Snapshot::from_grid(rho, self.seed, &self.hash).save(&dir.join(name))
    }

    fn summary(&self, mut body: Value) -> Result<Value> {
        body["config_hash"] = json!(self.hash);
        body["seed"] = json!(self.seed);
        let text = serde_json::to_string_pretty(&body).expect("summary serializes");
        fs::write(self.dir.join("summary.json"), text + "\n")?;
        Ok(body)
    }
}

/// Runs the job and writes its artifacts under `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let art = Artifacts::new(cfg, out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let (exit_code, body) = match cfg.job {
        JobKind::Evolve => run_evolve(cfg, &art)?,
        JobKind::FreeAnalytic | JobKind::Decoherence => run_analytic(cfg, &art)?,
        JobKind::Compare => run_compare(cfg, &art)?,
        JobKind::Langevin => run_langevin(cfg, &art)?,
        JobKind::RmtVerify => run_rmt(cfg, &art)?,
    };
    let mut body = body;
    body["job"] = json!(cfg.job_name());
    body["exit_code"] = json!(exit_code);
    let summary = art.summary(body)?;
    Ok(RunOutcome {
        exit_code,
        out_dir: out_dir.to_path_buf(),
        summary,
    })
}

struct GridSetup {
    params: PhysicalParams,
    rho0: DensityMatrixGrid,
    solver: SolverOptions,
}

fn grid_setup(cfg: &RunConfig) -> Result<GridSetup> {
    let params = cfg.params()?;
    let geo = cfg.grid.expect("validated").build()?;
    let rho0 = cfg.initial.expect("validated").state().density(geo, params.hbar())?;
    Ok(GridSetup {
        params,
        rho0,
        solver: cfg.solver.clone().expect("validated"),
    })
}

fn fit_json(fit: &ExponentFit) -> Value {
    json!({
        "nu": fit.nu,
        "nu_stderr": fit.nu_stderr,
        "slope": fit.slope,
        "slope_stderr": fit.slope_stderr,
        "prefactor": fit.prefactor,
        "prefactor_stderr": fit.prefactor_stderr,
        "window": [fit.window.0, fit.window.1],
        "n_points": fit.n_points,
        "r_squared": fit.r_squared,
    })
}

/// Cumulant table, snapshots and optional fit shared by all grid jobs.
fn write_observables(cfg: &RunConfig, art: &Artifacts, p: &PhysicalParams, snaps: &[DensityMatrixGrid]) -> Result<Value> {
    let o = &cfg.observables;
    let mut series = CumulantSeries::from_snapshots(snaps, p, o.q_orders, o.p_orders)?;
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=o.q_orders).map(|n| format!("Q{n}")));
    columns.extend((1..=o.p_orders).map(|n| format!("P{n}")));
    let rows = (0..series.times.len()).map(|i| {
        let mut row = vec![series.times[i]];
        row.extend((1..=o.q_orders).map(|n| series.get(Variable::Q, n).expect("computed")[i]));
        row.extend((1..=o.p_orders).map(|n| series.get(Variable::P, n).expect("computed")[i]));
        row
    });
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    art.table("cumulants.tsv", &cols, rows)?;
    if o.write_snapshots {
        for (k, s) in snaps.iter().enumerate() {
            art.snapshot(&format!("snap_{k:06}.bin"), s)?;
        }
    }
    let mut out = json!({});
    if let Some([a, b]) = o.fit_window {
        let fit = fit_diffusion_exponent(&mut series, (a, b))?;
        art.table(
            "fit.tsv",
            &["nu", "nu_stderr", "slope", "slope_stderr", "r_squared"],
            [vec![fit.nu, fit.nu_stderr, fit.slope, fit.slope_stderr, fit.r_squared]],
        )?;
        out["fit"] = fit_json(&fit);
    }
    let last = series.times.len() - 1;
    let mut finals = serde_json::Map::new();
    for n in 1..=o.q_orders {
        finals.insert(format!("Q{n}"), json!(series.get(Variable::Q, n).expect("computed")[last]));
    }
    for n in 1..=o.p_orders {
        finals.insert(format!("P{n}"), json!(series.get(Variable::P, n).expect("computed")[last]));
    }
    out["final_cumulants"] = Value::Object(finals);
    Ok(out)
}

fn status_json(status: &RunStatus) -> Value {
    serde_json::to_value(status).expect("status serializes")
}

fn write_trajectory(cfg: &RunConfig, art: &Artifacts, p: &PhysicalParams, traj: &Trajectory) -> Result<Value> {
    art.table(
        "conservation.tsv",
        &["step", "t", "trace_re", "trace_im", "hermiticity_defect"],
        traj.conservation
            .iter()
            .map(|c| vec![c.step as f64, c.time, c.trace.re, c.trace.im, c.hermiticity_defect]),
    )?;
    let mut out = write_observables(cfg, art, p, &traj.snapshots)?;
    if !traj.positivity.is_empty() {
        art.table(
            "positivity.tsv",
            &["t", "min_eigenvalue", "max_eigenvalue", "dimension"],
            traj.positivity
                .iter()
                .map(|r| vec![r.time, r.min_eigenvalue, r.max_eigenvalue, r.dimension as f64]),
        )?;
        out["max_positivity_violation"] = json!(traj.positivity.iter().map(|r| r.violation()).fold(0.0, f64::max));
    }
    out["status"] = status_json(&traj.status);
    out["final_time"] = json!(traj.last().time);
    out["max_trace_error"] = json!(traj.max_trace_error());
    out["max_hermiticity_defect"] = json!(traj.max_hermiticity_defect());
    out["provenance"] = json!(traj.provenance);
    Ok(out)
}

fn trajectory_exit(traj: &Trajectory) -> i32 {
    if traj.is_completed() {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    }
}

fn run_evolve(cfg: &RunConfig, art: &Artifacts) -> Result<(i32, Value)> {
    let s = grid_setup(cfg)?;
    let g = cfg.correlator.as_ref().expect("validated").build()?;
    let u = cfg.potential.as_ref().expect("validated").build()?;
    let traj = evolve(&s.rho0, &s.params, &g, &u, &s.solver)?;
    let out = write_trajectory(cfg, art, &s.params, &traj)?;
    Ok((trajectory_exit(&traj), out))
}

fn snapshot_times(solver: &SolverOptions) -> Vec<f64> {
    let mut steps: Vec<usize> = (0..=solver.n_steps).step_by(solver.snapshot_stride).collect();
    if *steps.last().expect("non-empty") != solver.n_steps {
        steps.push(solver.n_steps);
    }
    steps.into_iter().map(|k| k as f64 * solver.dt).collect()
}

fn run_analytic(cfg: &RunConfig, art: &Artifacts) -> Result<(i32, Value)> {
    let s = grid_setup(cfg)?;
    let g = cfg.correlator.as_ref().expect("validated").build()?;
    let snaps: Vec<DensityMatrixGrid> = snapshot_times(&s.solver)
        .into_iter()
        .map(|t| match cfg.job {
            JobKind::Decoherence => decoherence_limit(&s.rho0, &s.params, &g, t),
            _ => free_propagate(&s.rho0, &s.params, &g, t),
        })
        .collect::<Result<_>>()?;
    art.table(
        "conservation.tsv",
        &["t", "trace_re", "trace_im", "hermiticity_defect"],
        snaps.iter().map(|r| {
            let tr = r.trace();
            vec![r.time, tr.re, tr.im, r.hermiticity_defect()]
        }),
    )?;
    let mut out = write_observables(cfg, art, &s.params, &snaps)?;
    out["final_time"] = json!(snaps.last().expect("non-empty").time);
    out["max_trace_error"] = json!(snaps.iter().map(|r| (r.trace() - 1.0).norm()).fold(0.0, f64::max));
    out["max_hermiticity_defect"] = json!(snaps.iter().map(|r| r.hermiticity_defect()).fold(0.0, f64::max));
    Ok((EXIT_OK, out))
}

fn run_compare(cfg: &RunConfig, art: &Artifacts) -> Result<(i32, Value)> {
    let u = cfg.potential.as_ref().expect("validated").build()?;
    if !u.is_free() {
        return Err(Error::Config("compare job requires [potential] kind = \"free\"".into()));
    }
    let s = grid_setup(cfg)?;
    let g = cfg.correlator.as_ref().expect("validated").build()?;
    let traj = evolve(&s.rho0, &s.params, &g, &u, &s.solver)?;
    let mut out = write_trajectory(cfg, art, &s.params, &traj)?;
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    let mut worst: f64 = 0.0;
    for snap in &traj.snapshots {
        let exact = free_propagate(&s.rho0, &s.params, &g, snap.time)?;
        let d = snap.max_abs_diff(&exact);
        worst = worst.max(d);
        rows.push(vec![snap.time, d]);
    }
    art.table("compare.tsv", &["t", "linf_discrepancy"], rows)?;
    // Centered slices around the final time for the time derivative.
    let t_end = traj.last().time;
    let h = s.solver.dt.min(0.5 * t_end);
    let slices: Vec<DensityMatrixGrid> = [t_end - h, t_end, t_end + h]
        .iter()
        .map(|&t| free_propagate(&s.rho0, &s.params, &g, t))
        .collect::<Result<_>>()?;
    let residual = residual_norm(&slices, &s.params, &g, &u, s.solver.terms)?;
    out["comparison"] = json!({
        "linf_discrepancy_final": traj.last().max_abs_diff(&slices[1]),
        "linf_discrepancy_max": worst,
        "analytic_residual_norm": residual,
        "residual_step": h,
    });
    Ok((trajectory_exit(&traj), out))
}

fn run_langevin(cfg: &RunConfig, art: &Artifacts) -> Result<(i32, Value)> {
    let p = cfg.params()?;
    let l = cfg.langevin.expect("validated");
    let init = cfg.initial.expect("validated");
    let u = cfg.potential.as_ref().expect("validated").build()?;
    let mut c = coefficients(&p);
    if let Some(gamma) = l.gamma {
        let d_pp = l.d_pp.unwrap_or(p.mass() * gamma * p.temperature());
        c = ClassicalCoefficients {
            gamma,
            d_qq: 1.0 / (p.mass() * p.beta() * gamma),
            d_pp,
        };
    } else if let Some(d_pp) = l.d_pp {
        c.d_pp = d_pp;
    }
    let mut ens = LangevinEnsemble::gaussian(l.n_walkers, init.q0, init.sigma_q, init.p0, init.sigma_p, cfg.seed)?;
    let moments = run_ensemble(&mut ens, &c, &u, &p, l.dt, l.n_steps, l.record_stride, l.integrator)?;
    art.table(
        "moments.tsv",
        &["t", "mean_q", "var_q", "mean_p", "var_p"],
        moments.iter().map(|m| vec![m.time, m.mean_q, m.var_q, m.mean_p, m.var_p]),
    )?;
    let last = moments.last().expect("initial moments recorded");
    let out = json!({
        "coefficients": { "gamma": c.gamma, "d_qq": c.d_qq, "d_pp": c.d_pp },
        "einstein_ratio": c.einstein_ratio(&p),
        "final_moments": {
            "t": last.time, "mean_q": last.mean_q, "var_q": last.var_q,
            "mean_p": last.mean_p, "var_p": last.var_p,
        },
        "n_walkers": l.n_walkers,
    });
    Ok((EXIT_OK, out))
}

fn report_rows(report: &CovarianceReport) -> impl Iterator<Item = Vec<f64>> + '_ {
    report.entries.iter().map(|e| {
        vec![
            matches!(e.kind, crate::rmt::AuditKind::StructuralZero) as u8 as f64,
            e.a.component as f64,
            e.a.k as f64,
            e.a.l as f64,
            e.a.point as f64,
            e.b.component as f64,
            e.b.k as f64,
            e.b.l as f64,
            e.b.point as f64,
            e.lag,
            e.law,
            e.estimate,
            e.stderr,
            e.z,
        ]
    })
}

fn run_rmt(cfg: &RunConfig, art: &Artifacts) -> Result<(i32, Value)> {
    let spec = cfg.ensemble_spec()?;
    let r = cfg.rmt.as_ref().expect("validated");
    let report = crate::rmt::verify_covariance_streaming(&spec, cfg.seed, r.n_samples, r.audit_seed)?;
    art.text("rmt_report.txt", &report.to_text())?;
    art.table(
        "rmt_entries.tsv",
        &[
            "structural_zero", "comp_a", "k", "l", "point_a", "comp_b", "m", "n", "point_b", "lag", "law",
            "estimate", "stderr", "z",
        ],
        report_rows(&report),
    )?;
    if r.export_samples > 0 {
        let sampler = BathSampler::new(&spec)?;
        let dir = art.dir.join("samples");
        fs::create_dir_all(&dir)?;
        let n = spec.dimension;
        for m in 0..r.export_samples as u64 {
            let sample = sampler.sample(cfg.seed, m);
            for (i, &x) in spec.points.iter().enumerate() {
                let snap = Snapshot {
                    rows: n,
                    cols: n,
                    row_extent: n as f64,
                    col_extent: n as f64,
                    time: x,
                    seed: cfg.seed,
                    config_hash: art.hash.clone(),
                    values: sample.matrix(i),
                };
                snap.save(&dir.join(format!("member_{m:06}_point_{i:03}.bin")))?;
            }
        }
    }
    let wide = spec.wide_band_indicator();
    let out = json!({
        "class": report.class,
        "n_samples": report.n_samples,
        "within_fraction": report.within_fraction,
        "max_zero_z": report.max_zero_z,
        "zero_threshold": report.zero_threshold,
        "pooled": report.pooled,
        "passed": report.passed,
        "wide_band_indicator": wide,
        "wide_band_warning": wide < crate::rmt::WIDE_BAND_THRESHOLD,
    });
    Ok((if report.passed { EXIT_OK } else { EXIT_STATISTICAL }, out))
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    lines.next();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Domain(format!("{} has no column header", path.display())))?;
    let columns: Vec<String> = header.split('\t').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split('\t')
                .map(|c| c.parse::<f64>().map_err(|e| Error::Domain(format!("{}: {e}", path.display()))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((columns, rows))
}

/// Writes columnar plotting data for the artifacts found in `run_dir`:
/// `cumulants.dat` (t, Q2, P2, P4), Wigner `(r, p, W)` triplets and
/// marginals for the final snapshot (or every snapshot with `all`), the fit
/// block and Langevin moments. Returns the files written.
pub fn emit_plot_data(run_dir: &Path, dest: &Path, all: bool) -> Result<Vec<PathBuf>> {
    let summary_path = run_dir.join("summary.json");
    let config_path = run_dir.join("config.toml");
    if !summary_path.exists() || !config_path.exists() {
        return Err(Error::Domain(format!(
            "{} does not hold run artifacts (summary.json and config.toml required)",
            run_dir.display()
        )));
    }
    let cfg = RunConfig::load(&config_path)?;
    let summary: Value = serde_json::from_str(&fs::read_to_string(&summary_path)?)
        .map_err(|e| Error::Domain(format!("summary.json: {e}")))?;
    fs::create_dir_all(dest)?;
    let stamp = format!("# qkinetic job={} config_hash={} seed={}", cfg.job_name(), cfg.hash(), cfg.seed);
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let path = dest.join(name);
        fs::write(&path, format!("{stamp}\n{body}"))?;
        written.push(path);
        Ok(())
    };

    let cumulants = run_dir.join("cumulants.tsv");
    if cumulants.exists() {
        let (columns, rows) = read_table(&cumulants)?;
        let pick = |name: &str| columns.iter().position(|c| c == name);
        let wanted = ["t", "Q2", "P2", "P4"];
        let idx: Vec<Option<usize>> = wanted.iter().map(|w| pick(w)).collect();
        let mut body = String::from("# t\tQ2\tP2\tP4\n");
        for row in &rows {
            let cells: Vec<String> = idx
                .iter()
                .map(|i| i.map_or("nan".to_string(), |i| format!("{:e}", row[i])))
                .collect();
            body += &cells.join("\t");
            body.push('\n');
        }
        emit("cumulants.dat", body)?;
    }

    if let Some(fit) = summary.get("fit") {
        let get = |k: &str| fit.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
        emit(
            "fit.dat",
            format!(
                "# nu\tslope\tnu_stderr\tslope_stderr\n{:e}\t{:e}\t{:e}\t{:e}\n",
                get("nu"),
                get("slope"),
                get("nu_stderr"),
                get("slope_stderr")
            ),
        )?;
    }

    let moments = run_dir.join("moments.tsv");
    if moments.exists() {
        let text = fs::read_to_string(&moments)?;
        emit("moments.dat", text.lines().skip(1).map(|l| format!("{l}\n")).collect())?;
    }

    let snap_dir = run_dir.join("snapshots");
    if snap_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&snap_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        if !all {
            files = files.split_off(files.len().saturating_sub(1));
        }
        let p = cfg.params()?;
        for f in files {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("snap").to_string();
            let rho = Snapshot::load(&f)?.to_grid()?;
            let w = wigner_transform(&rho, &p);
            let mut body = format!("# t = {:e}\n# r\tp\tW\n", rho.time);
            for (i, r) in w.r_axis.iter().enumerate() {
                for (j, q) in w.p_axis.iter().enumerate() {
                    let _ = writeln!(body, "{r:e}\t{q:e}\t{:e}", w.values[[i, j]]);
                }
                body.push('\n');
            }
            emit(&format!("wigner_{stem}.dat"), body)?;
            let m = momentum_density(&rho, &p);
            let mut body = format!("# t = {:e}\n# p\tdensity\n", rho.time);
            for (q, d) in m.p_axis.iter().zip(&m.density) {
                let _ = writeln!(body, "{q:e}\t{d:e}");
            }
            emit(&format!("momentum_{stem}.dat"), body)?;
            let mut body = format!("# t = {:e}\n# r\tdensity\n", rho.time);
            for (r, d) in rho.geometry.r_axis().iter().zip(rho.diagonal()) {
                let _ = writeln!(body, "{r:e}\t{d:e}");
            }
            emit(&format!("position_{stem}.dat"), body)?;
        }
    }
    if written.is_empty() {
        return Err(Error::Domain(format!("no plottable artifacts in {}", run_dir.display())));
    }
    Ok(written)
}
