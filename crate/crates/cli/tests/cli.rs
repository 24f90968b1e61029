use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const PHYSICS: &str = r#"
[physics]
mass = 1.0
hbar = 1.0
temperature = 1.0
spreading_width = 1.0
correlation_length = 2.0
"#;

const GRID_JOB: &str = r#"
[correlator]
kind = "gaussian"

[potential]
kind = "free"

[grid]
nr = 32
ns = 32
r_extent = 16.0
s_extent = 16.0

[initial]
q0 = 0.0
sigma_q = 1.0
sigma_p = 1.0

[solver]
dt = 0.01
n_steps = 40
snapshot_stride = 2

[observables]
fit_window = [0.05, 0.4]
"#;

fn config(job: &str, seed: u64, body: &str) -> String {
    format!("job = \"{job}\"\nseed = {seed}\n{PHYSICS}{body}")
}

fn qkinetic(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkinetic"))
        .args(args)
        .current_dir(cwd)
        .env_remove("QKINETIC_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn run_job(dir: &Path, name: &str, text: &str) -> (Output, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, text).unwrap();
    let out = dir.join(name);
    let o = qkinetic(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], dir);
    (o, out)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config("evolve", 11, GRID_JOB);
    let (a, da) = run_job(tmp.path(), "a", &text);
    let (b, db) = run_job(tmp.path(), "b", &text);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    for f in ["cumulants.tsv", "conservation.tsv", "fit.tsv", "summary.json", "snapshots/snap_000020.bin"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn outputs_embed_hash_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run_job(tmp.path(), "run", &config("evolve", 42, GRID_JOB));
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&dir);
    let hash = s["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(s["seed"], 42);
    for f in ["cumulants.tsv", "conservation.tsv", "fit.tsv"] {
        let head = fs::read_to_string(dir.join(f)).unwrap();
        let first = head.lines().next().unwrap();
        assert!(first.contains(&hash) && first.contains("seed=42"), "{f}: {first}");
    }
    let snap = fs::read(dir.join("snapshots/snap_000000.bin")).unwrap();
    assert!(snap.windows(64).any(|w| w == hash.as_bytes()));
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, config("evolve", 1, GRID_JOB)).unwrap();
    let out = tmp.path().join("o");
    let o = qkinetic(&["run", cfg.to_str().unwrap(), "--seed", "99", "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(summary(&out)["seed"], 99);
    let effective = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(effective.contains("seed = 99"));
}

#[test]
fn environment_sets_output_dir_and_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, format!("output_dir = \"from_config\"\n{}", config("evolve", 1, GRID_JOB))).unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["run", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_qkinetic"))
            .args(&args)
            .current_dir(tmp.path())
            .env("QKINETIC_OUT_DIR", "from_env")
            .output()
            .unwrap()
    };
    assert_eq!(run(&[]).status.code(), Some(0));
    assert!(tmp.path().join("from_env/summary.json").exists());
    assert!(!tmp.path().join("from_config").exists());
    assert_eq!(run(&["--out", "from_flag"]).status.code(), Some(0));
    assert!(tmp.path().join("from_flag/summary.json").exists());
}

#[test]
fn compare_summary_reports_discrepancy_and_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run_job(tmp.path(), "cmp", &config("compare", 3, GRID_JOB));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c = &summary(&dir)["comparison"];
    for key in ["linf_discrepancy_final", "linf_discrepancy_max", "analytic_residual_norm"] {
        let v = c[key].as_f64().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{key} = {v}");
    }
    assert!(dir.join("compare.tsv").exists());
}

#[test]
fn compare_requires_free_potential() {
    let tmp = tempfile::tempdir().unwrap();
    let body = GRID_JOB.replace("kind = \"free\"", "kind = \"harmonic\"\nstiffness = 1.0");
    let (o, _) = run_job(tmp.path(), "cmp", &config("compare", 3, &body));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analytic_jobs_write_cumulants() {
    let tmp = tempfile::tempdir().unwrap();
    for job in ["free-analytic", "decoherence"] {
        let (o, dir) = run_job(tmp.path(), job, &config(job, 5, GRID_JOB));
        assert_eq!(o.status.code(), Some(0), "{job}: {}", String::from_utf8_lossy(&o.stderr));
        let rows = fs::read_to_string(dir.join("cumulants.tsv")).unwrap();
        assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 21);
        assert!(summary(&dir)["max_trace_error"].as_f64().unwrap() < 1e-10);
    }
}

#[test]
fn langevin_without_friction_is_ballistic() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
[potential]
kind = "free"

[initial]
q0 = 0.5
p0 = 2.0
sigma_q = 0.0
sigma_p = 0.0

[langevin]
n_walkers = 64
dt = 0.01
n_steps = 100
record_stride = 50
gamma = 0.0
d_pp = 0.0
"#;
    let (o, dir) = run_job(tmp.path(), "lv", &config("langevin", 9, body));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = &summary(&dir)["final_moments"];
    assert!((m["t"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((m["mean_q"].as_f64().unwrap() - 2.5).abs() < 1e-12);
    assert!((m["mean_p"].as_f64().unwrap() - 2.0).abs() < 1e-15);
    assert!(m["var_q"].as_f64().unwrap().abs() < 1e-20);
    assert!(m["var_p"].as_f64().unwrap().abs() < 1e-20);
}

#[test]
fn rmt_verify_passes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
[correlator]
kind = "gaussian"

[rmt]
dimension = 40
class = "GOE"
rho0 = 4.0
beta = 0.0
kappa0 = 1.5
points = [0.0, 1.0]
n_samples = 200
audit_seed = 3
export_samples = 1
"#;
    let (o, dir) = run_job(tmp.path(), "rmt", &config("rmt-verify", 4, body));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&dir);
    assert_eq!(s["passed"], true);
    assert!(s["within_fraction"].as_f64().unwrap() >= 0.95);
    assert!(dir.join("rmt_report.txt").exists());
    assert!(dir.join("samples/member_000000_point_001.bin").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = config("evolve", 1, &GRID_JOB.replace("[solver]\ndt = 0.01\nn_steps = 40\nsnapshot_stride = 2\n", ""));
    let (o, dir) = run_job(tmp.path(), "bad", &missing);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[solver]"));
    assert!(!dir.exists());
    let (o, _) = run_job(tmp.path(), "neg", &config("evolve", 1, GRID_JOB).replace("mass = 1.0", "mass = -1.0"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mass"));
}

#[test]
fn emit_plot_data_writes_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run_job(tmp.path(), "ev", &config("evolve", 2, GRID_JOB));
    assert_eq!(o.status.code(), Some(0));
    let o = qkinetic(&["emit-plot-data", dir.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let plot = dir.join("plot");
    let cum = fs::read_to_string(plot.join("cumulants.dat")).unwrap();
    assert!(cum.lines().nth(1).unwrap() == "# t\tQ2\tP2\tP4");
    assert_eq!(cum.lines().filter(|l| !l.starts_with('#')).count(), 21);
    let fit = fs::read_to_string(plot.join("fit.dat")).unwrap();
    assert_eq!(fit.lines().last().unwrap().split('\t').count(), 4);
    let w = fs::read_to_string(plot.join("wigner_snap_000020.dat")).unwrap();
    let triplets = w.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count();
    assert_eq!(triplets, 32 * 32);
    assert!(plot.join("momentum_snap_000020.dat").exists());
    assert!(plot.join("position_snap_000020.dat").exists());

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = qkinetic(&["emit-plot-data", empty.to_str().unwrap()], tmp.path());
    assert_ne!(o.status.code(), Some(0));
}
