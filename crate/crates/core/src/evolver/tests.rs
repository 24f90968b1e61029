use super::*;
use crate::analytic::decoherence_limit;
use crate::grid::{GaussianState, GridGeometry};
use crate::model::LevyCompletion;

fn unit() -> PhysicalParams {
    PhysicalParams::unit()
}

fn packet(geo: GridGeometry, hbar: f64) -> DensityMatrixGrid {
    GaussianState {
        q0: 0.5,
        p0: 0.8,
        sigma_q: 1.0,
        sigma_p: 1.0,
    }
    .density(geo, hbar)
    .unwrap()
}

#[test]
fn infinite_mass_matches_decoherence_limit() {
    let geo = GridGeometry::new(32, 128, 16.0, 24.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 0.9, 1.3).unwrap();
    let rho0 = packet(geo, 1.0);
    let opts = SolverOptions {
        dt: 0.05,
        n_steps: 40,
        snapshot_stride: 40,
        terms: Terms::infinite_mass(),
        ..Default::default()
    };
    let g = CorrelatorSpec::levy(1.0, LevyCompletion::Exponential).unwrap();
    let traj = evolve(&rho0, &p, &g, &PotentialSpec::Free, &opts).unwrap();
    let exact = decoherence_limit(&rho0, &p, &g, 2.0).unwrap();
    let got = traj.last();
    for (a, b) in got.values.iter().zip(exact.values.iter()) {
        assert!((a - b).norm() <= 1e-6 * b.norm() + 1e-15);
    }
}

#[test]
fn infinite_mass_off_diagonal_mass_never_increases() {
    let geo = GridGeometry::new(32, 64, 16.0, 16.0).unwrap();
    let p = unit();
    let rho0 = packet(geo, 1.0);
    let opts = SolverOptions {
        dt: 0.1,
        n_steps: 20,
        snapshot_stride: 1,
        terms: Terms::infinite_mass(),
        ..Default::default()
    };
    let traj = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &PotentialSpec::Harmonic { stiffness: 1.0 }, &opts).unwrap();
    let j0 = geo.s_zero();
    let mass: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| {
            s.values
                .indexed_iter()
                .filter(|((_, j), _)| *j != j0)
                .map(|(_, v)| v.norm_sqr())
                .sum()
        })
        .collect();
    assert!(mass.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
    assert!(mass.last().unwrap() < &mass[0]);
}

#[test]
fn friction_alone_rescales_the_relative_coordinate() {
    // With a quadratic correlator the friction velocity is exactly -gamma s
    // inside |s| < 2 X0, so rho(r, s, t) = rho0(r, s exp(-gamma t)).
    let geo = GridGeometry::new(16, 256, 12.0, 24.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 2.0, 8.0).unwrap();
    let gamma = p.beta() * p.spreading_width() * p.hbar() / (2.0 * p.mass() * p.correlation_length().powi(2));
    let st = GaussianState {
        q0: 0.0,
        p0: 0.3,
        sigma_q: 1.0,
        sigma_p: 1.0,
    };
    let rho0 = st.density(geo, 1.0).unwrap();
    let t = 1.0;
    let opts = SolverOptions {
        dt: 0.1,
        n_steps: 10,
        snapshot_stride: 10,
        terms: Terms {
            kinetic: false,
            potential: false,
            friction: true,
            decoherence: false,
        },
        ..Default::default()
    };
    let traj = evolve(&rho0, &p, &CorrelatorSpec::QuadraticTruncated, &PotentialSpec::Free, &opts).unwrap();
    let got = traj.last();
    let shrink = (-gamma * t).exp();
    let mut worst: f64 = 0.0;
    for i in 0..geo.nr {
        for j in 0..geo.ns {
            let exact = st.value(geo.r(i), geo.s(j) * shrink, 1.0);
            worst = worst.max((got.at(i, j) - exact).norm());
        }
    }
    assert!(worst < 1e-7, "{worst}");
}

#[test]
fn harmonic_coherent_state_follows_the_classical_orbit() {
    let geo = GridGeometry::new(128, 128, 16.0, 16.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 1e-300, 1.0).unwrap();
    let st = GaussianState::coherent(1.5, 0.0, 1.0, 1.0, 1.0);
    let rho0 = st.density(geo, 1.0).unwrap();
    let n = 400;
    let t = 1.0;
    let opts = SolverOptions {
        dt: t / n as f64,
        n_steps: n,
        snapshot_stride: n,
        ..Default::default()
    };
    let traj = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &PotentialSpec::Harmonic { stiffness: 1.0 }, &opts).unwrap();
    let exact = GaussianState::coherent(1.5 * t.cos(), -1.5 * t.sin(), 1.0, 1.0, 1.0)
        .density(geo, 1.0)
        .unwrap();
    let err = traj.last().max_abs_diff(&exact);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dissipative_run_conserves_trace_and_hermiticity() {
    let geo = GridGeometry::new(64, 64, 16.0, 16.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 1.5).unwrap();
    let rho0 = packet(geo, 1.0);
    let opts = SolverOptions {
        dt: 0.01,
        n_steps: 100,
        snapshot_stride: 25,
        positivity_monitor: true,
        ..Default::default()
    };
    let traj = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &PotentialSpec::DoubleWell { a: 1.0, b: 0.2 }, &opts).unwrap();
    assert!(traj.is_completed(), "{:?}", traj.status);
    assert_eq!(traj.conservation.len(), 100);
    assert_eq!(traj.snapshots.len(), 5);
    assert!(traj.max_trace_error() < 1e-10);
    assert!(traj.max_hermiticity_defect() < 1e-10, "{}", traj.max_hermiticity_defect());
    assert_eq!(traj.positivity.len(), 5);
    let times = traj.times();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn rk4_and_strang_agree() {
    let geo = GridGeometry::new(64, 64, 16.0, 16.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 0.5, 2.0).unwrap();
    let rho0 = packet(geo, 1.0);
    let u = PotentialSpec::Harmonic { stiffness: 0.5 };
    let mk = |scheme, n: usize| SolverOptions {
        dt: 0.5 / n as f64,
        n_steps: n,
        snapshot_stride: n,
        scheme,
        ..Default::default()
    };
    let a = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &u, &mk(Scheme::StrangSplit, 200)).unwrap();
    let b = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &u, &mk(Scheme::Rk4Spectral, 400)).unwrap();
    let d = a.last().max_abs_diff(b.last());
    assert!(d < 1e-4, "{d}");
}

#[test]
fn strang_is_second_order() {
    let geo = GridGeometry::new(64, 64, 16.0, 16.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 0.5, 2.0).unwrap();
    let rho0 = packet(geo, 1.0);
    let u = PotentialSpec::Harmonic { stiffness: 0.5 };
    let t = 0.5;
    let run = |n: usize, scheme| {
        let opts = SolverOptions {
            dt: t / n as f64,
            n_steps: n,
            snapshot_stride: n,
            scheme,
            ..Default::default()
        };
        evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &u, &opts).unwrap().last().clone()
    };
    let reference = run(400, Scheme::Rk4Spectral);
    let e1 = run(10, Scheme::StrangSplit).max_abs_diff(&reference);
    let e2 = run(20, Scheme::StrangSplit).max_abs_diff(&reference);
    let order = (e1 / e2).log2();
    assert!(order > 1.8, "order {order} ({e1:.3e}, {e2:.3e})");
}

#[test]
fn residual_of_decoherence_limit_is_negligible() {
    let geo = GridGeometry::new(16, 64, 12.0, 16.0).unwrap();
    let p = unit();
    let rho0 = packet(geo, 1.0);
    let g = CorrelatorSpec::Gaussian;
    let h = 1e-3;
    let slices: Vec<_> = (0..5)
        .map(|k| decoherence_limit(&rho0, &p, &g, 1.0 + k as f64 * h).unwrap())
        .collect();
    let res = residual_norm(&slices, &p, &g, &PotentialSpec::Free, Terms::infinite_mass()).unwrap();
    assert!(res < 1e-8, "{res}");
    assert!(residual_norm(&slices[..2], &p, &g, &PotentialSpec::Free, Terms::infinite_mass()).is_err());
}

#[test]
fn residual_of_fine_trajectory_is_small() {
    let geo = GridGeometry::new(64, 64, 16.0, 16.0).unwrap();
    let p = PhysicalParams::new(1.0, 1.0, 1.0, 0.5, 2.0).unwrap();
    let rho0 = packet(geo, 1.0);
    let u = PotentialSpec::Harmonic { stiffness: 0.5 };
    let opts = SolverOptions {
        dt: 1e-3,
        n_steps: 4,
        snapshot_stride: 1,
        ..Default::default()
    };
    let traj = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &u, &opts).unwrap();
    let res = residual_norm(&traj.snapshots, &p, &CorrelatorSpec::Gaussian, &u, Terms::all()).unwrap();
    assert!(res < 1e-4, "{res}");
}

#[test]
fn unstable_explicit_run_aborts_with_last_valid_snapshot() {
    let geo = GridGeometry::new(32, 32, 16.0, 16.0).unwrap();
    let p = unit();
    let rho0 = packet(geo, 1.0);
    let opts = SolverOptions {
        dt: 0.5,
        n_steps: 2000,
        snapshot_stride: 1,
        scheme: Scheme::Rk4Spectral,
        trace_tolerance: 1e300,
        hermiticity_tolerance: f64::INFINITY,
        ..Default::default()
    };
    let traj = evolve(&rho0, &p, &CorrelatorSpec::Gaussian, &PotentialSpec::Free, &opts).unwrap();
    assert!(matches!(traj.status, RunStatus::Aborted { .. }), "{:?}", traj.status);
    assert!(traj.last().is_finite());
}

#[test]
fn invalid_options_are_rejected() {
    assert!(SolverOptions::default().validate().is_ok());
    for bad in [
        SolverOptions { dt: 0.0, ..Default::default() },
        SolverOptions { n_steps: 0, ..Default::default() },
        SolverOptions { snapshot_stride: 0, ..Default::default() },
        SolverOptions { absorbing_mask: Some(0.7), ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

