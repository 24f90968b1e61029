//! Parametric banded random-matrix model of the bath: sampling and
//! statistical verification of the second-cumulant law.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::CorrelatorSpec;

/// Relative eigenvalue floor below which the parameter covariance is rejected.
pub const CLIP_TOLERANCE: f64 = 1e-12;
/// Samples required by the covariance verification.
pub const MIN_VERIFY_SAMPLES: usize = 100;
/// Below this `kappa0 * rho` the ensemble is outside the wide-band regime.
pub const WIDE_BAND_THRESHOLD: f64 = 10.0;
/// Fraction of audited entries that must lie within three standard errors.
pub const AUDIT_PASS_FRACTION: f64 = 0.95;
/// Family-wise false-alarm level for the structural-zero check.
pub const ZERO_FAMILY_LEVEL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SymmetryClass {
    Goe,
    Gue,
    Gse,
}

impl SymmetryClass {
    /// Real components per matrix element: scalar first, then the vector parts.
    pub fn components(self) -> usize {
        match self {
            SymmetryClass::Goe => 1,
            SymmetryClass::Gue => 2,
            SymmetryClass::Gse => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub dimension: usize,
    pub class: SymmetryClass,
    /// Level density prefactor in `rho(e) = rho0 exp(beta e)`.
    pub rho0: f64,
    pub beta: f64,
    /// Band energy scale.
    pub kappa0: f64,
    pub spreading_width: f64,
    pub correlation_length: f64,
    pub correlator: CorrelatorSpec,
    /// Parameter points at which the matrices are sampled.
    pub points: Vec<f64>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::invalid("rmt.dimension", "must be >= 2"));
        }
        if self.class == SymmetryClass::Gse && !self.dimension.is_multiple_of(2) {
            return Err(Error::invalid("rmt.dimension", "must be even for the GSE class"));
        }
        for (name, v) in [
            ("rmt.rho0", self.rho0),
            ("rmt.kappa0", self.kappa0),
            ("rmt.spreading_width", self.spreading_width),
            ("rmt.correlation_length", self.correlation_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("rmt.beta", format!("must be >= 0 and finite, got {}", self.beta)));
        }
        if self.points.is_empty() || self.points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("rmt.points", "need at least one finite parameter point"));
        }
        Ok(())
    }

    pub fn level_density(&self, e: f64) -> f64 {
        self.rho0 * (self.beta * e).exp()
    }

    /// Number of independent matrix elements per row: `N`, or `N/2`
    /// quaternion blocks for the GSE class.
    pub fn element_dimension(&self) -> usize {
        match self.class {
            SymmetryClass::Gse => self.dimension / 2,
            _ => self.dimension,
        }
    }

    /// Mean energy attached to each element index. GSE blocks take the mean
    /// of the two reference levels they cover.
    pub fn element_energies(&self) -> Vec<f64> {
        let e = reference_spectrum(self);
        match self.class {
            SymmetryClass::Gse => e.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect(),
            _ => e,
        }
    }

    /// Base variance `Gamma / (2 pi sqrt(rho_k rho_l)) exp(-(e_k - e_l)^2 / (2 kappa0^2))`.
    pub fn pair_variance(&self, ek: f64, el: f64) -> f64 {
        let band = (-(ek - el).powi(2) / (2.0 * self.kappa0 * self.kappa0)).exp();
        self.spreading_width / (2.0 * std::f64::consts::PI * (self.level_density(ek) * self.level_density(el)).sqrt())
            * band
    }

    /// `kappa0 * rho` at the middle of the reference spectrum.
    pub fn wide_band_indicator(&self) -> f64 {
        let e = reference_spectrum(self);
        self.kappa0 * self.level_density(e[e.len() / 2])
    }

    fn parameter_correlation(&self, i: usize, j: usize) -> Result<f64> {
        self.correlator.eval((self.points[i] - self.points[j]) / self.correlation_length)
    }
}

/// Unfolded spectrum `e_k = ln(1 + k beta / rho0) / beta`, `k = 1..=N`,
/// reducing to `k / rho0` at `beta = 0`.
pub fn reference_spectrum(spec: &EnsembleSpec) -> Vec<f64> {
    (1..=spec.dimension)
        .map(|k| {
            let k = k as f64;
            if spec.beta == 0.0 {
                k / spec.rho0
            } else {
                (k * spec.beta / spec.rho0).ln_1p() / spec.beta
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelDensityFit {
    pub rho0: f64,
    pub beta: f64,
    pub n_bins: usize,
}

/// Log-linear fit of a histogram of `energies` to `rho0 exp(beta e)`,
/// weighted by bin counts.
pub fn fit_level_density(energies: &[f64], n_bins: usize) -> Result<LevelDensityFit> {
    if energies.len() < 2 || n_bins < 2 {
        return Err(Error::Domain("level density fit needs >= 2 energies and >= 2 bins".into()));
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::IllConditioned("all energies coincide".into()));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &e in energies {
        let b = (((e - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let w = c as f64;
        let x = lo + (b as f64 + 0.5) * width;
        let y = (c as f64 / width).ln();
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return Err(Error::IllConditioned("fewer than two occupied bins".into()));
    }
    let beta = (sw * sxy - sx * sy) / det;
    let intercept = (sy - beta * sx) / sw;
    Ok(LevelDensityFit {
        rho0: intercept.exp(),
        beta,
        n_bins,
    })
}

/// One ensemble member: a matrix per parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct BathSample {
    pub class: SymmetryClass,
    pub points: Vec<f64>,
    pub reference: Vec<f64>,
    pub member: u64,
    /// Shape `[points, N, N]`.
    pub matrices: Array3<Complex64>,
}

impl BathSample {
    pub fn matrix(&self, point: usize) -> Array2<Complex64> {
        self.matrices.index_axis(ndarray::Axis(0), point).to_owned()
    }

    /// Real component `c` of element `(k, l)` at parameter point `i`, with
    /// element indices in quaternion blocks for the GSE class.
    pub fn component(&self, c: usize, k: usize, l: usize, i: usize) -> f64 {
        let m = &self.matrices;
        match self.class {
            SymmetryClass::Goe | SymmetryClass::Gue => {
                let v = m[[i, k, l]];
                if c == 0 {
                    v.re
                } else {
                    v.im
                }
            }
            SymmetryClass::Gse => {
                let (a, b) = (m[[i, 2 * k, 2 * l]], m[[i, 2 * k, 2 * l + 1]]);
                [a.re, a.im, b.re, b.im][c]
            }
        }
    }

    /// Largest violation of the class symmetry over all parameter points.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.matrices.shape()[1];
        let mut worst: f64 = 0.0;
        for m in self.matrices.outer_iter() {
            for k in 0..n {
                for l in 0..n {
                    worst = worst.max((m[[k, l]] - m[[l, k]].conj()).norm());
                    if self.class == SymmetryClass::Goe {
                        worst = worst.max(m[[k, l]].im.abs());
                    }
                }
            }
            if self.class == SymmetryClass::Gse {
                // Each 2x2 block must have the form [[a, b], [-b*, a*]].
                for kb in 0..n / 2 {
                    for lb in 0..n / 2 {
                        let (r, c) = (2 * kb, 2 * lb);
                        worst = worst.max((m[[r, c]] - m[[r + 1, c + 1]].conj()).norm());
                        worst = worst.max((m[[r, c + 1]] + m[[r + 1, c]].conj()).norm());
                    }
                }
            }
        }
        worst
    }
}

/// Precomputed factors for repeated sampling of one ensemble.
#[derive(Debug, Clone)]
pub struct BathSampler {
    spec: EnsembleSpec,
    reference: Vec<f64>,
    energies: Vec<f64>,
    /// Rows map independent normals to correlated values over the points.
    factor: Array2<f64>,
}

impl BathSampler {
    pub fn new(spec: &EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        let wide = spec.wide_band_indicator();
        if wide < WIDE_BAND_THRESHOLD {
            log::warn!("kappa0 * rho = {wide:.3} is below {WIDE_BAND_THRESHOLD}; outside the wide-band regime");
        }
        let n = spec.points.len();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] = spec.parameter_correlation(i, j)?;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -CLIP_TOLERANCE * max {
            return Err(Error::InvalidCorrelator(format!(
                "parameter covariance has eigenvalue {min:.3e} against largest {max:.3e}"
            )));
        }
        let factor = Array2::from_shape_fn((n, n), |(i, j)| {
            eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
        });
        Ok(Self {
            spec: spec.clone(),
            reference: reference_spectrum(spec),
            energies: spec.element_energies(),
            factor,
        })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Covariance law for components `(c, k, l, i)` and `(d, m, n, j)`:
    /// `sigma^2_kl G_ij (delta_km delta_ln +- delta_kn delta_lm)`, with the
    /// plus sign for the scalar part and minus for the vector parts.
    pub fn law(&self, a: Observable, b: Observable) -> Result<f64> {
        if a.component != b.component {
            return Ok(0.0);
        }
        let direct = (a.k == b.k && a.l == b.l) as u8 as f64;
        let swapped = (a.k == b.l && a.l == b.k) as u8 as f64;
        let pair = if a.component == 0 { direct + swapped } else { direct - swapped };
        if pair == 0.0 {
            return Ok(0.0);
        }
        let sigma2 = self.spec.pair_variance(self.energies[a.k], self.energies[a.l]);
        Ok(sigma2 * self.spec.parameter_correlation(a.point, b.point)? * pair)
    }

    /// Draws ensemble member `member` from the counter-based stream of `seed`.
    pub fn sample(&self, seed: u64, member: u64) -> BathSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(member);
        let n_pts = self.spec.points.len();
        let ne = self.spec.element_dimension();
        let nc = self.spec.class.components();
        let dim = self.spec.dimension;
        let mut out = Array3::<Complex64>::zeros((n_pts, dim, dim));
        let mut z = vec![0.0; n_pts];
        let mut values = vec![[0.0f64; 4]; n_pts];
        for k in 0..ne {
            for l in k..ne {
                let sigma = self.spec.pair_variance(self.energies[k], self.energies[l]).sqrt();
                let used = if k == l { 1 } else { nc };
                let scale = if k == l { sigma * std::f64::consts::SQRT_2 } else { sigma };
                for c in 0..used {
                    for v in z.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    for i in 0..n_pts {
                        let x: f64 = (0..n_pts).map(|j| self.factor[[i, j]] * z[j]).sum();
                        values[i][c] = scale * x;
                    }
                }
                for (i, v) in values.iter_mut().enumerate() {
                    if k == l {
                        v[0] += self.energies[k];
                        v[1..].iter_mut().for_each(|x| *x = 0.0);
                    }
                    self.place(&mut out, i, k, l, v);
                }
            }
        }
        BathSample {
            class: self.spec.class,
            points: self.spec.points.clone(),
            reference: self.reference.clone(),
            member,
            matrices: out,
        }
    }

    fn place(&self, out: &mut Array3<Complex64>, i: usize, k: usize, l: usize, v: &[f64; 4]) {
        match self.spec.class {
            SymmetryClass::Goe => {
                out[[i, k, l]] = Complex64::new(v[0], 0.0);
                out[[i, l, k]] = Complex64::new(v[0], 0.0);
            }
            SymmetryClass::Gue => {
                out[[i, k, l]] = Complex64::new(v[0], v[1]);
                out[[i, l, k]] = Complex64::new(v[0], -v[1]);
            }
            SymmetryClass::Gse => {
                // Quaternion a0 + a1 i + a2 j + a3 k as [[a0+i a1, a2+i a3], [-a2+i a3, a0-i a1]].
                let q = |a: [f64; 4]| {
                    [
                        [Complex64::new(a[0], a[1]), Complex64::new(a[2], a[3])],
                        [Complex64::new(-a[2], a[3]), Complex64::new(a[0], -a[1])],
                    ]
                };
                let upper = q(*v);
                let lower = q([v[0], -v[1], -v[2], -v[3]]);
                for r in 0..2 {
                    for c in 0..2 {
                        out[[i, 2 * k + r, 2 * l + c]] = upper[r][c];
                        out[[i, 2 * l + r, 2 * k + c]] = lower[r][c];
                    }
                }
            }
        }
    }
}

/// Draws a single member (member index 0).
pub fn sample(spec: &EnsembleSpec, seed: u64) -> Result<BathSample> {
    Ok(BathSampler::new(spec)?.sample(seed, 0))
}

/// Draws members `0..n` in parallel; the result is independent of the
/// thread count.
pub fn sample_ensemble(spec: &EnsembleSpec, seed: u64, n: usize) -> Result<Vec<BathSample>> {
    let sampler = BathSampler::new(spec)?;
    Ok((0..n as u64).into_par_iter().map(|m| sampler.sample(seed, m)).collect())
}

/// Real component `component` of element `(k, l)` at parameter point `point`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Observable {
    pub component: usize,
    pub k: usize,
    pub l: usize,
    pub point: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditKind {
    /// Covered by the pair deltas of the law.
    Law,
    /// Outside the pair deltas; the law predicts zero.
    StructuralZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditEntry {
    pub kind: AuditKind,
    pub a: Observable,
    pub b: Observable,
    pub lag: f64,
    pub law: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub z: f64,
}

/// Scalar-component covariances at one parameter lag, averaged as ratios
/// to the law; for structural zeros, averaged correlations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledQuantity {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub n_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub class: SymmetryClass,
    pub n_samples: usize,
    pub entries: Vec<AuditEntry>,
    /// Fraction of law entries with `|z| <= 3`.
    pub within_fraction: f64,
    /// Bonferroni threshold applied to every structural-zero z-score.
    pub zero_threshold: f64,
    pub max_zero_z: f64,
    pub pooled: Vec<PooledQuantity>,
    pub passed: bool,
}

impl CovarianceReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "class {:?}\nsamples {}\nlaw entries within 3 SE {:.4} (need >= {AUDIT_PASS_FRACTION})\n\
             structural zeros max |z| {:.3} (threshold {:.3})\n",
            self.class, self.n_samples, self.within_fraction, self.max_zero_z, self.zero_threshold
        );
        for q in &self.pooled {
            s += &format!("pooled {} {:.5} +- {:.5} ({} entries)\n", q.name, q.value, q.stderr, q.n_entries);
        }
        s += &format!("result {}\n", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

/// Randomized audit pairs: `n_law` law entries and `n_zero` structural
/// zeros, drawn from `audit_seed`.
pub fn audit_set(sampler: &BathSampler, audit_seed: u64, n_law: usize, n_zero: usize) -> Vec<(AuditKind, Observable, Observable)> {
    let spec = sampler.spec();
    let ne = spec.element_dimension();
    let nc = spec.class.components();
    let np = spec.points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(audit_seed);
    let mut out = Vec::with_capacity(n_law + n_zero);
    let n_pairs = ne * (ne + 1) / 2;
    let unpack = |idx: usize| -> (usize, usize) {
        // Row-major enumeration of k <= l.
        let mut k = 0;
        let mut rem = idx;
        while rem >= ne - k {
            rem -= ne - k;
            k += 1;
        }
        (k, k + rem)
    };
    // Every fourth law entry sits on the diagonal so the doubled variance is audited.
    let picks = sample_indices(&mut rng, n_pairs, n_law.min(n_pairs));
    for (q, idx) in picks.into_iter().enumerate() {
        let (k, mut l) = unpack(idx);
        if q % 4 == 0 {
            l = k;
        }
        let c = if k == l { 0 } else { rng.random_range(0..nc) };
        let (i, j) = (rng.random_range(0..np), rng.random_range(0..np));
        out.push((
            AuditKind::Law,
            Observable { component: c, k, l, point: i },
            Observable { component: c, k, l, point: j },
        ));
    }
    let mut zeros = 0;
    while zeros < n_zero {
        let (k, l) = unpack(rng.random_range(0..n_pairs));
        let (m, n) = unpack(rng.random_range(0..n_pairs));
        let c = if k == l { 0 } else { rng.random_range(0..nc) };
        let d = if m == n { 0 } else { rng.random_range(0..nc) };
        if (k, l) == (m, n) && c == d {
            continue;
        }
        let (i, j) = (rng.random_range(0..np), rng.random_range(0..np));
        out.push((
            AuditKind::StructuralZero,
            Observable { component: c, k, l, point: i },
            Observable { component: d, k: m, l: n, point: j },
        ));
        zeros += 1;
    }
    out
}

/// Default audit size used by [`verify_covariance`].
pub const AUDIT_LAW_ENTRIES: usize = 400;
pub const AUDIT_ZERO_ENTRIES: usize = 400;

/// Audits stored samples against the covariance law.
pub fn verify_covariance(samples: &[BathSample], spec: &EnsembleSpec, audit_seed: u64) -> Result<CovarianceReport> {
    if samples.len() < MIN_VERIFY_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: samples.len(),
            need: MIN_VERIFY_SAMPLES,
        });
    }
    let sampler = BathSampler::new(spec)?;
    let audit = audit_set(&sampler, audit_seed, AUDIT_LAW_ENTRIES, AUDIT_ZERO_ENTRIES);
    let observables = collect_observables(&audit);
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| observables.iter().map(|o| s.component(o.component, o.k, o.l, o.point)).collect())
        .collect();
    build_report(&sampler, &audit, &observables, &rows)
}

/// Samples members `0..n_samples` and audits them without storing the
/// full matrices.
pub fn verify_covariance_streaming(
    spec: &EnsembleSpec,
    seed: u64,
    n_samples: usize,
    audit_seed: u64,
) -> Result<CovarianceReport> {
    if n_samples < MIN_VERIFY_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: n_samples,
            need: MIN_VERIFY_SAMPLES,
        });
    }
    let sampler = BathSampler::new(spec)?;
    let audit = audit_set(&sampler, audit_seed, AUDIT_LAW_ENTRIES, AUDIT_ZERO_ENTRIES);
    let observables = collect_observables(&audit);
    let rows: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|m| {
            let s = sampler.sample(seed, m);
            observables.iter().map(|o| s.component(o.component, o.k, o.l, o.point)).collect()
        })
        .collect();
    build_report(&sampler, &audit, &observables, &rows)
}

fn collect_observables(audit: &[(AuditKind, Observable, Observable)]) -> Vec<Observable> {
    let set: BTreeSet<Observable> = audit.iter().flat_map(|&(_, a, b)| [a, b]).collect();
    set.into_iter().collect()
}

fn build_report(
    sampler: &BathSampler,
    audit: &[(AuditKind, Observable, Observable)],
    observables: &[Observable],
    rows: &[Vec<f64>],
) -> Result<CovarianceReport> {
    let spec = sampler.spec();
    let n = rows.len();
    let nf = n as f64;
    let index: BTreeMap<Observable, usize> = observables.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    let means: Vec<f64> = (0..observables.len())
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / nf)
        .collect();
    let moment = |a: usize, b: usize| -> f64 {
        rows.iter().map(|r| (r[a] - means[a]) * (r[b] - means[b])).sum::<f64>() / (nf - 1.0)
    };

    let mut entries = Vec::with_capacity(audit.len());
    for &(kind, a, b) in audit {
        let (ia, ib) = (index[&a], index[&b]);
        let cov = moment(ia, ib);
        let (va, vb) = (moment(ia, ia), moment(ib, ib));
        let stderr = ((va * vb + cov * cov) / nf).sqrt();
        let law = sampler.law(a, b)?;
        entries.push(AuditEntry {
            kind,
            a,
            b,
            lag: (spec.points[a.point] - spec.points[b.point]).abs(),
            law,
            estimate: cov,
            stderr,
            z: (cov - law) / stderr,
        });
    }

    let law: Vec<&AuditEntry> = entries.iter().filter(|e| e.kind == AuditKind::Law).collect();
    let zeros: Vec<&AuditEntry> = entries.iter().filter(|e| e.kind == AuditKind::StructuralZero).collect();
    let within = law.iter().filter(|e| e.z.abs() <= 3.0).count() as f64 / law.len().max(1) as f64;
    let zero_threshold = if zeros.is_empty() {
        f64::INFINITY
    } else {
        Normal::standard().inverse_cdf(1.0 - 0.5 * ZERO_FAMILY_LEVEL / zeros.len() as f64)
    };
    let max_zero_z = zeros.iter().map(|e| e.z.abs()).fold(0.0, f64::max);

    let mut by_lag: BTreeMap<u64, Vec<&AuditEntry>> = BTreeMap::new();
    for e in law.iter().filter(|e| e.a.component == 0 && e.law != 0.0) {
        by_lag.entry((e.lag * 1e9).round() as u64).or_default().push(e);
    }
    let mut pooled = Vec::new();
    for (key, group) in &by_lag {
        let m = group.len() as f64;
        let value = group.iter().map(|e| e.estimate / e.law).sum::<f64>() / m;
        let stderr = group.iter().map(|e| (e.stderr / e.law).powi(2)).sum::<f64>().sqrt() / m;
        pooled.push(PooledQuantity {
            name: format!("law-ratio lag={:.6}", *key as f64 * 1e-9),
            value,
            stderr,
            n_entries: group.len(),
        });
    }
    let scalar_zeros: Vec<&&AuditEntry> = zeros.iter().filter(|e| e.a.component == 0 && e.b.component == 0).collect();
    if !scalar_zeros.is_empty() {
        let m = scalar_zeros.len() as f64;
        let corr: Vec<f64> = scalar_zeros
            .iter()
            .map(|e| e.estimate / (e.stderr * nf.sqrt()))
            .collect();
        pooled.push(PooledQuantity {
            name: "zero-correlation".into(),
            value: corr.iter().sum::<f64>() / m,
            stderr: 1.0 / (nf * m).sqrt(),
            n_entries: scalar_zeros.len(),
        });
    }

    let passed = within >= AUDIT_PASS_FRACTION && max_zero_z <= zero_threshold;
    Ok(CovarianceReport {
        class: spec.class,
        n_samples: n,
        entries,
        within_fraction: within,
        zero_threshold,
        max_zero_z,
        pooled,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDifference {
    pub quantity: String,
    pub classes: (SymmetryClass, SymmetryClass),
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassComparison {
    pub differences: Vec<ClassDifference>,
    pub max_z: f64,
    /// No pooled quantity differs by more than three standard errors.
    pub indistinguishable: bool,
}

/// Pairwise comparison of the pooled quantities shared by the reports.
pub fn compare_reports(reports: &[CovarianceReport]) -> ClassComparison {
    let mut differences = Vec::new();
    for (ia, a) in reports.iter().enumerate() {
        for b in &reports[ia + 1..] {
            for qa in &a.pooled {
                if let Some(qb) = b.pooled.iter().find(|q| q.name == qa.name) {
                    let z = (qa.value - qb.value) / (qa.stderr.powi(2) + qb.stderr.powi(2)).sqrt();
                    differences.push(ClassDifference {
                        quantity: qa.name.clone(),
                        classes: (a.class, b.class),
                        z,
                    });
                }
            }
        }
    }
    let max_z = differences.iter().map(|d| d.z.abs()).fold(0.0, f64::max);
    ClassComparison {
        indistinguishable: max_z <= 3.0,
        differences,
        max_z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandWidthFit {
    pub kappa: f64,
    pub kappa_stderr: f64,
    pub n_bins: usize,
}

/// Fits the Gaussian band profile of the scalar-component variances at the
/// first parameter point, normalized by the level-density prefactor.
pub fn fit_band_width(spec: &EnsembleSpec, seed: u64, n_samples: usize) -> Result<BandWidthFit> {
    if n_samples < 2 {
        return Err(Error::InsufficientSamples { got: n_samples, need: 2 });
    }
    let sampler = BathSampler::new(spec)?;
    let e = sampler.energies().to_vec();
    let ne = e.len();
    // Fixed member chunks summed in order keep the result independent of
    // the thread count.
    const CHUNK: u64 = 8;
    let n_chunks = (n_samples as u64).div_ceil(CHUNK);
    let partial: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; ne * ne];
            for m in c * CHUNK..((c + 1) * CHUNK).min(n_samples as u64) {
                let s = sampler.sample(seed, m);
                for k in 0..ne {
                    for l in k + 1..ne {
                        let v = s.component(0, k, l, 0);
                        acc[k * ne + l] += v * v;
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; ne * ne];
    for p in &partial {
        sums.iter_mut().zip(p).for_each(|(x, y)| *x += y);
    }
    let g0 = spec.parameter_correlation(0, 0)?;
    let prefactor = |k: usize, l: usize| {
        spec.spreading_width / (2.0 * std::f64::consts::PI * (spec.level_density(e[k]) * spec.level_density(e[l])).sqrt())
            * g0
    };
    let max_gap = e[ne - 1] - e[0];
    let n_bins = 200;
    let width = max_gap / n_bins as f64;
    let mut bins = vec![(0.0, 0usize); n_bins];
    for k in 0..ne {
        for l in k + 1..ne {
            let b = (((e[l] - e[k]) / width) as usize).min(n_bins - 1);
            bins[b].0 += sums[k * ne + l] / n_samples as f64 / prefactor(k, l);
            bins[b].1 += 1;
        }
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy, mut used) = (0.0, 0.0, 0.0, 0.0, 0.0, 0);
    for (b, &(total, count)) in bins.iter().enumerate() {
        if count < 10 {
            continue;
        }
        let profile = total / count as f64;
        if profile < 0.05 {
            continue;
        }
        let x = ((b as f64 + 0.5) * width).powi(2);
        let y = profile.ln();
        let w = count as f64;
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
        used += 1;
    }
    if used < 3 {
        return Err(Error::IllConditioned("fewer than three usable band bins".into()));
    }
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    if !(slope < 0.0) {
        return Err(Error::IllConditioned(format!("band profile does not decay (slope {slope:.3e})")));
    }
    // Residual scatter of the weighted fit propagated to kappa.
    let intercept = (sy - slope * sx) / sw;
    let mut rss = 0.0;
    for (b, &(total, count)) in bins.iter().enumerate() {
        if count < 10 || total / (count as f64) < 0.05 {
            continue;
        }
        let x = ((b as f64 + 0.5) * width).powi(2);
        rss += count as f64 * ((total / count as f64).ln() - intercept - slope * x).powi(2);
    }
    let slope_var = rss / (used as f64 - 2.0).max(1.0) * sw / det;
    let kappa = (-0.5 / slope).sqrt();
    Ok(BandWidthFit {
        kappa,
        kappa_stderr: 0.5 * kappa * slope_var.sqrt() / slope.abs(),
        n_bins: used,
    })
}
