//! Small numerical kernels shared across modules: splines, Gauss–Legendre
//! panels, finite-difference stencils and least-squares lines.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Natural cubic spline through strictly increasing abscissae.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::invalid("table", "abscissa and ordinate lengths differ"));
        }
        if xs.len() < 2 {
            return Err(Error::invalid("table", "need at least two points"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("table", "abscissae must be strictly increasing"));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("table", "non-finite entry"));
        }
        let n = xs.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for the natural-spline tridiagonal system.
            let mut c_prime = vec![0.0; n];
            let mut d_prime = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let c = h1 / 6.0;
                let d = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
                let denom = b - a * c_prime[i - 1];
                c_prime[i] = c / denom;
                d_prime[i] = (d - a * d_prime[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                second[i] = d_prime[i] - c_prime[i] * second[i + 1];
            }
        }
        Ok(Self { xs, ys, second })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> Option<f64> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let i = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= self.xs.len() => self.xs.len() - 2,
            p => p - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        Some(
            a * self.ys[i]
                + b * self.ys[i + 1]
                + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h
                    / 6.0,
        )
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Composite 16-point Gauss–Legendre over [a, b] with panels no wider than
/// `max_panel`. Panels are split at every point of `breaks` inside (a, b)
/// and graded geometrically toward any break, where the integrand is
/// assumed non-smooth.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, max_panel: f64, breaks: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut edges = vec![lo];
    edges.extend(breaks.iter().copied().filter(|&x| x > lo && x < hi));
    edges.push(hi);
    let is_break = |x: f64| breaks.contains(&x);
    let (nodes, weights) = gl16();
    let panel = |l: f64, r: f64| -> f64 {
        let mid = 0.5 * (l + r);
        let half = 0.5 * (r - l);
        half * nodes
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
    };
    let mut total = 0.0;
    for seg in edges.windows(2) {
        let (mut l, mut r) = (seg[0], seg[1]);
        // Geometric grading toward kinks, ratio 0.15 over 12 levels.
        const RATIO: f64 = 0.15;
        const LEVELS: usize = 12;
        if is_break(l) {
            let len = (r - l).min(max_panel);
            let mut inner = l + len * RATIO.powi(LEVELS as i32);
            total += panel(l, inner);
            for k in (0..LEVELS).rev() {
                let next = l + len * RATIO.powi(k as i32);
                total += panel(inner, next);
                inner = next;
            }
            l = inner;
        }
        if is_break(r) && r > l {
            let len = (r - l).min(max_panel);
            let mut inner = r - len * RATIO.powi(LEVELS as i32);
            total += panel(inner, r);
            for k in (0..LEVELS).rev() {
                let next = r - len * RATIO.powi(k as i32);
                total += panel(next, inner);
                inner = next;
            }
            r = inner;
        }
        if r > l {
            let len = r - l;
            let panels = ((len / max_panel).ceil() as usize).max(1);
            let h = len / panels as f64;
            for p in 0..panels {
                total += panel(l + p as f64 * h, l + (p + 1) as f64 * h);
            }
        }
    }
    sign * total
}

/// Fornberg's algorithm: weights for the `order`-th derivative at `z` from
/// samples at `xs`.
pub fn fd_weights(z: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Central stencil weights (offsets -m..=m in units of the spacing) for the
/// `order`-th derivative with at least `accuracy` order of accuracy.
pub fn central_stencil(order: usize, accuracy: usize) -> Vec<f64> {
    let m = order.div_ceil(2) + accuracy / 2 - 1;
    let xs: Vec<f64> = (-(m as i64)..=m as i64).map(|k| k as f64).collect();
    fd_weights(0.0, &xs, order)
}

/// Ordinary least-squares line `y = intercept + slope * x` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    fit_line_weighted(xs, ys, None)
}

pub fn fit_line_weighted(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> LineFit {
    let n = xs.len();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * xs[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w(i) * ys[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (xs[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w(i) * (xs[i] - mx) * (ys[i] - my)).sum();
    let syy: f64 = (0..n).map(|i| w(i) * (ys[i] - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..n)
        .map(|i| w(i) * (ys[i] - intercept - slope * xs[i]).powi(2))
        .sum();
    let dof = (n as f64 - 2.0).max(1.0);
    // Effective sample count keeps the variance estimate meaningful for
    // non-uniform weights.
    let n_eff = sw * sw / (0..n).map(|i| w(i) * w(i)).sum::<f64>();
    let sigma2 = ss_res / sw * n_eff / dof;
    let slope_var = sigma2 / sxx * sw / n_eff;
    let slope_stderr = slope_var.sqrt();
    let intercept_stderr = (slope_var * (sxx / sw + mx * mx)).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LineFit {
        slope,
        intercept,
        slope_stderr,
        intercept_stderr,
        r_squared,
    }
}

pub fn is_power_of_two(n: usize) -> bool {
    n >= 1 && n & (n - 1) == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // Degree 15 is the exactness limit of the 8-point rule.
        let integral: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(14)).sum();
        assert_relative_eq!(integral, 2.0 / 15.0, epsilon = 1e-14);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn panel_integration_with_breakpoint() {
        let v = integrate_panels(|x: f64| x.abs().powf(1.5), -1.0, 2.0, 0.5, &[0.0]);
        let exact = (1.0 + 2f64.powf(2.5)) / 2.5;
        assert_relative_eq!(v, exact, max_relative = 1e-12);
        let rev = integrate_panels(|x: f64| x.abs().powf(1.5), 2.0, -1.0, 0.5, &[0.0]);
        assert_relative_eq!(rev, -exact, max_relative = 1e-12);
    }

    #[test]
    fn fornberg_matches_known_stencils() {
        let w = central_stencil(2, 2);
        assert_eq!(w.len(), 3);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(w[1], -2.0, epsilon = 1e-14);
        let w = central_stencil(1, 4);
        assert_relative_eq!(w[0], 1.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(w[1], -2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn spline_reproduces_linear_data_and_rejects_outside() {
        let s = CubicSpline::new(vec![0.0, 1.0, 2.0, 4.0], vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        assert_relative_eq!(s.eval(3.0).unwrap(), 7.0, epsilon = 1e-12);
        assert!(s.eval(4.5).is_none());
        assert!(CubicSpline::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let fit = fit_line(&xs, &ys);
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 3.0, epsilon = 1e-12);
        assert!(fit.slope_stderr < 1e-12);
    }
}
