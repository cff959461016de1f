//! Quadrature: Gauss–Legendre rules, adaptive Gauss–Kronrod (7/15) and the
//! log-weighted integral `∫ r^a (1 + |ln r|)^b g(r) dr` on subintervals of (0, 1].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { abs_tol: 1e-12, rel_tol: 1e-13, max_subdivisions: 4000 }
    }
}

/// A computed integral with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Newton iteration on the three-term recurrence; nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A Gauss–Legendre rule mapped to `[a, b]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Points `(x, w)` of the rule on `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(&t, &w)| (c + h * t, h * w))
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    let kron = kron * h;
    let gauss = gauss * h;
    (kron, (kron - gauss).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod 7/15 integration over a finite interval.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, cfg: &QuadConfig) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("integration limits must be finite"));
    }
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let (value, error) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut evaluations = 15;
    let mut splits = 0;
    while total_err > cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
        if splits >= cfg.max_subdivisions {
            return Err(Error::Numerical {
                message: format!("adaptive quadrature on [{a}, {b}] did not converge"),
                achieved: total_err,
                partial: None,
            });
        }
        let worst = heap.pop().expect("heap holds every panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel at floating-point resolution; accept its estimate.
            heap.push(Panel { error: 0.0, ..worst });
            total_err = heap.iter().map(|p| p.error).sum();
            continue;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        evaluations += 30;
        splits += 1;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
        // Re-sum to keep rounding drift out of the running totals.
        total = heap.iter().map(|p| p.value).sum();
        total_err = heap.iter().map(|p| p.error).sum();
    }
    Ok(Integral { value: total, error: total_err, evaluations })
}

/// `∫_{lo}^{hi} r^a (1 + |ln r|)^b g(r) dr` for `0 <= lo < hi <= 1`, `a > -1`, `b >= 0`.
///
/// Substitutes `r = e^{-t}`, which turns the integrand into
/// `e^{-(a+1)t} (1+t)^b g(e^{-t})`, and integrates over panels
/// `[0,1], [1,2], [2,4], ...` until the remaining tail is below tolerance.
pub fn quad_weighted(
    a: f64,
    b: f64,
    g: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    cfg: &QuadConfig,
) -> Result<Integral> {
    if !(a > -1.0) {
        return Err(Error::domain(format!("power exponent a = {a} must exceed -1")));
    }
    if !(b >= 0.0) {
        return Err(Error::domain(format!("log exponent b = {b} must be nonnegative")));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::domain(format!("interval [{lo}, {hi}] not inside (0, 1]")));
    }
    let c = a + 1.0;
    let h = |t: f64| (-c * t).exp() * (1.0 + t).powf(b) * g((-t).exp());
    let t0 = -hi.ln();
    let t_end = if lo == 0.0 { f64::INFINITY } else { -lo.ln() };

    let mut value = 0.0;
    let mut error = 0.0;
    let mut evaluations = 0;
    let mut left = t0;
    let mut width = 1.0;
    // The integrand decays once t > b/c - 1; the tail estimate is only
    // trusted past that point.
    let decay_from = (b / c - 1.0).max(0.0);
    let panel_cfg = QuadConfig { abs_tol: cfg.abs_tol * 0.1, ..*cfg };
    for _ in 0..200 {
        let right = (left + width).min(t_end);
        let r = integrate(h, left, right, &panel_cfg)?;
        value += r.value;
        error += r.error;
        evaluations += r.evaluations;
        if right >= t_end {
            return Ok(Integral { value, error, evaluations });
        }
        left = right;
        width *= 2.0;
        if left > decay_from {
            // Tail of e^{-ct}(1+t)^b |g| from `left`, with g frozen at its
            // value there; (1+t)^b e^{-ct} decays at rate c - b/(1+t).
            let rate = c - b / (1.0 + left);
            if rate > 0.0 {
                let tail = h(left).abs() / rate;
                let tol = cfg.abs_tol.max(cfg.rel_tol * value.abs());
                if tail < 0.01 * tol {
                    return Ok(Integral { value, error: error + tail, evaluations });
                }
            }
        }
    }
    Err(Error::Numerical {
        message: "log-substituted tail did not decay".into(),
        achieved: error,
        partial: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rules_integrate_polynomials_exactly() {
        for n in 1..=20 {
            let rule = GaussRule::new(n);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
                let got = rule.integrate(|x| x.powi(deg as i32), -1.0, 1.0);
                assert!((got - exact).abs() < 1e-14, "n={n} deg={deg}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn gauss_weights_sum_to_interval_length() {
        let rule = GaussRule::new(9);
        let s: f64 = rule.on(2.0, 5.0).map(|(_, w)| w).sum();
        assert_relative_eq!(s, 3.0, max_relative = 1e-15);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = integrate(|x: f64| x.sqrt().ln(), 0.0, 1.0, &QuadConfig::default()).unwrap();
        assert!((r.value + 0.5).abs() < 1e-11, "{}", r.value);
    }

    #[test]
    fn adaptive_reports_failure() {
        let cfg = QuadConfig { max_subdivisions: 3, ..QuadConfig::default() };
        let r = integrate(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, &cfg);
        match r {
            Err(Error::Numerical { achieved, .. }) => assert!(achieved > 0.0),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn weighted_closed_forms() {
        let cfg = QuadConfig::default();
        let v = quad_weighted(2.0, 0.0, |_| 1.0, 0.0, 1.0, &cfg).unwrap().value;
        assert!((v - 1.0 / 3.0).abs() <= 1e-12, "{v}");
        let v = quad_weighted(1.0, 1.0, |_| 1.0, 0.0, 1.0, &cfg).unwrap().value;
        assert!((v - 0.75).abs() <= 1e-12, "{v}");
    }

    // Reference values from 40-digit adaptive quadrature, frozen here.
    #[test]
    fn weighted_matches_high_precision_oracle() {
        let cfg = QuadConfig::default();
        let v = quad_weighted(0.5, 2.0, |_| 1.0, 0.0, 1.0, &cfg).unwrap().value;
        assert!((v - 2.148_148_148_148_148).abs() <= 1e-12, "{v}");
        let v = quad_weighted(-0.5, 1.5, |r| (3.0 * r).cos(), 0.0, 1.0, &cfg).unwrap().value;
        assert!((v - 9.719_255_583_052_1).abs() <= 1e-12, "{v}");
        let v = quad_weighted(3.0, 4.0, f64::exp, 0.0, 0.5, &cfg).unwrap().value;
        assert!((v - 0.354_613_556_837_071_7).abs() <= 1e-12, "{v}");
    }

    #[test]
    fn weighted_partial_interval() {
        // ∫_{1/4}^{1/2} r dr = (1/4 - 1/16) / 2
        let v = quad_weighted(1.0, 0.0, |_| 1.0, 0.25, 0.5, &QuadConfig::default()).unwrap().value;
        assert_relative_eq!(v, 0.09375, max_relative = 1e-13);
    }

    #[test]
    fn weighted_rejects_bad_input() {
        let cfg = QuadConfig::default();
        assert!(quad_weighted(-1.0, 0.0, |_| 1.0, 0.0, 1.0, &cfg).is_err());
        assert!(quad_weighted(1.0, 0.0, |_| 1.0, 0.5, 1.5, &cfg).is_err());
    }
}
