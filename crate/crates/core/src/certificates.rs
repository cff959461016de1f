//! Subspace certificates for μ₀ and entropy-number lower bounds, valid for
//! every `1 <= p < inf`.
//!
//! Everything is built from one bump `f(x) = Π (1 - x_i²)^{m+1}` on
//! `[-1, 1]^n`, dilated and translated onto a lattice inside one dyadic shell.
//! Supports of distinct lattice functions only meet on faces, so norms of a
//! span decouple in `ℓ_p` and `α(S)` is the largest per-function ratio. Each
//! ratio is enclosed by the weight range on its support cube times the exact
//! unweighted seminorm, which is a one-dimensional computation for every `n`.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    first_nonempty_gap, lattice_count, lattice_points, log_weight_at_depth, weight_enclosure, EmbeddingParams,
    LatticePoint, RadialRange, MAX_GAP,
};
use crate::quad::{integrate, QuadConfig};

/// Relative widening of every certified log bound, covering quadrature and
/// rounding error in the seminorm constant.
const LOG_SLACK: f64 = 1e-11;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Geometric midpoint, the natural centre for ratio enclosures.
    pub fn midpoint(&self) -> f64 {
        (self.lo * self.hi).sqrt()
    }

    pub fn width_ratio(&self) -> f64 {
        self.hi / self.lo
    }

    fn from_logs(lo: f64, hi: f64) -> Self {
        Interval { lo: (lo - LOG_SLACK * (lo.abs() + 1.0)).exp(), hi: (hi + LOG_SLACK * (hi.abs() + 1.0)).exp() }
    }
}

/// The profile `φ(t) = (1 - t²)^{m+1}` as a polynomial in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub m: u32,
    /// Coefficients of `φ`, lowest degree first.
    coeffs: Vec<f64>,
}

impl BumpFunction {
    pub fn new(m: u32) -> Self {
        let q = m as usize + 1;
        let mut coeffs = vec![0.0; 2 * q + 1];
        let mut binom = 1.0;
        for i in 0..=q {
            coeffs[2 * i] = if i % 2 == 0 { binom } else { -binom };
            binom = binom * (q - i) as f64 / (i + 1) as f64;
        }
        BumpFunction { m, coeffs }
    }

    /// Coefficients of `φ^{(a)}`.
    fn derivative(&self, a: u32) -> Vec<f64> {
        let mut c = self.coeffs.clone();
        for _ in 0..a {
            c = c.iter().enumerate().skip(1).map(|(i, &x)| i as f64 * x).collect();
        }
        c
    }

    /// `φ^{(a)}(t)` for `|t| <= 1`, zero outside.
    pub fn eval(&self, a: u32, t: f64) -> f64 {
        if t.abs() > 1.0 {
            return 0.0;
        }
        horner(&self.derivative(a), t)
    }

    /// `∫_{-1}^{1} |φ^{(a)}|^p dt`, integrated piecewise between the sign
    /// changes of `φ^{(a)}` so every panel is smooth in its interior.
    pub fn derivative_norm_p(&self, a: u32, p: f64) -> Result<f64> {
        let c = self.derivative(a);
        let f = |t: f64| horner(&c, t);
        let mut breaks = vec![-1.0];
        const GRID: usize = 4096;
        let mut prev = (-1.0, f(-1.0 + 1e-9));
        for i in 1..=GRID {
            let t = -1.0 + 2.0 * i as f64 / GRID as f64 - if i == GRID { 1e-9 } else { 0.0 };
            let v = f(t);
            if v == 0.0 && i < GRID {
                breaks.push(t);
            } else if v * prev.1 < 0.0 {
                breaks.push(bisect_root(&f, prev.0, t));
            }
            prev = (t, v);
        }
        breaks.push(1.0);
        breaks.dedup();
        let cfg = QuadConfig { abs_tol: 1e-15, rel_tol: 1e-14, max_subdivisions: 2000 };
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += integrate(|t| f(t).abs().powf(p), w[0], w[1], &cfg)?.value;
        }
        Ok(total)
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &x| acc * t + x)
}

fn bisect_root(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if f(mid) * fa > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// `K = Σ_{|α|=m} ‖D^α f‖_p^p / ‖f‖_p^p` for the tensor bump in `n`
/// dimensions, from one-dimensional factors.
pub fn seminorm_constant(params: &EmbeddingParams) -> Result<f64> {
    params.validate()?;
    let bump = BumpFunction::new(params.m);
    let one_d: Vec<f64> =
        (0..=params.m).map(|a| bump.derivative_norm_p(a, params.p)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for alpha in multi_indices(params.n as usize, params.m) {
        total += alpha.iter().map(|&a| one_d[a as usize] / one_d[0]).product::<f64>();
    }
    Ok(total)
}

fn multi_indices(n: usize, m: u32) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![m]];
    }
    let mut out = Vec::new();
    for first in 0..=m {
        for mut rest in multi_indices(n - 1, m - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Per-function data shared by every lattice computation at fixed parameters.
#[derive(Debug, Clone, Copy)]
struct RatioModel {
    params: EmbeddingParams,
    log_k: f64,
}

impl RatioModel {
    fn new(params: &EmbeddingParams) -> Result<Self> {
        Ok(RatioModel { params: *params, log_k: seminorm_constant(params)?.ln() })
    }

    /// `ln` bounds of `‖f_lk‖_E / ‖f_lk‖_p` from the weight range on the cube.
    fn log_ratio(&self, pt: &LatticePoint) -> Result<(f64, f64)> {
        let range = RadialRange::cube(pt.l, &pt.k)?;
        let w = weight_enclosure(&range, &self.params)?;
        let p = self.params.p;
        let base = pt.l as f64 * self.params.m as f64 * p * LN_2 + self.log_k;
        Ok(((base + w.log_min) / p, (base + w.log_max) / p))
    }
}

/// Enclosure of `α(S)` for a span of disjoint-support lattice functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEnclosure {
    /// Bounds of the exact `α(S)`.
    pub alpha: Interval,
    /// Bounds of the smallest per-function ratio, so `[min.lo, alpha.hi]`
    /// holds `‖g‖_E / ‖g‖_p` for every nonzero `g` in the span.
    pub min_ratio: Interval,
}

/// `α(S)` of the span of `f(2^l x - k)` over the given points.
///
/// Supports must not overlap in their interiors. Empty input gives the
/// zero-dimensional span, whose enclosure is degenerate at 0.
pub fn alpha_disjoint(points: &[LatticePoint], params: &EmbeddingParams) -> Result<AlphaEnclosure> {
    check_disjoint(points)?;
    let model = RatioModel::new(params)?;
    alpha_of(points, &model)
}

fn alpha_of(points: &[LatticePoint], model: &RatioModel) -> Result<AlphaEnclosure> {
    if points.is_empty() {
        let zero = Interval { lo: 0.0, hi: 0.0 };
        return Ok(AlphaEnclosure { alpha: zero, min_ratio: zero });
    }
    let logs: Vec<(f64, f64)> = points.par_iter().map(|pt| model.log_ratio(pt)).collect::<Result<_>>()?;
    let max_lo = logs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let max_hi = logs.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let min_lo = logs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let min_hi = logs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(AlphaEnclosure { alpha: Interval::from_logs(max_lo, max_hi), min_ratio: Interval::from_logs(min_lo, min_hi) })
}

/// Domain error unless the closed support cubes have disjoint interiors.
pub fn check_disjoint(points: &[LatticePoint]) -> Result<()> {
    let Some(top) = points.iter().map(|p| p.l).max() else { return Ok(()) };
    if let Some(pt) = points.iter().find(|p| p.k.len() != points[0].k.len()) {
        return Err(Error::domain(format!("lattice point {:?} has the wrong dimension", pt.k)));
    }
    // Centres and half-widths in units of 2^{-top}.
    let scaled: Vec<(Vec<i128>, i128)> = points
        .iter()
        .map(|p| {
            let s = 1i128 << (top - p.l);
            (p.k.iter().map(|&k| k as i128 * s).collect(), s)
        })
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| scaled[i].0[0] - scaled[i].1);
    for (a, &i) in order.iter().enumerate() {
        let (ci, hi) = &scaled[i];
        for &j in &order[a + 1..] {
            let (cj, hj) = &scaled[j];
            if cj[0] - hj >= ci[0] + hi {
                break;
            }
            if ci.iter().zip(cj).all(|(x, y)| (x - y).abs() < hi + hj) {
                return Err(Error::domain(format!(
                    "supports of {:?} and {:?} overlap; general α(S) is not supported",
                    points[i], points[j]
                )));
            }
        }
    }
    Ok(())
}

/// `span^l_j`: the admitted lattice functions of level `l` in shell `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSubspace {
    pub j: u32,
    pub l: u32,
    pub points: Vec<LatticePoint>,
    pub dim: usize,
    /// Holds `‖g‖_E / ‖g‖_p` for every nonzero `g` in the span.
    pub ratio_enclosure: Interval,
    pub alpha: AlphaEnclosure,
}

impl LatticeSubspace {
    /// The reference scale `j^σ 2^{m(l-j)}` of the norm-ratio law.
    pub fn reference_scale(&self, params: &EmbeddingParams) -> f64 {
        (self.j as f64).powf(params.sigma) * 2f64.powi((params.m * (self.l - self.j)) as i32)
    }
}

pub fn build_span(l: u32, j: u32, params: &EmbeddingParams) -> Result<LatticeSubspace> {
    let model = RatioModel::new(params)?;
    span_with(l, j, &model)
}

fn span_with(l: u32, j: u32, model: &RatioModel) -> Result<LatticeSubspace> {
    let points = lattice_points(l, j, model.params.n)?;
    let alpha = alpha_of(&points, model)?;
    Ok(LatticeSubspace {
        j,
        l,
        dim: points.len(),
        ratio_enclosure: Interval { lo: alpha.min_ratio.lo, hi: alpha.alpha.hi },
        alpha,
        points,
    })
}

/// `‖f(2^l · - k)‖_p / (2^{-ln/p} ‖f‖_p)` by direct quadrature in `n = 1`;
/// equals 1 by change of variables.
pub fn lp_scaling_ratio(pt: &LatticePoint, p: f64) -> Result<f64> {
    let [k] = pt.k[..] else { return Err(Error::domain("direct quadrature needs n = 1")) };
    let bump = BumpFunction::new(1);
    let scale = 2f64.powi(-(pt.l as i32));
    let centre = k as f64 * scale;
    let cfg = QuadConfig { abs_tol: 1e-300, rel_tol: 1e-14, max_subdivisions: 2000 };
    let lhs = integrate(|x| bump.eval(0, x / scale - k as f64).abs().powf(p), centre - scale, centre + scale, &cfg)?;
    let rhs = bump.derivative_norm_p(0, p)?;
    Ok((lhs.value / (scale * rhs)).powf(1.0 / p))
}

/// `‖f_lk‖_E / ‖f_lk‖_p` by direct quadrature of the weighted integral,
/// `n = 1` only. Used to validate the enclosures.
pub fn basis_ratio_quadrature(pt: &LatticePoint, params: &EmbeddingParams) -> Result<f64> {
    let [k] = pt.k[..] else { return Err(Error::domain("direct quadrature needs n = 1")) };
    let bump = BumpFunction::new(params.m);
    let (m, p, l) = (params.m, params.p, pt.l as f64);
    let depth = |y: f64| l * LN_2 - (y + k as f64).abs().ln();
    let centre_log = log_weight_at_depth(depth(0.0), params);
    let cfg = QuadConfig { abs_tol: 1e-300, rel_tol: 1e-13, max_subdivisions: 4000 };
    let weighted = integrate(
        |y| (log_weight_at_depth(depth(y), params) - centre_log).exp() * bump.eval(m, y).abs().powf(p),
        -1.0,
        1.0,
        &cfg,
    )?;
    let plain = bump.derivative_norm_p(0, p)?;
    Ok(((weighted.value / plain).ln() + centre_log + l * m as f64 * p * LN_2).exp().powf(1.0 / p))
}

/// Which construction a certificate came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SubspaceDescriptor {
    /// `span^L_1`.
    S1 { level: u32 },
    /// `⊕_{j<=J} span^{j+g}_j`.
    S2 { cutoff: u32, gap: u32 },
    /// `⊕_{j<=J} span^{l_j}_j`.
    S3 { cutoff: u32, levels: Vec<u32> },
    /// Nothing admissible at this threshold.
    Empty { diagnostic: String },
}

/// Certificate that `μ₀(ε, B) >= dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mu0Certificate {
    pub subspace: SubspaceDescriptor,
    pub dim: u64,
    pub alpha_upper: f64,
    pub alpha_lower: f64,
    pub epsilon: f64,
    pub params: EmbeddingParams,
    pub provenance: BTreeMap<String, String>,
    /// The search stopped at its largest admissible level or cutoff, so
    /// `dim` is sound but may be far below what ε allows.
    #[serde(default)]
    pub capped: bool,
}

impl Mu0Certificate {
    /// The certified inequality `alpha_upper · ε <= 1`.
    pub fn is_sound(&self) -> bool {
        self.dim == 0 || self.alpha_upper * self.epsilon <= 1.0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Smallest level gap with a nonempty lattice. The shells' own level `l = j`
/// admits no strictly contained cube, so S2 and S3 are shifted by this gap.
pub fn gap_offset(n: u32) -> u32 {
    first_nonempty_gap(n)
}

/// Base-2 level rule `l_j = j + ⌈log2(J/j)/n⌉`, before the gap offset.
pub fn s3_base_level(j: u32, cutoff: u32, n: u32) -> Result<u32> {
    if j < 1 || j > cutoff {
        return Err(Error::domain(format!("need 1 <= j <= J, got j={j}, J={cutoff}")));
    }
    Ok(j + ((cutoff as f64 / j as f64).log2() / n as f64 - 1e-12).ceil().max(0.0) as u32)
}

/// Levels `l_j = j + g0 + ⌈log2(J/j)/n⌉` used by S3 and the limiting entropy family.
pub fn s3_levels(cutoff: u32, n: u32) -> Result<Vec<u32>> {
    (1..=cutoff).map(|j| Ok(s3_base_level(j, cutoff, n)? + gap_offset(n))).collect()
}

/// Largest cutoff searched by S2/S3.
pub const MAX_CUTOFF: u32 = 1 << 22;
/// Largest cutoff searched by S3; each step costs J span evaluations.
pub const S3_MAX_CUTOFF: u32 = 1 << 16;

/// Builds certificates at fixed parameters, caching the seminorm constant.
#[derive(Debug, Clone)]
pub struct CertificateBuilder {
    model: RatioModel,
    gap: u32,
}

impl CertificateBuilder {
    pub fn new(params: &EmbeddingParams) -> Result<Self> {
        Ok(CertificateBuilder { model: RatioModel::new(params)?, gap: gap_offset(params.n) })
    }

    pub fn params(&self) -> &EmbeddingParams {
        &self.model.params
    }

    fn provenance(&self, rule: &str) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("bump".into(), format!("prod (1 - t^2)^{} on [-1,1]^n", self.model.params.m + 1));
        out.insert(
            "seminorm_constant".into(),
            format!("{:.15e}: 1D adaptive Gauss-Kronrod between sign changes of the derivatives", self.model.log_k.exp()),
        );
        out.insert("alpha_enclosure".into(), "weight range per support cube x exact seminorm, max over basis".into());
        out.insert("gap_offset".into(), format!("{}: smallest gap with a nonempty lattice", self.gap));
        out.insert("level_rule".into(), rule.into());
        out.insert("log_base".into(), "2, ceiling rounding".into());
        out
    }

    fn certificate(&self, subspace: SubspaceDescriptor, dim: u64, alpha: Interval, epsilon: Option<f64>, rule: &str) -> Mu0Certificate {
        Mu0Certificate {
            subspace,
            dim,
            alpha_upper: alpha.hi,
            alpha_lower: alpha.lo,
            epsilon: epsilon.unwrap_or(1.0 / alpha.hi),
            params: self.model.params,
            provenance: self.provenance(rule),
            capped: false,
        }
    }

    fn empty(&self, epsilon: f64, diagnostic: String) -> Mu0Certificate {
        Mu0Certificate {
            subspace: SubspaceDescriptor::Empty { diagnostic },
            dim: 0,
            alpha_upper: 0.0,
            alpha_lower: 0.0,
            epsilon,
            params: self.model.params,
            provenance: self.provenance("none"),
            capped: false,
        }
    }

    /// α bounds of one shell's span, from the lattice at its gap.
    fn span_alpha(&self, l: u32, j: u32) -> Result<Interval> {
        Ok(alpha_of(&lattice_points(l, j, self.model.params.n)?, &self.model)?.alpha)
    }

    /// `S1 = span^L_1` at a given level.
    pub fn s1_at(&self, level: u32) -> Result<Mu0Certificate> {
        let alpha = self.span_alpha(level, 1)?;
        let dim = lattice_count(level - 1, self.model.params.n) as u64;
        Ok(self.certificate(SubspaceDescriptor::S1 { level }, dim, alpha, None, "fixed level"))
    }

    /// Largest `L` with certified `α(span^L_1) · ε <= 1`.
    pub fn build_s1(&self, epsilon: f64) -> Result<Mu0Certificate> {
        check_epsilon(epsilon)?;
        let fits = |level: u32| -> Result<bool> { Ok(self.span_alpha(level, 1)?.hi * epsilon <= 1.0) };
        let first = 1 + self.gap;
        // Enumeration cost is 2^{n gap}; about a million functions at the top.
        let top = 1 + MAX_GAP.min(20 / self.model.params.n);
        match largest_true(first, top, fits)? {
            None => Ok(self.empty(epsilon, format!("span^{first}_1 already has alpha above 1/eps"))),
            Some(level) => {
                let mut c = self.s1_at(level)?;
                c.epsilon = epsilon;
                c.capped = level == top;
                c.provenance.insert("level_rule".into(), "largest L with certified alpha_upper <= 1/eps".into());
                Ok(c)
            }
        }
    }

    /// `S2 = ⊕_{j<=J} span^{j+g0}_j` at a given cutoff.
    pub fn s2_at(&self, cutoff: u32) -> Result<Mu0Certificate> {
        if cutoff == 0 {
            return Err(Error::domain("cutoff must be at least 1"));
        }
        // α of each summand grows with j, so the last one is the maximum.
        let alpha = self.span_alpha(cutoff + self.gap, cutoff)?;
        let dim = cutoff as u64 * lattice_count(self.gap, self.model.params.n) as u64;
        Ok(self.certificate(SubspaceDescriptor::S2 { cutoff, gap: self.gap }, dim, alpha, None, "fixed cutoff"))
    }

    /// Largest `J` with certified `α(S2) · ε <= 1`.
    pub fn build_s2(&self, epsilon: f64) -> Result<Mu0Certificate> {
        check_epsilon(epsilon)?;
        let fits = |j: u32| -> Result<bool> { Ok(self.span_alpha(j + self.gap, j)?.hi * epsilon <= 1.0) };
        match largest_true(1, MAX_CUTOFF, fits)? {
            None => Ok(self.empty(epsilon, "the first shell already has alpha above 1/eps".into())),
            Some(cutoff) => {
                let mut c = self.s2_at(cutoff)?;
                c.epsilon = epsilon;
                c.capped = cutoff == MAX_CUTOFF;
                c.provenance.insert("level_rule".into(), "largest J with certified alpha_upper <= 1/eps".into());
                Ok(c)
            }
        }
    }

    /// `S3 = ⊕_{j<=J} span^{l_j}_j` at a given cutoff.
    pub fn s3_at(&self, cutoff: u32) -> Result<Mu0Certificate> {
        let n = self.model.params.n;
        let levels = s3_levels(cutoff, n)?;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut dim = 0u64;
        let spans: Vec<(Interval, u64)> = levels
            .par_iter()
            .enumerate()
            .map(|(i, &l)| {
                let j = i as u32 + 1;
                Ok((self.span_alpha(l, j)?, lattice_count(l - j, n) as u64))
            })
            .collect::<Result<_>>()?;
        for (a, d) in spans {
            lo = lo.max(a.lo);
            hi = hi.max(a.hi);
            dim += d;
        }
        let alpha = Interval { lo, hi };
        Ok(self.certificate(SubspaceDescriptor::S3 { cutoff, levels }, dim, alpha, None, "l_j = j + g0 + ceil(log2(J/j)/n)"))
    }

    /// Largest `J` with certified `α(S3) · ε <= 1`.
    pub fn build_s3(&self, epsilon: f64) -> Result<Mu0Certificate> {
        check_epsilon(epsilon)?;
        let fits = |j: u32| -> Result<bool> { Ok(self.s3_at(j)?.alpha_upper * epsilon <= 1.0) };
        match largest_true(1, S3_MAX_CUTOFF, fits)? {
            None => Ok(self.empty(epsilon, "S3 at J = 1 already has alpha above 1/eps".into())),
            Some(cutoff) => {
                let mut c = self.s3_at(cutoff)?;
                c.epsilon = epsilon;
                c.capped = cutoff == S3_MAX_CUTOFF;
                Ok(c)
            }
        }
    }

    /// The best of S1, S2 and (at σ = m/n) S3 at this threshold.
    pub fn best(&self, epsilon: f64) -> Result<Mu0Certificate> {
        let mut all = vec![self.build_s1(epsilon)?, self.build_s2(epsilon)?];
        if self.model.params.regime_sign() == std::cmp::Ordering::Equal {
            all.push(self.build_s3(epsilon)?);
        }
        Ok(all.into_iter().max_by_key(|c| c.dim).expect("nonempty"))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon = {epsilon} must be positive")));
    }
    Ok(())
}

/// Largest `x` in `[lo, hi]` with `pred(x)`, for a predicate that is true
/// on a prefix. Doubles from `lo`, then bisects.
fn largest_true(lo: u32, hi: u32, pred: impl Fn(u32) -> Result<bool>) -> Result<Option<u32>> {
    if !pred(lo)? {
        return Ok(None);
    }
    let mut good = lo;
    let mut step = 1u32;
    let bad = loop {
        let next = good.saturating_add(step).min(hi);
        if next == good {
            return Ok(Some(good));
        }
        if pred(next)? {
            good = next;
            step = step.saturating_mul(2);
        } else {
            break next;
        }
    };
    let mut bad = bad;
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        if pred(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(Some(good))
}

/// Which entropy construction produced a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EntropyConstruction {
    /// `span^l_j` alone.
    SingleLevel { l: u32, j: u32 },
    /// `⊕_{j<=J} span^{j+g}_j`, one fixed gap per shell.
    MultiShell { cutoff: u32, gap: u32 },
    /// `⊕_{j<=J} span^{l_j}_j` at σ = m/n.
    LimitingCase { cutoff: u32 },
}

/// `e_N(id) >= c · lower_value` with the construction's constant `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCertificate {
    pub n_index: u64,
    pub lower_value: f64,
    pub construction: EntropyConstruction,
}

/// `N = dim span^l_j`, `lower_value = j^{-σ} 2^{-m(l-j)}`.
pub fn entropy_lower_single(l: u32, j: u32, params: &EmbeddingParams) -> Result<EntropyCertificate> {
    params.validate()?;
    if j < 1 || l < j {
        return Err(Error::domain(format!("need l >= j >= 1, got l={l}, j={j}")));
    }
    if l - j > MAX_GAP {
        return Err(Error::domain(format!("gap {} too large", l - j)));
    }
    Ok(EntropyCertificate {
        n_index: lattice_count(l - j, params.n) as u64,
        lower_value: (j as f64).powf(-params.sigma) * 2f64.powi(-((params.m * (l - j)) as i32)),
        construction: EntropyConstruction::SingleLevel { l, j },
    })
}

/// The level coupling `l = j + ⌈σ/(nσ - m) log2 j⌉`; a domain error when it
/// falls below `j` (σ < m/n) or is undefined (σ = m/n).
pub fn coupled_level(j: u32, params: &EmbeddingParams) -> Result<u32> {
    let denom = params.n as f64 * params.sigma - params.m as f64;
    if params.regime_sign() == std::cmp::Ordering::Equal {
        return Err(Error::domain("the level coupling is undefined at sigma = m/n; use j = 1"));
    }
    let shift = (params.sigma / denom * (j as f64).log2()).ceil();
    if shift < 0.0 {
        return Err(Error::domain(format!("coupled level falls below j = {j} for sigma < m/n")));
    }
    Ok(j + shift as u32)
}

/// Multi-shell family member: `N = J · N_{g0}`, `lower_value = J^{-σ}`.
pub fn entropy_lower_multishell(cutoff: u32, params: &EmbeddingParams) -> Result<EntropyCertificate> {
    params.validate()?;
    if cutoff < 1 {
        return Err(Error::domain("cutoff must be at least 1"));
    }
    let gap = gap_offset(params.n);
    Ok(EntropyCertificate {
        n_index: cutoff as u64 * lattice_count(gap, params.n) as u64,
        lower_value: (cutoff as f64).powf(-params.sigma),
        construction: EntropyConstruction::MultiShell { cutoff, gap },
    })
}

/// `N^J = Σ_j dim span^{l_j}_j`, `lower_value = J^{-m/n}`; requires σ = m/n.
pub fn entropy_lower_limiting(cutoff: u32, params: &EmbeddingParams) -> Result<EntropyCertificate> {
    params.validate()?;
    if params.regime_sign() != std::cmp::Ordering::Equal {
        return Err(Error::domain("the limiting-case family needs sigma = m/n"));
    }
    if cutoff < 2 {
        return Err(Error::domain("limiting-case family needs J >= 2"));
    }
    let levels = s3_levels(cutoff, params.n)?;
    let n_index = levels.iter().zip(1..).map(|(&l, j)| lattice_count(l - j, params.n) as u64).sum();
    Ok(EntropyCertificate {
        n_index,
        lower_value: (cutoff as f64).powf(-params.critical_sigma()),
        construction: EntropyConstruction::LimitingCase { cutoff },
    })
}

/// The family whose lower bounds track `N^{-min(σ, m/n)}` (with the log
/// factor at σ = m/n), over the given parameter values.
///
/// σ > m/n: `j = 1`, level `l` = each value. σ < m/n: multi-shell with
/// `J` = each value. σ = m/n: limiting case with `J` = each value.
pub fn entropy_family(params: &EmbeddingParams, values: &[u32]) -> Result<Vec<EntropyCertificate>> {
    values
        .iter()
        .map(|&v| match params.regime_sign() {
            std::cmp::Ordering::Greater => entropy_lower_single(v, 1, params),
            std::cmp::Ordering::Less => entropy_lower_multishell(v, params),
            std::cmp::Ordering::Equal => entropy_lower_limiting(v, params),
        })
        .collect()
}

/// Monte Carlo estimate with a three-standard-error half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn lo(&self) -> f64 {
        self.value - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.value + self.half_width
    }
}

/// One random covering of `r·U` by `2^N` balls of radius `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverTrial {
    pub rho: f64,
    /// `vol(r U)`.
    pub body: Estimate,
    /// `2^N ρ^N vol(U)`.
    pub cover: Estimate,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub dim: u32,
    pub p: f64,
    pub r: f64,
    pub samples: usize,
    pub unit_ball: Estimate,
    pub trials: Vec<CoverTrial>,
    /// Set when the sample count is too small for a 1% volume estimate.
    pub low_samples: bool,
}

impl VolumeReport {
    pub fn all_hold(&self) -> bool {
        self.trials.iter().all(|t| t.holds)
    }
}

/// Sample count below which volume estimates are flagged.
pub const MIN_VOLUME_SAMPLES: usize = 100_000;

fn p_norm(x: &[f64], p: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Checks the volume comparison behind the entropy lower bounds: if `2^N`
/// balls of radius `ρ` in the `N`-dimensional `p`-norm cover `r·U`, then
/// `r^N vol(U) <= 2^N ρ^N vol(U)`.
///
/// Each trial draws `2^N` random centres in `r·U`, takes `ρ` as the
/// covering radius over a dense sample of `r·U`, and compares both sides by
/// Monte Carlo.
pub fn volume_check_small_n(dim: u32, p: f64, r: f64, samples: usize, trials: usize, seed: u64) -> Result<VolumeReport> {
    if !(1..=4).contains(&dim) {
        return Err(Error::domain(format!("volume check needs 1 <= N <= 4, got {dim}")));
    }
    if !(p >= 1.0 && p.is_finite() && r > 0.0 && r.is_finite()) {
        return Err(Error::domain("need p >= 1 and r > 0"));
    }
    if samples == 0 {
        return Err(Error::domain("need at least one sample"));
    }
    let d = dim as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube_point = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let box_volume = 2f64.powi(dim as i32);
    let hits = (0..samples).filter(|_| p_norm(&cube_point(&mut rng), p) <= 1.0).count();
    let q = hits as f64 / samples as f64;
    let unit_ball = Estimate {
        value: q * box_volume,
        half_width: 3.0 * (q * (1.0 - q) / samples as f64).sqrt() * box_volume,
    };
    // Points of r·U used to measure covering radii.
    let body_points: Vec<Vec<f64>> = std::iter::repeat_with(|| cube_point(&mut rng))
        .filter(|x| p_norm(x, p) <= 1.0)
        .take(samples.min(20_000))
        .map(|x| x.iter().map(|v| v * r).collect())
        .collect();
    let scale = r.powi(dim as i32);
    let body = Estimate { value: unit_ball.value * scale, half_width: unit_ball.half_width * scale };
    let centres_per_trial = 1usize << dim;
    let trials = (0..trials)
        .map(|_| {
            let centres: Vec<&Vec<f64>> =
                (0..centres_per_trial).map(|_| &body_points[rng.gen_range(0..body_points.len())]).collect();
            let rho = body_points
                .iter()
                .map(|x| {
                    centres
                        .iter()
                        .map(|c| p_norm(&x.iter().zip(c.iter()).map(|(a, b)| a - b).collect::<Vec<_>>(), p))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            let factor = (2.0 * rho).powi(dim as i32);
            let cover = Estimate { value: unit_ball.value * factor, half_width: unit_ball.half_width * factor };
            CoverTrial { rho, body, cover, holds: body.lo() <= cover.hi() }
        })
        .collect();
    Ok(VolumeReport {
        dim,
        p,
        r,
        samples,
        unit_ball,
        trials,
        low_samples: samples < MIN_VOLUME_SAMPLES,
    })
}

#[cfg(test)]
mod tests;
