//! Weighted geometry of the unit ball: the degenerate weight
//! `b(r) = r^{mp} (1 + |ln r|)^{σp}`, its enclosures over shells and cubes,
//! the dyadic annulus decomposition and lattice enumeration for bump spans.
//!
//! Radii that can underflow (deep shells, fine lattices) are carried as the
//! depth `s = -ln r`, so `r = 1` is depth 0 and the origin is depth `+inf`.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};

/// The quadruple `(n, m, p, σ)` of the embedding `E^m_{p,σ}(B) -> L_p(B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub n: u32,
    pub m: u32,
    pub p: f64,
    pub sigma: f64,
}

impl EmbeddingParams {
    pub fn new(n: u32, m: u32, p: f64, sigma: f64) -> Result<Self> {
        let params = EmbeddingParams { n, m, p, sigma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::domain("n must be at least 1"));
        }
        if self.m < 1 {
            return Err(Error::domain("m must be at least 1"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::domain(format!("p = {} must satisfy 1 <= p < inf", self.p)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma = {} must be finite and >= 0", self.sigma)));
        }
        Ok(())
    }

    /// The embedding is compact exactly when σ > 0.
    pub fn is_compact(&self) -> bool {
        self.sigma > 0.0
    }

    /// The critical log exponent `m / n`.
    pub fn critical_sigma(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Sign of `σ n - m`, compared exactly.
    pub fn regime_sign(&self) -> std::cmp::Ordering {
        (self.sigma * self.n as f64)
            .partial_cmp(&(self.m as f64))
            .expect("validated parameters are finite")
    }

    pub fn with_p(self, p: f64) -> Self {
        EmbeddingParams { p, ..self }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        EmbeddingParams { sigma, ..self }
    }
}

/// `ln b` at depth `s = -ln r`, valid for every `s >= 0` without underflow.
pub fn log_weight_at_depth(s: f64, params: &EmbeddingParams) -> f64 {
    let (m, p) = (params.m as f64, params.p);
    -m * p * s + params.sigma * p * s.ln_1p()
}

/// The weight `b(r) = r^{mp} (1 + |ln r|)^{σp}` for `0 < r <= 1`.
pub fn weight_eval(r: f64, params: &EmbeddingParams) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::domain(format!("radius {r} outside (0, 1]")));
    }
    if r == 1.0 {
        return Ok(1.0);
    }
    let s = -r.ln();
    let (m, p) = (params.m as f64, params.p);
    Ok(r.powf(m * p) * (1.0 + s).powf(params.sigma * p))
}

/// Range of radii `[r_lo, r_hi]` stored as depths `s_lo = -ln r_hi <= s_hi = -ln r_lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialRange {
    pub depth_lo: f64,
    pub depth_hi: f64,
}

impl RadialRange {
    pub fn from_depths(depth_lo: f64, depth_hi: f64) -> Result<Self> {
        if !(depth_lo >= 0.0 && depth_lo <= depth_hi) || depth_lo.is_nan() || depth_hi.is_nan() {
            return Err(Error::domain(format!(
                "invalid depth range [{depth_lo}, {depth_hi}]"
            )));
        }
        Ok(RadialRange { depth_lo, depth_hi })
    }

    /// Radii `lo <= |x| <= hi` with `0 <= lo <= hi <= 1`.
    pub fn from_radii(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::domain(format!("invalid radii [{lo}, {hi}]")));
        }
        let depth_hi = if lo == 0.0 { f64::INFINITY } else { -lo.ln() };
        Self::from_depths(-hi.ln(), depth_hi)
    }

    /// Closure of the dyadic shell `B^j = {2^{-j} <= |x| < 2^{-j+1}}`.
    pub fn shell(j: u32) -> Result<Self> {
        if j == 0 {
            return Err(Error::domain("shell index starts at 1"));
        }
        Self::from_depths((j - 1) as f64 * LN_2, j as f64 * LN_2)
    }

    /// Radial range of the closed cube `2^{-l}(k + [-1,1]^n)`.
    pub fn cube(l: u32, k: &[i64]) -> Result<Self> {
        let (near, far) = cube_radii_scaled(k);
        if near == 0.0 {
            return Self::from_depths(l as f64 * LN_2 - far.ln(), f64::INFINITY);
        }
        let lo = l as f64 * LN_2 - far.ln();
        if lo < 0.0 {
            return Err(Error::domain("cube leaves the unit ball"));
        }
        Self::from_depths(lo, l as f64 * LN_2 - near.ln())
    }

    pub fn touches_origin(&self) -> bool {
        self.depth_hi.is_infinite()
    }
}

/// Nearest and farthest Euclidean distance from 0 of the cube `k + [-1,1]^n`.
fn cube_radii_scaled(k: &[i64]) -> (f64, f64) {
    let mut near2 = 0.0;
    let mut far2 = 0.0;
    for &ki in k {
        let a = ki.unsigned_abs() as f64;
        let d = (a - 1.0).max(0.0);
        near2 += d * d;
        far2 += (a + 1.0) * (a + 1.0);
    }
    (near2.sqrt(), far2.sqrt())
}

/// Rigorous bounds `[w_min, w_max]` of the weight over a radial range,
/// carried as logarithms so deep shells do not underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEnclosure {
    pub log_min: f64,
    pub log_max: f64,
}

impl WeightEnclosure {
    pub fn min(&self) -> f64 {
        self.log_min.exp()
    }

    pub fn max(&self) -> f64 {
        self.log_max.exp()
    }

    pub fn ratio(&self) -> f64 {
        (self.log_max - self.log_min).exp()
    }

    pub fn contains(&self, w: f64) -> bool {
        let lw = w.ln();
        self.log_min <= lw && lw <= self.log_max
    }
}

/// Relative outward widening applied to both log bounds.
const ENCLOSURE_SLACK: f64 = 8.0 * f64::EPSILON;

/// Bounds of `b` over a radial range.
///
/// In the depth variable `ln b(s) = -mp s + σp ln(1+s)` is concave, so the
/// minimum sits at an endpoint and the maximum at `s* = σ/m - 1` clamped to
/// the range.
pub fn weight_enclosure(range: &RadialRange, params: &EmbeddingParams) -> Result<WeightEnclosure> {
    if range.touches_origin() {
        return Err(Error::UnboundedOscillation(
            "region touches the origin; the weight ratio is unbounded there".into(),
        ));
    }
    let f = |s: f64| log_weight_at_depth(s, params);
    let (a, b) = (range.depth_lo, range.depth_hi);
    let s_star = (params.sigma / params.m as f64 - 1.0).clamp(a, b);
    let lo = f(a).min(f(b));
    let hi = f(a).max(f(b)).max(f(s_star));
    Ok(WeightEnclosure {
        log_min: lo - ENCLOSURE_SLACK * (lo.abs() + 1.0),
        log_max: hi + ENCLOSURE_SLACK * (hi.abs() + 1.0),
    })
}

/// One dyadic shell `2^{-j} <= |x| < 2^{-j+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub j: u32,
    pub inner: f64,
    pub outer: f64,
}

/// `B = B_J ∪ B^1 ∪ ... ∪ B^J` with inner ball radius `2^{-J}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusDecomposition {
    pub n: u32,
    pub levels: u32,
    pub shells: Vec<Shell>,
    pub inner_radius: f64,
}

impl AnnulusDecomposition {
    /// Lebesgue measure of each piece relative to the unit ball, shells
    /// first and the inner ball last.
    pub fn relative_measures(&self) -> Vec<f64> {
        let n = self.n as i32;
        let mut out: Vec<f64> = self
            .shells
            .iter()
            .map(|s| s.outer.powi(n) - s.inner.powi(n))
            .collect();
        out.push(self.inner_radius.powi(n));
        out
    }
}

pub fn make_decomposition(levels: u32, n: u32) -> Result<AnnulusDecomposition> {
    if levels == 0 {
        return Err(Error::domain("J must be at least 1"));
    }
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    let shells = (1..=levels)
        .map(|j| Shell { j, inner: pow2(-(j as i32)), outer: pow2(1 - j as i32) })
        .collect();
    Ok(AnnulusDecomposition { n, levels, shells, inner_radius: pow2(-(levels as i32)) })
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// A dilation/translation `f(2^l x - k)` whose support cube sits in shell `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticePoint {
    pub l: u32,
    pub j: u32,
    pub k: Vec<i64>,
}

/// Largest gap `l - j` accepted by the enumerators.
pub const MAX_GAP: u32 = 40;

/// Lattice points of span^l_j: even `k` with the closed cube
/// `2^{-l}(k + [-1,1]^n)` strictly inside the open shell.
///
/// In units of `2^{-l}` the shell is `2^g < |y| < 2^{g+1}` with `g = l - j`,
/// so the admitted `k` depend on the gap only. All tests are exact in
/// integer arithmetic.
pub fn lattice_points(l: u32, j: u32, n: u32) -> Result<Vec<LatticePoint>> {
    if j < 1 || l < j {
        return Err(Error::domain(format!("need l >= j >= 1, got l={l}, j={j}")));
    }
    if n < 1 {
        return Err(Error::domain("n must be at least 1"));
    }
    let g = l - j;
    if g > MAX_GAP {
        return Err(Error::domain(format!("gap {g} too large to enumerate")));
    }
    Ok(lattice_offsets(g, n)
        .into_iter()
        .map(|k| LatticePoint { l, j, k })
        .collect())
}

/// Admitted offsets `k` for gap `g` (independent of `j`).
pub fn lattice_offsets(g: u32, n: u32) -> Vec<Vec<i64>> {
    let inner2 = 1i128 << (2 * g);
    let outer2 = 1i128 << (2 * (g + 1));
    let bound = (1i64 << (g + 1)) + 1;
    // Even coordinates with |k_i| + 1 < 2^{g+1}.
    let coords: Vec<i64> = (-bound..=bound).filter(|k| k % 2 == 0).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n as usize];
    loop {
        let k: Vec<i64> = idx.iter().map(|&i| coords[i]).collect();
        if cube_strictly_inside(&k, inner2, outer2) {
            out.push(k);
        }
        let mut d = 0;
        loop {
            if d == idx.len() {
                return out;
            }
            idx[d] += 1;
            if idx[d] < coords.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn cube_strictly_inside(k: &[i64], inner2: i128, outer2: i128) -> bool {
    let mut near2: i128 = 0;
    let mut far2: i128 = 0;
    for &ki in k {
        let a = ki.unsigned_abs() as i128;
        let d = (a - 1).max(0);
        near2 += d * d;
        far2 += (a + 1) * (a + 1);
    }
    near2 > inner2 && far2 < outer2
}

/// Number of admitted lattice points at gap `g`; closed form for `n = 1`.
///
/// For `n = 1` the count is `2^g - 2` when `g >= 2` and 0 otherwise, so
/// `N_g / 2^g` lies in `[3/4, 1)` once `g >= 3`.
pub fn lattice_count(g: u32, n: u32) -> usize {
    if n == 1 {
        return if g >= 2 { (1usize << g) - 2 } else { 0 };
    }
    lattice_offsets(g, n).len()
}

/// Smallest gap with a nonempty lattice in dimension `n`.
pub fn first_nonempty_gap(n: u32) -> u32 {
    (0..=MAX_GAP).find(|&g| lattice_count(g, n) > 0).expect("some gap admits a cube")
}
