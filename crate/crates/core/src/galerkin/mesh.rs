use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::geometry::EmbeddingParams;

/// A subset of the 1D model `B = (-1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Disjoint open intervals in the plain coordinate `x`.
    Intervals(Vec<(f64, f64)>),
    /// Union of radial bands `{x : depth_lo < -ln|x| < depth_hi}`, taken on
    /// both sides of the origin. `depth_hi = inf` reaches the origin.
    Radial(Vec<Band>),
}

/// Radial band in depth coordinates `s = -ln|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub depth_lo: f64,
    pub depth_hi: f64,
}

impl Region {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Region::Intervals(vec![(lo, hi)])
    }

    /// The whole ball `|x| < 1`.
    pub fn ball() -> Self {
        Region::Radial(vec![Band { depth_lo: 0.0, depth_hi: f64::INFINITY }])
    }

    /// Shell `B^j = {2^{-j} <= |x| < 2^{-j+1}}`.
    pub fn shell(j: u32) -> Self {
        Region::Radial(vec![Band { depth_lo: dyadic_depth(j - 1), depth_hi: dyadic_depth(j) }])
    }

    /// Shells `B^{j_lo} ∪ ... ∪ B^{j_hi}` as one band.
    pub fn shells(j_lo: u32, j_hi: u32) -> Self {
        Region::Radial(vec![Band { depth_lo: dyadic_depth(j_lo - 1), depth_hi: dyadic_depth(j_hi) }])
    }

    /// Inner ball `B_J = {|x| < 2^{-J}}`.
    pub fn inner_ball(levels: u32) -> Self {
        Region::Radial(vec![Band { depth_lo: dyadic_depth(levels), depth_hi: f64::INFINITY }])
    }

    /// Complement of the inner ball, `B \ B_J`.
    pub fn outside_inner_ball(levels: u32) -> Self {
        Region::shells(1, levels)
    }

    /// Short descriptor: `ball`, `shell(3)`, `shells(2..5)`, `inner_ball(4)`,
    /// or raw bounds when the band is not dyadic.
    pub fn label(&self) -> String {
        let level = |d: f64| {
            let j = (d / LN_2).round();
            ((d / LN_2 - j).abs() < 1e-9).then_some(j as u32)
        };
        let band = |b: &Band| match (level(b.depth_lo), b.depth_hi.is_infinite(), level(b.depth_hi)) {
            (Some(0), true, _) => "ball".to_string(),
            (Some(j), true, _) => format!("inner_ball({j})"),
            (Some(lo), false, Some(hi)) if hi == lo + 1 => format!("shell({hi})"),
            (Some(lo), false, Some(hi)) => format!("shells({}..{hi})", lo + 1),
            _ => format!("depth[{}, {}]", b.depth_lo, b.depth_hi),
        };
        match self {
            Region::Intervals(v) => {
                v.iter().map(|(a, b)| format!("({a}, {b})")).collect::<Vec<_>>().join("+")
            }
            Region::Radial(v) => v.iter().map(band).collect::<Vec<_>>().join("+"),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Region::Intervals(v) => v.iter().all(|(a, b)| !(a < b)),
            Region::Radial(v) => v.iter().all(|b| !(b.depth_lo < b.depth_hi)),
        }
    }
}

/// Depth of the dyadic radius `2^{-j}`.
pub fn dyadic_depth(j: u32) -> f64 {
    j as f64 * LN_2
}

/// Coordinate in which a piece's knots are listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chart {
    /// Knots are points `x` of the interval.
    Linear,
    /// Knots are depths `s = -ln|x|`, ascending (toward the origin); the
    /// unknown is `h(s) = |x|^{1/2} f(x)`.
    Log,
}

/// Geometric nature of a piece end; the boundary condition is chosen at assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndKind {
    /// On the unit sphere `|x| = 1`.
    Sphere,
    /// At the origin (linear chart) or at the truncation depth of a band
    /// that reaches the origin (log chart).
    Origin,
    /// An interior cut between subregions.
    Cut,
}

/// One connected mesh piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub chart: Chart,
    pub knots: Vec<f64>,
    pub ends: [EndKind; 2],
    /// Radial pieces stand for both sides of the origin.
    pub mirrored: bool,
}

impl Piece {
    pub fn elements(&self) -> usize {
        self.knots.len() - 1
    }

    fn range(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Grading {
    Uniform,
    /// Breakpoints at every dyadic radius `2^{-j}`, `j <= depth`; bands that
    /// reach the origin are truncated at radius `2^{-depth}`.
    Geometric { depth: u32 },
    /// Dyadic breakpoints with element size following the local wavelength
    /// of eigenfunctions up to `lambda`; truncation below the turning point.
    Adapted { lambda: f64, sigma: f64, m: u32 },
}

impl Grading {
    pub fn adapted(params: &EmbeddingParams, lambda: f64) -> Self {
        Grading::Adapted { lambda, sigma: params.sigma, m: params.m }
    }
}

/// `Π_{i<m} (i + 1/2)^2`: lower symbol of the log-chart operator, which acts
/// as the effective potential at infinite depth.
pub fn origin_potential(m: u32) -> f64 {
    (0..m).map(|i| (i as f64 + 0.5).powi(2)).product()
}

/// Depth where the weighted potential `V_m (1+s)^{2σ}` reaches `lambda`.
pub fn turning_depth(lambda: f64, sigma: f64, m: u32) -> f64 {
    ((lambda / origin_potential(m)).max(1.0)).powf(0.5 / sigma) - 1.0
}

/// Extra depth kept beyond the turning point; eigenfunctions decay at least
/// like `exp(-(s - s_c) / 2)` there.
const TRUNCATION_MARGIN: f64 = 40.0;
/// Smallest element count per octave in adapted meshes.
const MIN_PER_OCTAVE: usize = 4;

/// A conforming mesh of the 1D model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub pieces: Vec<Piece>,
    pub grading: Grading,
    /// Form order the element space is conforming for: Hermite elements of
    /// degree `2 order - 1`, class `C^{order - 1}`.
    pub order: u32,
}

impl Mesh {
    pub fn with_order(mut self, m: u32) -> Result<Self> {
        if !(1..=2).contains(&m) {
            return Err(Error::domain(format!("element order m = {m} not supported (1 or 2)")));
        }
        self.order = m;
        Ok(self)
    }

    pub fn elements(&self) -> usize {
        self.pieces.iter().map(|p| p.elements() * if p.mirrored { 2 } else { 1 }).sum()
    }

    /// Element degree `2m - 1`.
    pub fn degree(&self) -> u32 {
        2 * self.order - 1
    }

    /// Sorted physical coordinates of all knots (both sides for radial pieces).
    pub fn physical_nodes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.pieces {
            match p.chart {
                Chart::Linear => out.extend_from_slice(&p.knots),
                Chart::Log => {
                    for &s in &p.knots {
                        let r = (-s).exp();
                        out.push(r);
                        if p.mirrored {
                            out.push(-r);
                        }
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// The part of the mesh inside `region`, cut at element boundaries;
    /// new ends are interior cuts.
    pub fn submesh(&self, region: &Region) -> Result<Mesh> {
        let mut pieces = Vec::new();
        for piece in &self.pieces {
            for (lo, hi) in chart_intervals(region, piece.chart)? {
                if let Some(p) = cut_piece(piece, lo, hi)? {
                    pieces.push(p);
                }
            }
        }
        if pieces.is_empty() {
            return Err(Error::domain("subregion contains no element"));
        }
        Ok(Mesh { pieces, grading: self.grading, order: self.order })
    }
}

pub(crate) fn chart_intervals(region: &Region, chart: Chart) -> Result<Vec<(f64, f64)>> {
    match (region, chart) {
        (Region::Intervals(v), Chart::Linear) => Ok(v.clone()),
        (Region::Radial(v), Chart::Log) => Ok(v.iter().map(|b| (b.depth_lo, b.depth_hi)).collect()),
        _ => Err(Error::domain("subregion and mesh use different coordinates")),
    }
}

/// Relative tolerance for matching region boundaries to knots.
const KNOT_TOL: f64 = 1e-10;

pub(crate) fn knot_index(knots: &[f64], v: f64) -> Option<usize> {
    let tol = KNOT_TOL * v.abs().max(1.0);
    let i = knots.partition_point(|&k| k < v - tol);
    (i < knots.len() && (knots[i] - v).abs() <= tol).then_some(i)
}

/// Check that every finite boundary of `[lo, hi]` strictly inside the piece is a knot.
pub(crate) fn aligned(piece: &Piece, lo: f64, hi: f64) -> Result<()> {
    let (a, b) = piece.range();
    for v in [lo, hi] {
        if v.is_finite() && v > a && v < b && knot_index(&piece.knots, v).is_none() {
            return Err(Error::domain(format!("subregion boundary {v} is not an element boundary")));
        }
    }
    Ok(())
}

fn cut_piece(piece: &Piece, lo: f64, hi: f64) -> Result<Option<Piece>> {
    aligned(piece, lo, hi)?;
    let (a, b) = piece.range();
    let tol = KNOT_TOL * a.abs().max(b.abs()).max(1.0);
    if hi <= a + tol || lo >= b - tol {
        return Ok(None);
    }
    let i0 = if lo <= a + tol { 0 } else { knot_index(&piece.knots, lo).unwrap() };
    let i1 = if hi >= b - tol { piece.knots.len() - 1 } else { knot_index(&piece.knots, hi).unwrap() };
    if i1 <= i0 {
        return Ok(None);
    }
    let ends = [
        if i0 == 0 { piece.ends[0] } else { EndKind::Cut },
        if i1 == piece.knots.len() - 1 { piece.ends[1] } else { EndKind::Cut },
    ];
    Ok(Some(Piece {
        chart: piece.chart,
        knots: piece.knots[i0..=i1].to_vec(),
        ends,
        mirrored: piece.mirrored,
    }))
}

/// Mesh a region.
///
/// `resolution` is the number of elements per interval (uniform), per
/// dyadic cell (geometric), or points per local wavelength (adapted).
pub fn build_mesh(region: &Region, resolution: usize, grading: Grading) -> Result<Mesh> {
    if resolution < 2 {
        return Err(Error::domain("resolution must be at least 2"));
    }
    if region.is_empty() {
        return Err(Error::domain("region is empty"));
    }
    let pieces = match region {
        Region::Intervals(v) => v
            .iter()
            .map(|&(lo, hi)| linear_piece(lo, hi, resolution, grading))
            .collect::<Result<Vec<_>>>()?,
        Region::Radial(v) => v
            .iter()
            .map(|band| log_piece(band, resolution, grading))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(Mesh { pieces, grading, order: 1 })
}

fn subdivide(breaks: &[f64], per_cell: impl Fn(f64, f64) -> usize) -> Vec<f64> {
    let mut knots = vec![breaks[0]];
    for w in breaks.windows(2) {
        let k = per_cell(w[0], w[1]).max(1);
        for i in 1..=k {
            knots.push(if i == k { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / k as f64 });
        }
    }
    knots
}

fn linear_end(x: f64) -> EndKind {
    if x.abs() == 1.0 {
        EndKind::Sphere
    } else if x == 0.0 {
        EndKind::Origin
    } else {
        EndKind::Cut
    }
}

fn linear_piece(lo: f64, hi: f64, resolution: usize, grading: Grading) -> Result<Piece> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("invalid interval ({lo}, {hi})")));
    }
    let mut breaks = vec![lo, hi];
    match grading {
        Grading::Uniform => {}
        Grading::Geometric { depth } => {
            for j in 0..=depth {
                let r = 2f64.powi(-(j as i32));
                for x in [r, -r] {
                    if x > lo && x < hi {
                        breaks.push(x);
                    }
                }
            }
            if lo < 0.0 && hi > 0.0 {
                breaks.push(0.0);
            }
        }
        Grading::Adapted { .. } => {
            return Err(Error::domain("adapted grading needs a radial region"));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    Ok(Piece {
        chart: Chart::Linear,
        knots: subdivide(&breaks, |_, _| resolution),
        ends: [linear_end(lo), linear_end(hi)],
        mirrored: false,
    })
}

fn log_piece(band: &Band, resolution: usize, grading: Grading) -> Result<Piece> {
    let lo = band.depth_lo;
    if !(lo >= 0.0 && lo < band.depth_hi) {
        return Err(Error::domain(format!("invalid band [{}, {}]", lo, band.depth_hi)));
    }
    let reaches_origin = band.depth_hi.is_infinite();
    let hi = if reaches_origin {
        match grading {
            Grading::Uniform => {
                return Err(Error::domain("uniform grading cannot truncate a band reaching the origin"))
            }
            Grading::Geometric { depth } => dyadic_depth(depth),
            Grading::Adapted { lambda, sigma, m } => {
                if !(sigma > 0.0) {
                    return Err(Error::NonCompact("adapted truncation needs sigma > 0".into()));
                }
                let s = turning_depth(lambda, sigma, m).max(lo) + TRUNCATION_MARGIN;
                dyadic_depth((s / LN_2).ceil() as u32)
            }
        }
    } else {
        band.depth_hi
    };
    if !(hi > lo) {
        return Err(Error::domain(format!("truncation depth {hi} does not exceed band start {lo}")));
    }
    let mut breaks = vec![lo];
    if !matches!(grading, Grading::Uniform) {
        let j0 = (lo / LN_2).floor() as u32 + 1;
        let mut j = j0;
        while dyadic_depth(j) < hi - 1e-12 {
            if dyadic_depth(j) > lo + 1e-12 {
                breaks.push(dyadic_depth(j));
            }
            j += 1;
        }
    }
    breaks.push(hi);
    let knots = match grading {
        Grading::Uniform | Grading::Geometric { .. } => subdivide(&breaks, |_, _| resolution),
        Grading::Adapted { lambda, sigma, m } => subdivide(&breaks, |a, b| {
            let s = 0.5 * (a + b);
            let omega = (lambda / (1.0 + s).powf(2.0 * sigma)).powf(0.5 / m as f64) + 1.0;
            let h = (2.0 * std::f64::consts::PI / (resolution as f64 * omega)).min(LN_2 / MIN_PER_OCTAVE as f64);
            ((b - a) / h).ceil() as usize
        }),
    };
    Ok(Piece {
        chart: Chart::Log,
        knots,
        ends: [
            if lo == 0.0 { EndKind::Sphere } else { EndKind::Cut },
            if reaches_origin { EndKind::Origin } else { EndKind::Cut },
        ],
        mirrored: true,
    })
}
