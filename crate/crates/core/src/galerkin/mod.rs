//! Conforming Galerkin discretization of the p = 2 form
//! `a(f, f) = ∫ |x|^{2m} (1 + |ln|x||)^{2σ} |f^{(m)}|^2 dx` and of the `L_2`
//! inner product on the 1D model of the unit ball.
//!
//! Radial regions are discretized in the log chart `x = ±e^{-s}`,
//! `f = |x|^{-1/2} h(s)`, where
//! `∫ f^2 dx = ∫ h^2 ds` and
//! `∫ |x|^{2m}(1+|ln|x||)^{2σ} |f^{(m)}|^2 dx = ∫ (1+s)^{2σ} |P_m(-D - 1/2) h|^2 ds`
//! with `P_m(θ) = θ(θ-1)...(θ-m+1)`, so `P_1 -> h' + h/2` and
//! `P_2 -> h'' + 2h' + 3h/4`. Thousands of dyadic shells stay representable.
//! Below the truncation depth the function is continued to the origin by a
//! polynomial of degree `m - 1` in `x`, which keeps the space conforming.
//! The two sides of the origin decouple (the origin has zero capacity for
//! this weight), so radial pieces are stored once with multiplicity 2.
//!
//! Plain intervals use the linear chart directly.

mod mesh;
mod mm;

pub use mesh::{
    build_mesh, dyadic_depth, origin_potential, turning_depth, Band, Chart, EndKind, Grading, Mesh,
    Piece, Region,
};
pub use mm::{export_pencil, read_matrix_market, write_matrix_market};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::band::{BandLdlt, SymBand};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingParams;
use crate::quad::{integrate, quad_weighted, GaussRule, QuadConfig};

/// Weight of the stiffness form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormWeight {
    /// `|x|^{2m} (1 + |ln|x||)^{2σ}`.
    Radial,
    /// Weight 1: the classical Dirichlet problem on a plain interval.
    Unit,
}

/// Weight of the mass form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassWeight {
    Lebesgue,
    /// `(1 + |ln|x||)^{2σ}`, the right-hand side of the Hardy inequality.
    Log,
}

/// Condition at interior cuts; the unit sphere is always a zero-trace end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutCondition {
    ZeroTrace,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub form: FormWeight,
    pub mass: MassWeight,
    pub cuts: CutCondition,
    pub quad: QuadConfig,
    pub gauss_points: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            form: FormWeight::Radial,
            mass: MassWeight::Lebesgue,
            cuts: CutCondition::ZeroTrace,
            quad: QuadConfig::default(),
            gauss_points: 8,
        }
    }
}

impl AssemblyOptions {
    pub fn unit_weight() -> Self {
        AssemblyOptions { form: FormWeight::Unit, ..Self::default() }
    }
}

/// A degree of freedom: value (`derivative = 0`) or slope at a knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dof {
    pub piece: usize,
    pub node: usize,
    pub coord: f64,
    pub derivative: u8,
}

/// One irreducible diagonal block of a pencil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub a: SymBand,
    pub m: SymBand,
    /// Number of identical copies (2 for the mirrored halves of a radial piece).
    pub multiplicity: usize,
    pub dofs: Vec<Dof>,
}

impl Block {
    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

/// Stiffness/mass pair `(A, M)`, block diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscretePencil {
    pub params: Option<EmbeddingParams>,
    pub region: Option<Region>,
    pub blocks: Vec<Block>,
    #[serde(skip)]
    pub mesh: Option<Arc<Mesh>>,
    pub options: AssemblyOptions,
}

impl DiscretePencil {
    /// A pencil from explicit matrices; `M` must be positive definite.
    pub fn from_matrices(a: SymBand, m: SymBand) -> Result<Self> {
        if a.dim() != m.dim() {
            return Err(Error::domain("A and M differ in size"));
        }
        if !(a.is_finite() && m.is_finite()) {
            return Err(Error::domain("non-finite matrix entry"));
        }
        BandLdlt::factor(&m, &m, 0.0)
            .ok()
            .filter(|f| f.pivots().iter().all(|&d| d > 0.0))
            .ok_or_else(|| Error::domain("M is not positive definite"))?;
        let n = a.dim();
        let dofs = (0..n).map(|i| Dof { piece: 0, node: i, coord: i as f64, derivative: 0 }).collect();
        Ok(DiscretePencil {
            params: None,
            region: None,
            blocks: vec![Block { a, m, multiplicity: 1, dofs }],
            mesh: None,
            options: AssemblyOptions::default(),
        })
    }

    /// Total dimension `D`, counting multiplicities.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim() * b.multiplicity).sum()
    }

    /// Dense `A` and `M` of the full block-diagonal pencil.
    pub fn to_dense(&self) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
        let d = self.dim();
        let mut a = nalgebra::DMatrix::zeros(d, d);
        let mut m = nalgebra::DMatrix::zeros(d, d);
        let mut off = 0;
        for b in &self.blocks {
            let (ba, bm) = (b.a.to_dense(), b.m.to_dense());
            for _ in 0..b.multiplicity {
                a.view_mut((off, off), (b.dim(), b.dim())).copy_from(&ba);
                m.view_mut((off, off), (b.dim(), b.dim())).copy_from(&bm);
                off += b.dim();
            }
        }
        (a, m)
    }
}

/// Hermite shape functions of degree `2m - 1` on an element of length `h`:
/// values of the `k`-th derivative (in the chart coordinate) at local `u`.
fn shape(m: u32, h: f64, u: f64, k: usize) -> [f64; 4] {
    match (m, k) {
        (1, 0) => [1.0 - u, u, 0.0, 0.0],
        (1, 1) => [-1.0 / h, 1.0 / h, 0.0, 0.0],
        (1, _) => [0.0; 4],
        (2, 0) => {
            let (u2, u3) = (u * u, u * u * u);
            [1.0 - 3.0 * u2 + 2.0 * u3, h * (u - 2.0 * u2 + u3), 3.0 * u2 - 2.0 * u3, h * (u3 - u2)]
        }
        (2, 1) => {
            let u2 = u * u;
            [(6.0 * u2 - 6.0 * u) / h, 1.0 - 4.0 * u + 3.0 * u2, (6.0 * u - 6.0 * u2) / h, 3.0 * u2 - 2.0 * u]
        }
        (2, 2) => [(12.0 * u - 6.0) / (h * h), (6.0 * u - 4.0) / h, (6.0 - 12.0 * u) / (h * h), (6.0 * u - 2.0) / h],
        _ => [0.0; 4],
    }
}

/// Values of the form operator applied to the shape functions.
fn form_operator(chart: Chart, m: u32, h: f64, u: f64) -> [f64; 4] {
    let nl = 2 * m as usize;
    let mut out = [0.0; 4];
    match chart {
        Chart::Linear => out = shape(m, h, u, m as usize),
        Chart::Log => {
            let (d0, d1, d2) = (shape(m, h, u, 0), shape(m, h, u, 1), shape(m, h, u, 2));
            for i in 0..nl {
                out[i] = if m == 1 { d1[i] + 0.5 * d0[i] } else { d2[i] + 2.0 * d1[i] + 0.75 * d0[i] };
            }
        }
    }
    out
}

type Local = [[f64; 4]; 4];

struct ElementContext<'a> {
    params: &'a EmbeddingParams,
    opts: &'a AssemblyOptions,
    rule: &'a GaussRule,
    chart: Chart,
    m: u32,
}

impl ElementContext<'_> {
    fn form_weight(&self, t: f64) -> f64 {
        let sigma2 = 2.0 * self.params.sigma;
        match (self.opts.form, self.chart) {
            (FormWeight::Unit, _) => 1.0,
            (FormWeight::Radial, Chart::Log) => (1.0 + t).powf(sigma2),
            (FormWeight::Radial, Chart::Linear) => {
                let r = t.abs();
                if r == 0.0 {
                    0.0
                } else {
                    r.powi(2 * self.m as i32) * (1.0 - r.ln()).powf(sigma2)
                }
            }
        }
    }

    fn mass_weight(&self, t: f64) -> f64 {
        match self.opts.mass {
            MassWeight::Lebesgue => 1.0,
            MassWeight::Log => {
                let depth = match self.chart {
                    Chart::Log => t,
                    Chart::Linear => -t.abs().ln(),
                };
                (1.0 + depth).powf(2.0 * self.params.sigma)
            }
        }
    }

    /// Local stiffness and mass on `[t0, t1]`.
    fn element(&self, t0: f64, t1: f64) -> Result<(Local, Local)> {
        let h = t1 - t0;
        let nl = 2 * self.m as usize;
        let mut ka = [[0.0; 4]; 4];
        let mut km = [[0.0; 4]; 4];
        let singular = self.chart == Chart::Linear
            && (self.opts.form == FormWeight::Radial || self.opts.mass == MassWeight::Log)
            && t0 <= 0.0
            && t1 >= 0.0;
        if !singular {
            for (t, w) in self.rule.on(t0, t1) {
                let u = (t - t0) / h;
                let lf = form_operator(self.chart, self.m, h, u);
                let v = shape(self.m, h, u, 0);
                let (wf, wm) = (w * self.form_weight(t), w * self.mass_weight(t));
                for i in 0..nl {
                    for j in 0..=i {
                        ka[i][j] += wf * lf[i] * lf[j];
                        km[i][j] += wm * v[i] * v[j];
                    }
                }
            }
        } else {
            self.singular_element(t0, t1, &mut ka, &mut km)?;
        }
        for i in 0..nl {
            for j in 0..i {
                ka[j][i] = ka[i][j];
                km[j][i] = km[i][j];
            }
        }
        Ok((ka, km))
    }

    /// Linear-chart element containing the origin: split there and integrate
    /// each side in `r = |x|` with the log substitution.
    fn singular_element(&self, t0: f64, t1: f64, ka: &mut Local, km: &mut Local) -> Result<()> {
        let h = t1 - t0;
        let nl = 2 * self.m as usize;
        let sigma2 = 2.0 * self.params.sigma;
        for (lo, hi, sign) in [(t0, 0.0, -1.0), (0.0, t1, 1.0)] {
            if hi - lo <= 0.0 {
                continue;
            }
            let rmax = (hi - lo).abs();
            let x_of = move |r: f64| sign * r;
            for i in 0..nl {
                for j in 0..=i {
                    let fa = |r: f64| {
                        let u = (x_of(r) - t0) / h;
                        let lf = shape(self.m, h, u, self.m as usize);
                        lf[i] * lf[j]
                    };
                    let fm = |r: f64| {
                        let u = (x_of(r) - t0) / h;
                        let v = shape(self.m, h, u, 0);
                        v[i] * v[j]
                    };
                    ka[i][j] += match self.opts.form {
                        FormWeight::Radial => {
                            quad_weighted(2.0 * self.m as f64, sigma2, fa, 0.0, rmax, &self.opts.quad)?.value
                        }
                        FormWeight::Unit => integrate(fa, 0.0, rmax, &self.opts.quad)?.value,
                    };
                    km[i][j] += match self.opts.mass {
                        MassWeight::Log => quad_weighted(0.0, sigma2, fm, 0.0, rmax, &self.opts.quad)?.value,
                        MassWeight::Lebesgue => integrate(fm, 0.0, rmax, &self.opts.quad)?.value,
                    };
                }
            }
        }
        Ok(())
    }

    /// Mass of the continuation below the truncation depth `s_end`, as a
    /// matrix on the value/slope DOFs of the last node.
    fn origin_extension(&self, s_end: f64) -> Result<[[f64; 2]; 2]> {
        // Continuation h(S + t) = e^{-t/2} (h + q (1 - e^{-t})), q = h' + h/2.
        let e = match self.opts.mass {
            MassWeight::Lebesgue => [[1.0, 0.5], [0.5, 1.0 / 3.0]],
            MassWeight::Log => {
                let sigma2 = 2.0 * self.params.sigma;
                let mut e = [[0.0; 2]; 2];
                let psi = |t: f64, a: usize| if a == 0 { 1.0 } else { -(-t).exp_m1() };
                for a in 0..2 {
                    for b in 0..=a {
                        let f = |t: f64| (1.0 + s_end + t).powf(sigma2) * (-t).exp() * psi(t, a) * psi(t, b);
                        let upper = 60.0 + 4.0 * sigma2 * (2.0 + s_end).ln().max(1.0);
                        let v = integrate(f, 0.0, upper, &self.opts.quad)?.value;
                        e[a][b] = v;
                        e[b][a] = v;
                    }
                }
                e
            }
        };
        if self.m == 1 {
            return Ok([[e[0][0], 0.0], [0.0, 0.0]]);
        }
        // (h, q) = T (h, h') with T = [[1, 0], [1/2, 1]]; return Tᵀ E T.
        let t = [[1.0, 0.0], [0.5, 1.0]];
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        out[i][j] += t[a][i] * e[a][b] * t[b][j];
                    }
                }
            }
        }
        Ok(out)
    }
}

enum EndCondition {
    Dirichlet,
    Natural,
    Extension,
}

fn end_condition(kind: EndKind, chart: Chart, opts: &AssemblyOptions) -> EndCondition {
    match (kind, opts.form) {
        (_, FormWeight::Unit) => match (kind, opts.cuts) {
            (EndKind::Cut, CutCondition::Free) => EndCondition::Natural,
            _ => EndCondition::Dirichlet,
        },
        (EndKind::Sphere, _) => EndCondition::Dirichlet,
        (EndKind::Cut, _) => match opts.cuts {
            CutCondition::ZeroTrace => EndCondition::Dirichlet,
            CutCondition::Free => EndCondition::Natural,
        },
        (EndKind::Origin, _) => match chart {
            Chart::Log => EndCondition::Extension,
            Chart::Linear => EndCondition::Natural,
        },
    }
}

/// Assemble the p = 2 pencil on a mesh.
pub fn assemble(params: &EmbeddingParams, mesh: &Mesh, opts: &AssemblyOptions) -> Result<DiscretePencil> {
    params.validate()?;
    if params.p != 2.0 {
        return Err(Error::domain("only p = 2 has a quadratic form to discretize"));
    }
    if mesh.order != params.m {
        return Err(Error::domain(format!(
            "mesh elements are conforming for order {}, form has order {}",
            mesh.order, params.m
        )));
    }
    let rule = GaussRule::new(opts.gauss_points.max(2 * params.m as usize + 2));
    let mut blocks = Vec::new();
    for (pi, piece) in mesh.pieces.iter().enumerate() {
        if piece.chart == Chart::Linear
            && opts.form == FormWeight::Radial
            && piece.knots.iter().any(|x| x.abs() > 1.0)
        {
            return Err(Error::domain("radial weight is defined on [-1, 1] only"));
        }
        if piece.chart == Chart::Log && opts.form == FormWeight::Unit {
            return Err(Error::domain("unit weight needs the linear chart"));
        }
        if let Some(b) = assemble_piece(params, pi, piece, opts, &rule)? {
            blocks.push(b);
        }
    }
    Ok(DiscretePencil {
        params: Some(*params),
        region: None,
        blocks,
        mesh: Some(Arc::new(mesh.clone())),
        options: *opts,
    })
}

fn assemble_piece(
    params: &EmbeddingParams,
    pi: usize,
    piece: &Piece,
    opts: &AssemblyOptions,
    rule: &GaussRule,
) -> Result<Option<Block>> {
    let m = params.m;
    let mu = m as usize;
    let ctx = ElementContext { params, opts, rule, chart: piece.chart, m };
    let nodes = piece.knots.len();
    let full = nodes * mu;
    let bw = 2 * mu - 1;

    let locals: Vec<(Local, Local)> = piece
        .knots
        .par_windows(2)
        .map(|w| ctx.element(w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;

    let mut a = SymBand::zeros(full, bw);
    let mut mm = SymBand::zeros(full, bw);
    for (e, (ka, km)) in locals.iter().enumerate() {
        let base = e * mu;
        for i in 0..2 * mu {
            for j in 0..=i {
                a.add(base + i, base + j, ka[i][j]);
                mm.add(base + i, base + j, km[i][j]);
            }
        }
    }

    let mut keep = vec![true; full];
    for (side, &kind) in piece.ends.iter().enumerate() {
        let node = if side == 0 { 0 } else { nodes - 1 };
        match end_condition(kind, piece.chart, opts) {
            EndCondition::Dirichlet => (0..mu).for_each(|d| keep[node * mu + d] = false),
            EndCondition::Natural => {}
            EndCondition::Extension => {
                if side == 0 {
                    return Err(Error::domain("origin continuation only at the deep end"));
                }
                let ext = ctx.origin_extension(*piece.knots.last().unwrap())?;
                for i in 0..mu {
                    for j in 0..=i {
                        mm.add(node * mu + i, node * mu + j, ext[i][j]);
                    }
                }
            }
        }
    }

    let idx: Vec<usize> = (0..full).filter(|&i| keep[i]).collect();
    if idx.is_empty() {
        return Ok(None);
    }
    // Constrained DOFs sit at the two ends only, so the kept set is contiguous.
    let (lo, hi) = (idx[0], idx[idx.len() - 1] + 1);
    debug_assert_eq!(hi - lo, idx.len());
    let dofs = (lo..hi)
        .map(|i| Dof { piece: pi, node: i / mu, coord: piece.knots[i / mu], derivative: (i % mu) as u8 })
        .collect();
    Ok(Some(Block {
        a: a.principal(lo, hi),
        m: mm.principal(lo, hi),
        multiplicity: if piece.mirrored { 2 } else { 1 },
        dofs,
    }))
}

/// Mesh and assemble in one step, recording the region on the pencil.
pub fn assemble_region(
    params: &EmbeddingParams,
    region: &Region,
    resolution: usize,
    grading: Grading,
    opts: &AssemblyOptions,
) -> Result<DiscretePencil> {
    let mesh = build_mesh(region, resolution, grading)?.with_order(params.m)?;
    let mut pencil = assemble(params, &mesh, opts)?;
    pencil.region = Some(region.clone());
    Ok(pencil)
}

fn dof_inside(d: &Dof, intervals: &[(f64, f64)], tol: f64) -> bool {
    intervals.iter().any(|&(lo, hi)| {
        let t = tol * d.coord.abs().max(1.0);
        d.coord > lo + t && (hi.is_infinite() || d.coord < hi - t)
    })
}

/// Zero-trace restriction: the principal subpencil on DOFs whose node lies
/// strictly inside `subregion`, split into decoupled blocks.
pub fn restrict(pencil: &DiscretePencil, subregion: &Region) -> Result<DiscretePencil> {
    let mesh = pencil
        .mesh
        .as_ref()
        .ok_or_else(|| Error::domain("pencil carries no mesh to restrict"))?;
    let mut blocks = Vec::new();
    for block in &pencil.blocks {
        let Some(first) = block.dofs.first() else { continue };
        let piece = &mesh.pieces[first.piece];
        let intervals = mesh::chart_intervals(subregion, piece.chart)?;
        for &(lo, hi) in &intervals {
            mesh::aligned(piece, lo, hi)?;
        }
        let keep: Vec<bool> = block.dofs.iter().map(|d| dof_inside(d, &intervals, 1e-10)).collect();
        let mut i = 0;
        while i < keep.len() {
            if !keep[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < keep.len() && keep[i] {
                i += 1;
            }
            blocks.push(Block {
                a: block.a.principal(start, i),
                m: block.m.principal(start, i),
                multiplicity: block.multiplicity,
                dofs: block.dofs[start..i].to_vec(),
            });
        }
    }
    // Runs separated by a removed node share no element, hence no entries.
    Ok(DiscretePencil {
        params: pencil.params,
        region: Some(subregion.clone()),
        blocks,
        mesh: pencil.mesh.clone(),
        options: pencil.options,
    })
}

/// Neumann-type restriction: the form assembled from the elements inside
/// `subregion` only, with no condition at interior cuts. At p = 2 these
/// pencils bracket the global count from above.
pub fn restrict_free(pencil: &DiscretePencil, subregion: &Region) -> Result<DiscretePencil> {
    let mesh = pencil
        .mesh
        .as_ref()
        .ok_or_else(|| Error::domain("pencil carries no mesh to restrict"))?;
    let params = pencil.params.ok_or_else(|| Error::domain("pencil carries no parameters"))?;
    let sub = mesh.submesh(subregion)?;
    let opts = AssemblyOptions { cuts: CutCondition::Free, ..pencil.options };
    let mut out = assemble(&params, &sub, &opts)?;
    out.region = Some(subregion.clone());
    Ok(out)
}

#[cfg(test)]
mod tests;
