//! Generalized eigenvalues of assembled pencils.
//!
//! Counts come from the inertia of `A - λM` (Sylvester), so they are exact
//! up to the rounding of one banded factorization. Eigenvalues are isolated
//! and refined by bisection on those counts; eigenvectors, when asked for,
//! come from inverse iteration at the refined value. Small blocks go through
//! a dense Cholesky route instead.
//!
//! Counting convention: `N(λ) = #{k : λ_k <= λ}`, so that
//! `#{k : a_k >= ε} = N(ε^{-2})` with `a_k = λ_k^{-1/2}`.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{dot, inertia_below, BandLdlt, SymBand};
use crate::error::{Error, Result};
use crate::galerkin::{
    assemble_region, origin_potential, AssemblyOptions, Block, DiscretePencil, Grading, Region,
};
use crate::geometry::EmbeddingParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Bound on the relative residual `‖Av - λMv‖ / (λ ‖Mv‖)`.
    pub tolerance: f64,
    /// Blocks up to this size use the dense route.
    pub dense_max: usize,
    /// Inverse-iteration steps per eigenpair.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-9, dense_max: 500, max_iterations: 30 }
    }
}

/// Eigenvalues up to a cap, ascending, one entry per copy of mirrored blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSlice {
    pub cap: f64,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Index of the pencil block each eigenvalue belongs to.
    pub blocks: Vec<usize>,
}

impl SpectrumSlice {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn approx_numbers(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| l.powf(-0.5)).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `k, lambda, a_k, residual`, `k` starting at 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "lambda", "a_k", "residual"]).map_err(csv_err)?;
        for (i, (&l, &r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            out.write_record(&[
                (i + 1).to_string(),
                format!("{l:.17e}"),
                format!("{:.17e}", l.powf(-0.5)),
                format!("{r:.3e}"),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Smallest shift strictly above `x`, in the sense of the factorization:
/// eigenvalues equal to `x` up to a few ulps are counted as `<= x`.
fn just_above(x: f64) -> f64 {
    x + 8.0 * f64::EPSILON * x.abs() + f64::MIN_POSITIVE
}

fn count_le(block: &Block, x: f64) -> usize {
    inertia_below(&block.a, &block.m, just_above(x))
}

/// `N(λ) = #{k : λ_k <= λ}` from one factorization per block.
pub fn counting_n(pencil: &DiscretePencil, lambda: f64) -> Result<usize> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("counting threshold must be positive, got {lambda}")));
    }
    Ok(pencil.blocks.par_iter().map(|b| b.multiplicity * count_le(b, lambda)).sum())
}

/// A shift below every eigenvalue of the block, checked by inertia.
fn floor_shift(block: &Block, cap: f64) -> Result<f64> {
    let lo = -(cap.abs() + 1.0);
    if count_le(block, lo) != 0 {
        return Err(Error::Precondition("stiffness matrix is not positive semidefinite".into()));
    }
    Ok(lo)
}

/// All eigenvalues `<= cap` of one block by recursive spectrum slicing.
fn bisect_block(block: &Block, cap: f64) -> Result<Vec<f64>> {
    let lo = floor_shift(block, cap)?;
    let total = count_le(block, cap);
    let mut out = vec![0.0; total];
    let abs_floor = 1e-15 * cap.abs().max(1.0);
    slice(block, lo, cap, 0, total, abs_floor, &mut out);
    Ok(out)
}

/// Fill `out` (indices `c_lo..c_hi` of the block spectrum, relative to
/// `c_lo`) given `count(lo) = c_lo` and `count(hi) = c_hi`.
fn slice(block: &Block, lo: f64, hi: f64, c_lo: usize, c_hi: usize, abs_floor: f64, out: &mut [f64]) {
    if c_hi == c_lo {
        return;
    }
    let mid = 0.5 * (lo + hi);
    let width = hi - lo;
    if width <= 4.0 * f64::EPSILON * mid.abs() + abs_floor || mid <= lo || mid >= hi {
        // Converged: a single value or a numerically coincident cluster.
        out.iter_mut().for_each(|v| *v = mid);
        return;
    }
    let c_mid = count_le(block, mid);
    let (left, right) = out.split_at_mut(c_mid - c_lo);
    if c_hi - c_lo > 8 {
        rayon::join(
            || slice(block, lo, mid, c_lo, c_mid, abs_floor, left),
            || slice(block, mid, hi, c_mid, c_hi, abs_floor, right),
        );
    } else {
        slice(block, lo, mid, c_lo, c_mid, abs_floor, left);
        slice(block, mid, hi, c_mid, c_hi, abs_floor, right);
    }
}

/// `‖Av - λMv‖ / (|λ| ‖Mv‖)`, or the unscaled ratio when `λ = 0`.
pub fn relative_residual(a: &SymBand, m: &SymBand, lambda: f64, v: &[f64]) -> f64 {
    let av = a.mul_vec(v);
    let mv = m.mul_vec(v);
    let r: f64 = av.iter().zip(&mv).map(|(x, y)| (x - lambda * y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(&mv, &mv).sqrt() * if lambda != 0.0 { lambda.abs() } else { 1.0 };
    r / scale
}

/// Eigenpairs of one block: values, `M`-orthonormal vectors, residuals.
#[derive(Debug, Clone)]
pub struct BlockEigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Dense `S A S`, `S M S` with `S = diag(M)^{-1/2}`, and `S`. Hermite
/// derivative unknowns make `M` badly scaled; the congruence keeps the
/// spectrum and brings `cond(M)` down to the element-shape level.
fn equilibrated(a: &SymBand, m: &SymBand) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let s: Vec<f64> = (0..m.dim()).map(|i| m.get(i, i).abs().sqrt().recip()).collect();
    let scale = |x: &SymBand| DMatrix::from_fn(x.dim(), x.dim(), |i, j| s[i] * x.get(i, j) * s[j]);
    (scale(a), scale(m), s)
}

fn dense_block(block: &Block) -> Result<BlockEigenpairs> {
    let (a, m, s) = equilibrated(&block.a, &block.m);
    let l = m.cholesky().ok_or_else(|| Error::domain("M is not positive definite"))?.l();
    let x = l.solve_lower_triangular(&a).expect("triangular with positive diagonal");
    let c = l.solve_lower_triangular(&x.transpose()).expect("triangular with positive diagonal");
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut out = BlockEigenpairs { values: Vec::new(), vectors: Vec::new(), residuals: Vec::new() };
    for i in order {
        let y = eig.eigenvectors.column(i).into_owned();
        let v = lt.solve_upper_triangular(&y).expect("triangular with positive diagonal");
        let v: Vec<f64> = v.iter().zip(&s).map(|(x, si)| x * si).collect();
        let lam = eig.eigenvalues[i];
        out.residuals.push(relative_residual(&block.a, &block.m, lam, &v));
        out.values.push(lam);
        out.vectors.push(v);
    }
    Ok(out)
}

fn m_normalize(m: &SymBand, v: &mut [f64]) {
    let n = m.quadratic_form(v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Remove the `M`-components along already accepted vectors.
fn m_orthogonalize(m: &SymBand, v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(&m.mul_vec(b), v);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Inverse iteration at approximate values of one cluster. With `starts`
/// (dense route) the values are refined to the Rayleigh quotient; otherwise
/// they are bisected values, kept as they are, and the start is random.
fn inverse_iteration(
    block: &Block,
    values: &[f64],
    starts: Option<&[Vec<f64>]>,
    first_index: usize,
    opts: &SolverOptions,
) -> Result<Vec<(f64, Vec<f64>, f64)>> {
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for (i, &lam) in values.iter().enumerate() {
        let mut shift = lam;
        let mut step = 8.0 * f64::EPSILON * lam.abs().max(f64::MIN_POSITIVE);
        let fact = loop {
            match BandLdlt::factor(&block.a, &block.m, shift) {
                Ok(f) => break f,
                Err(_) => {
                    shift = lam + step;
                    step *= 4.0;
                }
            }
        };
        let mut v = match starts {
            Some(s) => s[i].clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64((first_index + i) as u64);
                (0..block.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
        };
        m_orthogonalize(&block.m, &mut v, &found);
        m_normalize(&block.m, &mut v);
        let rayleigh = |v: &[f64]| if starts.is_some() { block.a.quadratic_form(v) } else { lam };
        let mut value = rayleigh(&v);
        let mut res = relative_residual(&block.a, &block.m, value, &v);
        for _ in 0..opts.max_iterations {
            if res <= 0.01 * opts.tolerance {
                break;
            }
            let mut w = fact.solve(&block.m.mul_vec(&v));
            m_orthogonalize(&block.m, &mut w, &found);
            m_normalize(&block.m, &mut w);
            v = w;
            value = rayleigh(&v);
            res = relative_residual(&block.a, &block.m, value, &v);
        }
        if !(res <= opts.tolerance) {
            return Err(Error::Numerical {
                message: format!("inverse iteration at λ = {lam} stalled"),
                achieved: res,
                partial: None,
            });
        }
        found.push(v.clone());
        out.push((value, v, res));
    }
    Ok(out)
}

/// Index ranges of runs of relatively close values; vectors inside a run
/// are orthogonalized against each other.
fn clusters(values: &[f64], rel: f64) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for i in 0..values.len() {
        match out.last_mut() {
            Some((_, end)) if values[i] - values[i - 1] <= rel * values[i].abs() => *end = i + 1,
            _ => out.push((i, i + 1)),
        }
    }
    out
}

fn refine(block: &Block, values: &[f64], starts: Option<&[Vec<f64>]>, rel: f64, opts: &SolverOptions) -> Result<BlockEigenpairs> {
    let pairs: Vec<Vec<(f64, Vec<f64>, f64)>> = clusters(values, rel)
        .par_iter()
        .map(|&(s, e)| inverse_iteration(block, &values[s..e], starts.map(|v| &v[s..e]), s, opts))
        .collect::<Result<_>>()?;
    let mut out = BlockEigenpairs { values: Vec::new(), vectors: Vec::new(), residuals: Vec::new() };
    for (l, v, r) in pairs.into_iter().flatten() {
        out.values.push(l);
        out.vectors.push(v);
        out.residuals.push(r);
    }
    Ok(out)
}

/// Eigenvalues `<= cap` of one block, with vectors if `vectors` is set.
pub fn block_eigenpairs(block: &Block, cap: f64, vectors: bool, opts: &SolverOptions) -> Result<BlockEigenpairs> {
    let count = count_le(block, cap);
    if block.dim() <= opts.dense_max {
        let mut d = dense_block(block)?;
        // Dense values carry an absolute error of order eps * λ_max.
        let slack = 1e-6;
        if d.values.len() > count && d.values[count] <= cap * (1.0 - slack)
            || count > 0 && d.values[count - 1] > cap * (1.0 + slack)
        {
            return Err(Error::Numerical {
                message: format!("dense spectrum disagrees with the inertia count {count} at {cap}"),
                achieved: d.values.get(count).copied().unwrap_or(f64::NAN),
                partial: None,
            });
        }
        d.values.truncate(count);
        d.vectors.truncate(count);
        let mut r = refine(block, &d.values, Some(&d.vectors), 1e-6, opts)?;
        if !vectors {
            r.vectors.clear();
        }
        return Ok(r);
    }
    let values = bisect_block(block, cap)?;
    if !vectors {
        let residuals = vec![0.0; values.len()];
        return Ok(BlockEigenpairs { values, vectors: Vec::new(), residuals });
    }
    refine(block, &values, None, 1e-8, opts)
}

/// All eigenvalues `<= cap` with residuals, cross-checked against the
/// inertia count.
pub fn eigs_below(pencil: &DiscretePencil, cap: f64, opts: &SolverOptions) -> Result<SpectrumSlice> {
    if !(cap > 0.0) {
        return Err(Error::domain(format!("spectral cap must be positive, got {cap}")));
    }
    let per_block: Vec<Result<BlockEigenpairs>> =
        pencil.blocks.par_iter().map(|b| block_eigenpairs(b, cap, true, opts)).collect();
    let mut entries: Vec<(f64, f64, usize)> = Vec::new();
    let mut failure = None;
    for (bi, (r, block)) in per_block.into_iter().zip(&pencil.blocks).enumerate() {
        match r {
            Ok(p) => {
                for (&l, &res) in p.values.iter().zip(&p.residuals) {
                    for _ in 0..block.multiplicity {
                        entries.push((l, res, bi));
                    }
                }
            }
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    entries.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));
    let slice = SpectrumSlice {
        cap,
        eigenvalues: entries.iter().map(|e| e.0).collect(),
        residuals: entries.iter().map(|e| e.1).collect(),
        blocks: entries.iter().map(|e| e.2).collect(),
    };
    if let Some(e) = failure {
        let (message, achieved) = match e {
            Error::Numerical { message, achieved, .. } => (message, achieved),
            other => return Err(other),
        };
        return Err(Error::Numerical {
            message,
            achieved,
            partial: Some(Box::new(serde_json::to_value(&slice)?)),
        });
    }
    let expected = counting_n(pencil, cap)?;
    if expected != slice.len() {
        return Err(Error::Numerical {
            message: format!("{} eigenvalues found below {cap}, inertia counts {expected}", slice.len()),
            achieved: slice.len() as f64,
            partial: Some(Box::new(serde_json::to_value(&slice)?)),
        });
    }
    Ok(slice)
}

/// A cap with `N(cap) >= k`, found by doubling.
pub fn cap_for_count(pencil: &DiscretePencil, k: usize) -> Result<f64> {
    if k > pencil.dim() {
        return Err(Error::domain(format!("asked for {k} eigenvalues of a {}-dimensional pencil", pencil.dim())));
    }
    let mut cap = 1.0;
    while counting_n(pencil, cap)? < k {
        cap *= 2.0;
        if !cap.is_finite() {
            return Err(Error::Numerical { message: "no finite cap reaches the count".into(), achieved: cap, partial: None });
        }
    }
    Ok(cap)
}

/// The `k` smallest eigenvalues (with multiplicity), values only.
pub fn smallest_eigenvalues(pencil: &DiscretePencil, k: usize, opts: &SolverOptions) -> Result<Vec<f64>> {
    let cap = cap_for_count(pencil, k)?;
    let per_block: Vec<BlockEigenpairs> =
        pencil.blocks.par_iter().map(|b| block_eigenpairs(b, cap, false, opts)).collect::<Result<_>>()?;
    let mut all: Vec<f64> = Vec::new();
    for (p, b) in per_block.iter().zip(&pencil.blocks) {
        for &l in &p.values {
            all.extend(std::iter::repeat_n(l, b.multiplicity));
        }
    }
    all.sort_by(f64::total_cmp);
    all.truncate(k);
    Ok(all)
}

/// `a_1 >= ... >= a_K` with `a_k = λ_k^{-1/2}`.
pub fn discrete_approx_numbers(pencil: &DiscretePencil, k: usize, opts: &SolverOptions) -> Result<Vec<f64>> {
    Ok(smallest_eigenvalues(pencil, k, opts)?.into_iter().map(|l| l.powf(-0.5)).collect())
}

/// Matrix-level check of `id ∘ id* = A^{-1}`.
///
/// With `A = L_A L_Aᵀ` and `M = L_M L_Mᵀ`, the discrete embedding in
/// orthonormal coordinates is `T = L_Mᵀ L_A^{-T}`. Its singular values are
/// compared with `λ_k^{-1/2}` from the symmetric route
/// `C = L_M^{-1} A L_M^{-T}`, and `T Tᵀ` with `C^{-1}`. Deviations are relative
/// to the operator norm `a_1` (resp. `a_1^2`). Both routes run on the
/// diagonally equilibrated pencil, which has the same spectrum.
/// The singular-value deviation grows like `ε_mach · cond(C) / 2`, so fine
/// m = 2 meshes exceed 1e-10 through rounding alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub dim: usize,
    pub singular_value_deviation: f64,
    pub operator_deviation: f64,
}

impl DualityReport {
    pub fn deviation(&self) -> f64 {
        self.singular_value_deviation.max(self.operator_deviation)
    }
}

/// Largest block handled by [`duality_check`] (dense SVD).
pub const DUALITY_MAX_DIM: usize = 1500;

pub fn duality_check(pencil: &DiscretePencil) -> Result<DualityReport> {
    let mut report = DualityReport { dim: pencil.dim(), singular_value_deviation: 0.0, operator_deviation: 0.0 };
    for block in &pencil.blocks {
        if block.dim() > DUALITY_MAX_DIM {
            return Err(Error::Precondition(format!(
                "duality check is dense; block of size {} exceeds {DUALITY_MAX_DIM}",
                block.dim()
            )));
        }
        let (a, m, _) = equilibrated(&block.a, &block.m);
        let (sv, op) = duality_block(&a, &m)?;
        report.singular_value_deviation = report.singular_value_deviation.max(sv);
        report.operator_deviation = report.operator_deviation.max(op);
    }
    Ok(report)
}

fn duality_block(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let la = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Precondition("A is not positive definite".into()))?
        .l();
    let lm = m.clone().cholesky().ok_or_else(|| Error::domain("M is not positive definite"))?.l();
    let n = a.nrows();
    // T = L_Mᵀ L_A^{-T}, i.e. Tᵀ = L_A^{-1} L_M.
    let tt = la.solve_lower_triangular(&lm).expect("positive diagonal");
    let t = tt.transpose();
    let mut sing: Vec<f64> = t.clone().svd(false, false).singular_values.iter().copied().collect();
    sing.sort_by(|x, y| y.total_cmp(x));

    let x = lm.solve_lower_triangular(a).expect("positive diagonal");
    let c = lm.solve_lower_triangular(&x.transpose()).expect("positive diagonal");
    let c = (&c + c.transpose()) * 0.5;
    let mut lam: Vec<f64> = SymmetricEigen::new(c.clone()).eigenvalues.iter().copied().collect();
    lam.sort_by(f64::total_cmp);
    let a1 = sing[0].max(f64::MIN_POSITIVE);
    let sv = sing.iter().zip(&lam).map(|(s, l)| (s - l.powf(-0.5)).abs()).fold(0.0, f64::max) / a1;

    let ttt = &t * &tt;
    let cinv = c
        .cholesky()
        .ok_or_else(|| Error::Precondition("projected operator is not positive definite".into()))?
        .inverse();
    let norm = ttt.amax().max(f64::MIN_POSITIVE);
    let op = (0..n * n).map(|i| (ttt[i] - cinv[i]).abs()).fold(0.0, f64::max) / norm;
    Ok((sv, op))
}

/// Largest approximation number `a_1 = ‖id‖` by power iteration on
/// `A^{-1} M`, independent of the slicing route.
pub fn embedding_norm_power(pencil: &DiscretePencil, iterations: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for block in &pencil.blocks {
        let f = BandLdlt::factor(&block.a, &block.m, 0.0)
            .map_err(|_| Error::Precondition("A is singular".into()))?;
        let mut v = vec![1.0; block.dim()];
        let mut rq = 0.0;
        for _ in 0..iterations {
            let w = f.solve(&block.m.mul_vec(&v));
            let norm = block.m.quadratic_form(&w).sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
            rq = block.m.quadratic_form(&v) / block.a.quadratic_form(&v);
        }
        best = best.max(rq.sqrt());
    }
    Ok(best)
}

/// Ball pencil whose mesh resolves the `k` smallest eigenvalues: the
/// adapted grading is rebuilt with a doubled spectral target until the
/// pencil holds `k` eigenvalues below it.
pub fn resolved_ball_pencil(
    params: &EmbeddingParams,
    k: usize,
    resolution: usize,
    opts: &AssemblyOptions,
) -> Result<DiscretePencil> {
    let mut target = 4.0 * origin_potential(params.m);
    for _ in 0..64 {
        let pencil = assemble_region(params, &Region::ball(), resolution, Grading::adapted(params, target), opts)?;
        if counting_n(&pencil, target)? >= k {
            return Ok(pencil);
        }
        target *= 2.0;
    }
    Err(Error::Numerical { message: format!("no adapted mesh reached {k} eigenvalues"), achieved: target, partial: None })
}

#[cfg(test)]
mod tests;
