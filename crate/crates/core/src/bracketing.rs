//! Counting functions `ν₀(ε, Ω)`, `μ₀(ε, Ω)` and the bracketing inequality.
//!
//! At p = 2 both counts are spectral: `ν₀(ε) = N(ε^{-2})` and `μ₀` is the
//! largest Courant–Fischer subspace with Rayleigh quotients `<= ε^{-2}`.
//! For general p only the factorized upper bound is available.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::SymBand;
use crate::error::{Error, Result};
use crate::galerkin::{
    assemble_region, dyadic_depth, restrict, restrict_free, AssemblyOptions, Block, DiscretePencil, Grading, Region,
};
use crate::geometry::EmbeddingParams;
use crate::spectral::{block_eigenpairs, counting_n, csv_err, smallest_eigenvalues, SolverOptions};

/// Where a reported number comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Spectral,
    Certificate,
    FactorizedBound,
    /// Sum over free (Neumann-type) subregion pencils.
    Neumann,
    Fit,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Spectral => "spectral",
            Method::Certificate => "certificate",
            Method::FactorizedBound => "factorized-bound",
            Method::Neumann => "neumann",
            Method::Fit => "fit",
        }
    }
}

/// One `(ε, region)` observation; absent fields were not computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingSample {
    pub epsilon: f64,
    pub region: String,
    pub method: Method,
    pub nu0_lo: Option<u64>,
    pub nu0_hi: Option<u64>,
    pub mu0_lo: Option<u64>,
}

impl CountingSample {
    pub fn consistent(&self) -> bool {
        match (self.mu0_lo, self.nu0_lo.or(self.nu0_hi)) {
            (Some(mu), Some(nu)) => mu <= nu,
            _ => true,
        }
    }
}

/// CSV with columns `epsilon, region, method, nu0_lo, nu0_hi, mu0_lo`.
pub fn write_counting_csv<W: Write>(samples: &[CountingSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "region", "method", "nu0_lo", "nu0_hi", "mu0_lo"]).map_err(csv_err)?;
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in samples {
        out.write_record(&[
            format!("{:.17e}", s.epsilon),
            s.region.clone(),
            s.method.tag().to_string(),
            opt(s.nu0_lo),
            opt(s.nu0_hi),
            opt(s.mu0_lo),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn check_p2(pencil: &DiscretePencil) -> Result<()> {
    match pencil.params {
        Some(p) if p.p != 2.0 => Err(Error::domain(format!("spectral counts need p = 2, got p = {}", p.p))),
        _ => Ok(()),
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("epsilon must be positive and finite, got {eps}")))
    }
}

/// `ν₀(ε) = #{k : a_k >= ε} = N(ε^{-2})`; zero when `a_1 < ε`.
pub fn nu0_spectral(pencil: &DiscretePencil, eps: f64) -> Result<usize> {
    check_p2(pencil)?;
    check_eps(eps)?;
    counting_n(pencil, eps.powi(-2))
}

/// Largest `λ` with `P_A x = λ P_M x` for the dense projected pencil.
fn projected_max(pa: &DMatrix<f64>, pm: &DMatrix<f64>) -> Result<f64> {
    if pa.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let l = pm
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical { message: "projected mass lost definiteness".into(), achieved: 0.0, partial: None })?
        .l();
    let x = l.solve_lower_triangular(pa).expect("positive diagonal");
    let c = l.solve_lower_triangular(&x.transpose()).expect("positive diagonal");
    let c = (&c + c.transpose()) * 0.5;
    Ok(c.symmetric_eigenvalues().max())
}

fn gram(mat: &SymBand, vs: &[Vec<f64>]) -> DMatrix<f64> {
    let mv: Vec<Vec<f64>> = vs.iter().map(|v| mat.mul_vec(v)).collect();
    DMatrix::from_fn(vs.len(), vs.len(), |i, j| crate::band::dot(&vs[i], &mv[j]))
}

/// `μ₀` of one block: the largest `d` such that the span of the first `d`
/// eigenvectors has all Rayleigh quotients `<= cap`. Courant–Fischer makes
/// this the maximum over all subspaces.
fn mu0_block(block: &Block, cap: f64, opts: &SolverOptions) -> Result<usize> {
    let pairs = block_eigenpairs(block, 2.0 * cap, true, opts)?;
    let vs = &pairs.vectors;
    let (pa, pm) = (gram(&block.a, vs), gram(&block.m, vs));
    let fits = |d: usize| -> Result<bool> {
        let max = projected_max(&pa.view((0, 0), (d, d)).into_owned(), &pm.view((0, 0), (d, d)).into_owned())?;
        // One-ulp slack: a projected Rayleigh quotient can exceed an exact
        // eigenvalue cap by rounding alone.
        Ok(max <= cap * (1.0 + 16.0 * f64::EPSILON))
    };
    // Monotone in d: binary search for the last d that fits.
    let (mut lo, mut hi) = (0, vs.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo)
}

/// `μ₀(ε)` by projected pencils; equals `ν₀(ε)` on every p = 2 pencil.
pub fn mu0_spectral(pencil: &DiscretePencil, eps: f64, opts: &SolverOptions) -> Result<usize> {
    check_p2(pencil)?;
    check_eps(eps)?;
    let cap = eps.powi(-2);
    let per: Vec<usize> = pencil.blocks.par_iter().map(|b| mu0_block(b, cap, opts)).collect::<Result<_>>()?;
    Ok(per.iter().zip(&pencil.blocks).map(|(d, b)| d * b.multiplicity).sum())
}

/// Shells `B^1 .. B^J` and the inner ball `B_J`.
pub fn annulus_regions(levels: u32) -> Vec<Region> {
    let mut out: Vec<Region> = (1..=levels).map(Region::shell).collect();
    out.push(Region::inner_ball(levels));
    out
}

/// One ε of a bracketing check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketingRow {
    pub epsilon: f64,
    /// `Σ_j μ₀(ε, Ω_j)` over zero-trace restrictions.
    pub lower_sum: u64,
    pub mu0: u64,
    pub nu0: u64,
    /// `Σ_j ν₀(ε, Ω_j)` over free restrictions.
    pub neumann_sum: u64,
    /// Extra certified lower bounds for `μ₀(ε, Ω)` from other modules.
    pub external_lower: Vec<(Method, u64)>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketingReport {
    pub regions: Vec<String>,
    pub rows: Vec<BracketingRow>,
}

impl BracketingReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations.len()).sum()
    }

    /// Flatten into counting samples (one per method and ε).
    pub fn samples(&self, region: &str) -> Vec<CountingSample> {
        let mut out = Vec::new();
        for r in &self.rows {
            out.push(CountingSample {
                epsilon: r.epsilon,
                region: region.to_string(),
                method: Method::Spectral,
                nu0_lo: Some(r.nu0),
                nu0_hi: Some(r.nu0),
                mu0_lo: Some(r.mu0.max(r.lower_sum)),
            });
            out.push(CountingSample {
                epsilon: r.epsilon,
                region: region.to_string(),
                method: Method::Neumann,
                nu0_lo: None,
                nu0_hi: Some(r.neumann_sum),
                mu0_lo: None,
            });
            for &(m, v) in &r.external_lower {
                out.push(CountingSample {
                    epsilon: r.epsilon,
                    region: region.to_string(),
                    method: m,
                    nu0_lo: None,
                    nu0_hi: None,
                    mu0_lo: Some(v),
                });
            }
        }
        out
    }
}

/// Check `Σ μ₀(Ω_j) <= μ₀(Ω) = ν₀(Ω) <= Σ ν₀^free(Ω_j)` on every ε as exact
/// integers. `external` supplies further lower bounds for `μ₀(ε, Ω)` (for
/// instance certificate dimensions), each checked against `ν₀`.
pub fn bracketing_check(
    pencil: &DiscretePencil,
    decomposition: &[Region],
    eps_grid: &[f64],
    external: &(dyn Fn(f64) -> Vec<(Method, u64)> + Sync),
    opts: &SolverOptions,
) -> Result<BracketingReport> {
    check_p2(pencil)?;
    if decomposition.is_empty() {
        return Err(Error::domain("empty decomposition"));
    }
    let zero: Vec<DiscretePencil> = decomposition.iter().map(|r| restrict(pencil, r)).collect::<Result<_>>()?;
    let free: Vec<DiscretePencil> = decomposition.iter().map(|r| restrict_free(pencil, r)).collect::<Result<_>>()?;
    let rows = eps_grid
        .par_iter()
        .map(|&eps| -> Result<BracketingRow> {
            let mut lower_sum = 0;
            for z in &zero {
                lower_sum += mu0_spectral(z, eps, opts)? as u64;
            }
            let mu0 = mu0_spectral(pencil, eps, opts)? as u64;
            let nu0 = nu0_spectral(pencil, eps)? as u64;
            let mut neumann_sum = 0;
            for f in &free {
                neumann_sum += nu0_spectral(f, eps)? as u64;
            }
            let external_lower = external(eps);
            let mut violations = Vec::new();
            if lower_sum > mu0 {
                violations.push(format!("Σμ₀(Ω_j) = {lower_sum} > μ₀(Ω) = {mu0}"));
            }
            if mu0 != nu0 {
                violations.push(format!("μ₀(Ω) = {mu0} ≠ ν₀(Ω) = {nu0}"));
            }
            if nu0 > neumann_sum {
                violations.push(format!("ν₀(Ω) = {nu0} > Σν₀^free(Ω_j) = {neumann_sum}"));
            }
            for &(m, v) in &external_lower {
                if v > nu0 {
                    violations.push(format!("{} lower bound {v} > ν₀(Ω) = {nu0}", m.tag()));
                }
            }
            Ok(BracketingRow { epsilon: eps, lower_sum, mu0, nu0, neumann_sum, external_lower, violations })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BracketingReport { regions: decomposition.iter().map(Region::label).collect(), rows })
}

/// Mesh settings for inner-ball and annulus pencils built here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffOptions {
    /// Points per local wavelength of the adapted mesh.
    pub resolution: usize,
    /// Hardy-route constant for `p != 2`: `‖id_J‖ <= c J^{-σ}`.
    pub hardy_constant: Option<f64>,
}

impl Default for CutoffOptions {
    fn default() -> Self {
        CutoffOptions { resolution: 24, hardy_constant: None }
    }
}

/// Zero-trace pencil of the inner ball `B_J`, meshed to resolve its lowest
/// eigenvalue.
pub fn inner_ball_pencil(params: &EmbeddingParams, levels: u32, resolution: usize) -> Result<DiscretePencil> {
    // λ_1(B_J) lies near V_m (1 + J ln 2)^{2σ}; resolve a few times that.
    let floor = crate::galerkin::origin_potential(params.m) * (1.0 + dyadic_depth(levels)).powf(2.0 * params.sigma);
    let grading = Grading::adapted(params, 16.0 * floor);
    assemble_region(params, &Region::inner_ball(levels), resolution, grading, &AssemblyOptions::default())
}

/// Upper bound for `‖id_J‖`, the embedding restricted to `B_J`: `a_1` of the
/// inner-ball pencil at p = 2, the Hardy route `c J^{-σ}` otherwise.
pub fn cutoff_norm(params: &EmbeddingParams, levels: u32, opts: &CutoffOptions) -> Result<f64> {
    params.validate()?;
    if levels == 0 {
        return Err(Error::domain("cutoff level J must be at least 1"));
    }
    if params.p != 2.0 {
        let c = opts.hardy_constant.ok_or_else(|| {
            Error::config("hardy_constant", format!("p = {} needs a calibrated Hardy constant", params.p))
        })?;
        return Ok(c * (levels as f64).powf(-params.sigma));
    }
    let pencil = inner_ball_pencil(params, levels, opts.resolution)?;
    Ok(smallest_eigenvalues(&pencil, 1, &SolverOptions::default())?[0].powf(-0.5))
}

/// `C = max_J ‖id_J‖ J^σ` over `levels` at p = 2; with it `J(ε)` below
/// gives `‖id_J‖ <= ε` on the calibration range.
pub fn calibrate_cutoff_constant(params: &EmbeddingParams, levels: &[u32], opts: &CutoffOptions) -> Result<f64> {
    let p2 = params.with_p(2.0);
    let norms: Vec<f64> =
        levels.par_iter().map(|&j| cutoff_norm(&p2, j, opts)).collect::<Result<_>>()?;
    Ok(levels.iter().zip(&norms).map(|(&j, n)| n * (j as f64).powf(params.sigma)).fold(0.0, f64::max))
}

/// `J(ε) = ⌈(C/ε)^{1/σ}⌉`; `C = 1` is the plain `⌈ε^{-1/σ}⌉`.
pub fn cutoff_level(eps: f64, sigma: f64, constant: f64) -> Result<u32> {
    check_eps(eps)?;
    if !(sigma > 0.0) {
        return Err(Error::NonCompact(format!("cutoff needs sigma > 0, got {sigma}")));
    }
    let j = (constant / eps).powf(1.0 / sigma).ceil().max(1.0);
    if j > u32::MAX as f64 {
        return Err(Error::domain(format!("cutoff level {j} overflows")));
    }
    Ok(j as u32)
}

/// Constants of the factorized bound and where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedCalibration {
    /// `a_k(id^j) <= c j^{-σ} k^{-m/n}`.
    pub c: f64,
    /// Constant in `J(ε)`; 1 for the plain rule.
    pub cutoff_constant: f64,
    pub provenance: String,
    /// Set when reused away from p = 2, where `c` is only known up to calibration.
    pub up_to_calibration: bool,
}

/// Annuli used by [`calibrate_factorized`].
pub const CALIBRATION_SHELLS: [u32; 5] = [1, 2, 4, 8, 16];

/// Cutoff levels used to calibrate `J(ε)` in [`calibrate_factorized`].
pub const CALIBRATION_CUTOFFS: [u32; 5] = [2, 4, 8, 16, 32];

/// `c = max_{j, k} a_k(id^j) j^σ k^{m/n}` from zero-trace annulus pencils at
/// p = 2, over the shells [`CALIBRATION_SHELLS`] and each shell's first
/// `k_max` approximation numbers. The coarsest annulus alone underestimates
/// `c`: `(1 + j ln 2)^σ / j^σ` only settles for larger `j`. The cutoff
/// constant comes from [`calibrate_cutoff_constant`] on
/// [`CALIBRATION_CUTOFFS`]; for σ < m/n the shell count dominates the bound.
pub fn calibrate_factorized(params: &EmbeddingParams, resolution: usize, k_max: usize) -> Result<FactorizedCalibration> {
    let p2 = params.with_p(2.0);
    let exponent = params.m as f64 / params.n as f64;
    let per_shell: Vec<f64> = CALIBRATION_SHELLS
        .par_iter()
        .map(|&j| -> Result<f64> {
            let pencil = assemble_region(
                &p2,
                &Region::shell(j),
                resolution,
                Grading::Geometric { depth: j },
                &AssemblyOptions::default(),
            )?;
            let k = k_max.min(pencil.dim() / 10).max(1);
            let lams = smallest_eigenvalues(&pencil, k, &SolverOptions::default())?;
            let weight = (j as f64).powf(params.sigma);
            Ok(lams
                .iter()
                .enumerate()
                .map(|(i, l)| l.powf(-0.5) * weight * ((i + 1) as f64).powf(exponent))
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let cutoff_opts = CutoffOptions { resolution: 24, hardy_constant: None };
    let cutoff_constant = calibrate_cutoff_constant(&p2, &CALIBRATION_CUTOFFS, &cutoff_opts)?;
    Ok(FactorizedCalibration {
        c: per_shell.iter().copied().fold(0.0, f64::max),
        cutoff_constant,
        provenance: format!(
            "c: max of a_k j^sigma k^(m/n) over zero-trace annuli j in {CALIBRATION_SHELLS:?}, k <= {k_max} \
             (p = 2, {resolution} elements per octave); J(eps): max of |id_J| J^sigma over J in {CALIBRATION_CUTOFFS:?}"
        ),
        up_to_calibration: params.p != 2.0,
    })
}

/// `Σ_{j=1}^{J} ⌈(c j^{-σ} / ε)^{n/m}⌉` with `J = J(ε)`: the upper bound for
/// `ν₀(ε, B \ B_J)` from annulus-wise factorization.
pub fn nu0_upper_factorized(params: &EmbeddingParams, eps: f64, cal: &FactorizedCalibration) -> Result<u64> {
    check_eps(eps)?;
    if !(cal.c > 0.0) {
        return Err(Error::domain(format!("calibration constant must be positive, got {}", cal.c)));
    }
    let levels = cutoff_level(eps, params.sigma, cal.cutoff_constant)?;
    let q = params.n as f64 / params.m as f64;
    // Beyond j = (c/ε)^{1/σ} every shell contributes exactly 1.
    let ones_from = ((cal.c / eps).powf(1.0 / params.sigma).ceil() + 1.0).min(u32::MAX as f64) as u64;
    let mut total = 0u64;
    for j in 1..=levels.min(ones_from as u32) {
        total += (cal.c * (j as f64).powf(-params.sigma) / eps).powf(q).ceil() as u64;
    }
    Ok(total + (levels as u64).saturating_sub(ones_from))
}
