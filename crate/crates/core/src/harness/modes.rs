//! Per-mode computations behind [`super::run`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FitInputModel, Mode};
use super::{load_records, Verdict};
use crate::asymptotics::{
    entropy_upper_from_ak, fit_rate, fit_sequence_counting, fit_sequence_log_exponent, invert_counting,
    predicted_rate, regime_table, AkLaw, EntropyUpper, FitModel, RateFit, Regime, RegimeRow, DOUBLING_BAND,
};
use crate::bracketing::{
    annulus_regions, bracketing_check, calibrate_factorized, nu0_spectral, nu0_upper_factorized,
    write_counting_csv, BracketingReport, CountingSample, FactorizedCalibration, Method,
};
use crate::certificates::{entropy_family, CertificateBuilder, EntropyCertificate, Mu0Certificate};
use crate::error::{Error, Result};
use crate::galerkin::{assemble_region, turning_depth, AssemblyOptions, Grading, Region};

use crate::geometry::EmbeddingParams;
use crate::spectral::{
    eigs_below, resolved_ball_pencil, smallest_eigenvalues, SolverOptions, SpectrumSlice,
};

/// Deepest turning point (in octaves) the certificate cross-check will mesh.
pub const SPECTRAL_DEPTH_BUDGET: f64 = 2048.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResults {
    pub dim: usize,
    pub computed: usize,
    pub max_residual: f64,
    pub k_range: [usize; 2],
    /// Counting-side fit of `(a_k, k)`.
    pub fit: Option<RateFit>,
    pub law: Option<AkLaw>,
    /// Log exponent with the power held at the predicted value.
    pub conditional_rho: Option<f64>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketingLevel {
    pub levels: u32,
    pub report: BracketingReport,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketingResults {
    /// Spectral bracketing per decomposition level (p = 2 only).
    pub levels: Vec<BracketingLevel>,
    /// Every counting sample, all methods.
    pub samples: Vec<CountingSample>,
    /// Lower bound above an upper bound on the same region and ε.
    pub sandwich_violations: Vec<String>,
    pub violations: usize,
    pub lower_fit: Option<RateFit>,
    pub upper_fit: Option<RateFit>,
    pub lower_law: Option<AkLaw>,
    pub upper_law: Option<AkLaw>,
    #[serde(default)]
    pub lower_fit_error: Option<String>,
    #[serde(default)]
    pub upper_fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateResults {
    pub certificates: Vec<Mu0Certificate>,
    /// Spectral `ν₀(ε)` on a pencil resolving `ε_min^{-2}` (p = 2 only).
    pub spectral_nu0: Option<Vec<(f64, u64)>>,
    pub unsound: usize,
    pub above_spectral: usize,
    pub fit: Option<RateFit>,
    pub law: Option<AkLaw>,
    /// Why there is no fit, e.g. every certificate was capped.
    #[serde(default)]
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyResults {
    pub family: Vec<EntropyCertificate>,
    /// Sequence fit of `lower_value` against `N`.
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    /// Carl-type upper route from spectral `a_k` (p = 2 only).
    pub upper: Option<EntropyUpper>,
    pub upper_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResults {
    pub model: FitModel,
    pub fit: RateFit,
    pub law: Option<AkLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResults {
    pub rows: Vec<RegimeRow>,
    pub table: String,
    pub records: usize,
    pub failed: usize,
    pub sandwich_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ModeResults {
    Spectrum(SpectrumResults),
    Bracketing(BracketingResults),
    Certificates(CertificateResults),
    Entropy(EntropyResults),
    Fit(FitResults),
    Report(ReportResults),
}

impl ModeResults {
    pub fn verdict(&self, config: &ExperimentConfig) -> Option<Verdict> {
        let predicted = predicted_rate(&config.params).ok()?;
        let tol = config.tolerances.exponent;
        let make = |method: &str, power: Option<f64>, log: Option<f64>, extra: bool| Verdict {
            predicted,
            method: method.to_string(),
            fitted_power: power,
            fitted_log_power: log,
            tolerance: tol,
            pass: power.map(|p| (p - predicted.power).abs() <= tol && extra),
        };
        match self {
            ModeResults::Spectrum(r) => {
                Some(make("spectral", r.law.map(|l| l.power), r.law.map(|l| l.log_power), true))
            }
            ModeResults::Bracketing(r) => {
                let upper_ok = r.upper_law.is_none_or(|l| (l.power - predicted.power).abs() <= tol);
                let clean = r.sandwich_violations.is_empty() && r.violations == 0 && upper_ok;
                Some(make("certificate", r.lower_law.map(|l| l.power), r.lower_law.map(|l| l.log_power), clean))
            }
            ModeResults::Certificates(r) => Some(make(
                "certificate",
                r.law.map(|l| l.power),
                r.law.map(|l| l.log_power),
                r.unsound == 0 && r.above_spectral == 0,
            )),
            ModeResults::Entropy(r) => {
                Some(make("certificate", r.fit.map(|f| -f.kappa), r.fit.map(|f| f.rho), true))
            }
            ModeResults::Fit(r) => Some(make("fit", r.law.map(|l| l.power), r.law.map(|l| l.log_power), true)),
            ModeResults::Report(_) => None,
        }
    }
}

pub(super) fn execute(
    mode: Mode,
    config: &ExperimentConfig,
    dir: &Path,
    calibrations: &mut Vec<String>,
) -> Result<ModeResults> {
    fs::create_dir_all(dir)?;
    Ok(match mode {
        Mode::Spectrum => ModeResults::Spectrum(spectrum(config, dir)?),
        Mode::Bracketing => ModeResults::Bracketing(bracketing(config, dir, calibrations)?),
        Mode::Certificates => ModeResults::Certificates(certificates(config, dir, calibrations)?),
        Mode::Entropy => ModeResults::Entropy(entropy(config, dir)?),
        Mode::Fit => ModeResults::Fit(fit(config, dir)?),
        Mode::Report => ModeResults::Report(report(config, dir)?),
    })
}

fn solver(config: &ExperimentConfig) -> SolverOptions {
    SolverOptions { tolerance: config.tolerances.eigen, ..SolverOptions::default() }
}

/// The `k` smallest eigenpairs with residuals, on a mesh resolving them.
fn resolved_spectrum(config: &ExperimentConfig, k: usize) -> Result<(usize, SpectrumSlice)> {
    let opts = solver(config);
    let pencil = resolved_ball_pencil(&config.params, k, config.mesh.resolution, &AssemblyOptions::default())?;
    let lam = smallest_eigenvalues(&pencil, k, &opts)?;
    let cap = lam[k - 1] * (1.0 + 1e-9);
    let mut slice = eigs_below(&pencil, cap, &opts)?;
    slice.eigenvalues.truncate(k);
    slice.residuals.truncate(k);
    slice.blocks.truncate(k);
    Ok((pencil.dim(), slice))
}

fn counting_fit(samples: &[(f64, f64)]) -> (Option<RateFit>, Option<AkLaw>, Option<String>) {
    match fit_rate(FitModel::Counting, samples) {
        Ok(f) => (Some(f), invert_counting(&f).ok(), None),
        Err(e) => (None, None, Some(e.to_string())),
    }
}

fn spectrum(config: &ExperimentConfig, dir: &Path) -> Result<SpectrumResults> {
    let [k_lo, k_hi] = config.k_range();
    let (dim, slice) = resolved_spectrum(config, k_hi)?;
    slice.write_csv(File::create(dir.join("spectrum.csv"))?)?;
    let a = slice.approx_numbers();
    let (fit, law, fit_error) = match fit_sequence_counting(&a, k_lo, k_hi) {
        Ok(f) => (Some(f), invert_counting(&f).ok(), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    let predicted = predicted_rate(&config.params)?;
    let conditional_rho = if predicted.regime == Regime::Critical {
        fit_sequence_log_exponent(&a, k_lo, k_hi, predicted.kappa).ok().map(|f| f.rho)
    } else {
        None
    };
    Ok(SpectrumResults {
        dim,
        computed: slice.len(),
        max_residual: slice.max_residual(),
        k_range: [k_lo, k_hi],
        fit,
        law,
        conditional_rho,
        fit_error,
    })
}

fn factorized(config: &ExperimentConfig, calibrations: &mut Vec<String>) -> Result<Option<FactorizedCalibration>> {
    if config.calibration.skip_factorized {
        return Ok(None);
    }
    let cal = calibrate_factorized(&config.params, config.calibration.resolution, config.calibration.k_max)?;
    calibrations.push(format!(
        "factorized-bound: c = {:.6e}, cutoff constant = {:.6e}{}; {}",
        cal.c,
        cal.cutoff_constant,
        if cal.up_to_calibration { " (calibrated at p = 2, up to calibration)" } else { "" },
        cal.provenance
    ));
    Ok(Some(cal))
}

/// Lower bounds above upper bounds, per region and ε.
pub(crate) fn sandwich_violations(samples: &[CountingSample], key: &str) -> Vec<String> {
    let mut groups: BTreeMap<(String, u64), (u64, String, u64, String)> = BTreeMap::new();
    for s in samples {
        let g = groups
            .entry((s.region.clone(), s.epsilon.to_bits()))
            .or_insert((0, String::new(), u64::MAX, String::new()));
        for lo in [s.mu0_lo, s.nu0_lo].into_iter().flatten() {
            if lo > g.0 {
                g.0 = lo;
                g.1 = s.method.tag().to_string();
            }
        }
        if let Some(hi) = s.nu0_hi {
            if hi < g.2 {
                g.2 = hi;
                g.3 = s.method.tag().to_string();
            }
        }
    }
    groups
        .into_iter()
        .filter(|(_, g)| g.0 > g.2)
        .map(|((region, bits), g)| {
            format!("{key}{region} eps={}: {} lower {} > {} upper {}", f64::from_bits(bits), g.1, g.0, g.3, g.2)
        })
        .collect()
}

fn bracketing(config: &ExperimentConfig, dir: &Path, calibrations: &mut Vec<String>) -> Result<BracketingResults> {
    let params = config.params;
    let eps = config.epsilons();
    let opts = solver(config);
    let builder = CertificateBuilder::new(&params)?;
    let best: Vec<Mu0Certificate> = eps.iter().map(|&e| builder.best(e)).collect::<Result<_>>()?;
    let certified: Vec<u64> = best.iter().map(|c| c.dim).collect();
    let ball = Region::ball().label();
    let mut samples = Vec::new();
    let mut levels = Vec::new();
    if params.p == 2.0 {
        let lookup = |e: f64| -> Vec<(Method, u64)> {
            eps.iter().position(|&x| x == e).map_or_else(Vec::new, |i| vec![(Method::Certificate, certified[i])])
        };
        for j in config.levels() {
            let pencil = assemble_region(
                &params,
                &Region::ball(),
                config.mesh.resolution,
                Grading::Geometric { depth: j + config.mesh.depth_margin },
                &AssemblyOptions::default(),
            )?;
            let report = bracketing_check(&pencil, &annulus_regions(j), &eps, &lookup, &opts)?;
            samples.extend(report.samples(&format!("{ball}@J={j}")));
            levels.push(BracketingLevel { levels: j, violations: report.violations(), report });
        }
    }
    for (&e, &d) in eps.iter().zip(&certified) {
        samples.push(CountingSample {
            epsilon: e,
            region: ball.clone(),
            method: Method::Certificate,
            nu0_lo: None,
            nu0_hi: None,
            mu0_lo: Some(d),
        });
    }
    let mut upper_counts = Vec::new();
    if let Some(cal) = factorized(config, calibrations)? {
        for &e in &eps {
            let u = nu0_upper_factorized(&params, e, &cal)?;
            upper_counts.push((e, u as f64));
            samples.push(CountingSample {
                epsilon: e,
                region: ball.clone(),
                method: Method::FactorizedBound,
                nu0_lo: None,
                nu0_hi: Some(u),
                mu0_lo: None,
            });
        }
    }
    // Spectral counts for the whole ball enter the global sandwich too.
    if let Some(first) = levels.first() {
        for r in &first.report.rows {
            samples.push(CountingSample {
                epsilon: r.epsilon,
                region: ball.clone(),
                method: Method::Spectral,
                nu0_lo: Some(r.nu0),
                nu0_hi: Some(r.nu0),
                mu0_lo: Some(r.mu0),
            });
        }
    }
    write_counting_csv(&samples, File::create(dir.join("counting.csv"))?)?;
    let lower = fit_samples(&best);
    let (lower_fit, lower_law, lower_fit_error) = counting_fit(&lower);
    let (upper_fit, upper_law, upper_fit_error) = counting_fit(&upper_counts);
    Ok(BracketingResults {
        violations: levels.iter().map(|l| l.violations).sum(),
        sandwich_violations: sandwich_violations(&samples, ""),
        levels,
        samples,
        lower_fit,
        upper_fit,
        lower_law,
        upper_law,
        lower_fit_error,
        // No error when the factorized bound was skipped on purpose.
        upper_fit_error: upper_fit_error.filter(|_| !upper_counts.is_empty()),
    })
}

fn certificates(config: &ExperimentConfig, dir: &Path, _calibrations: &mut Vec<String>) -> Result<CertificateResults> {
    let params = config.params;
    let eps = config.epsilons();
    let builder = CertificateBuilder::new(&params)?;
    let critical = params.regime_sign() == std::cmp::Ordering::Equal;
    let mut certificates = Vec::new();
    let mut best = Vec::new();
    for &e in &eps {
        certificates.push(builder.build_s1(e)?);
        certificates.push(builder.build_s2(e)?);
        if critical {
            certificates.push(builder.build_s3(e)?);
        }
        best.push(builder.best(e)?);
    }
    // Spectral cross-check where an adapted mesh is affordable.
    let checkable: Vec<f64> = eps
        .iter()
        .copied()
        .filter(|&e| turning_depth(4.0 / (e * e), params.sigma, params.m) <= SPECTRAL_DEPTH_BUDGET)
        .collect();
    let spectral_nu0 = if params.p == 2.0 && params.n == 1 && !checkable.is_empty() {
        let e_min = checkable.iter().copied().fold(f64::INFINITY, f64::min);
        let pencil = assemble_region(
            &params,
            &Region::ball(),
            config.mesh.resolution,
            Grading::adapted(&params, 4.0 / (e_min * e_min)),
            &AssemblyOptions::default(),
        )?;
        Some(checkable.iter().map(|&e| Ok((e, nu0_spectral(&pencil, e)? as u64))).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let unsound = certificates.iter().filter(|c| !c.is_sound()).count();
    let above_spectral = spectral_nu0.as_ref().map_or(0, |nu| {
        certificates
            .iter()
            .filter(|c| nu.iter().any(|&(e, n)| e == c.epsilon && c.dim > n))
            .count()
    });
    let mut w = csv::Writer::from_writer(File::create(dir.join("certificates.csv"))?);
    w.write_record(["epsilon", "construction", "dim", "alpha_lower", "alpha_upper", "sound", "nu0_spectral"])
        .map_err(csv_err)?;
    for c in &certificates {
        let kind = match &c.subspace {
            crate::certificates::SubspaceDescriptor::S1 { .. } => "s1",
            crate::certificates::SubspaceDescriptor::S2 { .. } => "s2",
            crate::certificates::SubspaceDescriptor::S3 { .. } => "s3",
            crate::certificates::SubspaceDescriptor::Empty { .. } => "empty",
        };
        let nu = spectral_nu0
            .as_ref()
            .and_then(|v| v.iter().find(|x| x.0 == c.epsilon))
            .map_or(String::new(), |x| x.1.to_string());
        w.write_record([
            c.epsilon.to_string(),
            kind.to_string(),
            c.dim.to_string(),
            c.alpha_lower.to_string(),
            c.alpha_upper.to_string(),
            c.is_sound().to_string(),
            nu,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    fs::write(dir.join("certificates.json"), serde_json::to_string_pretty(&certificates)?)?;
    let (fit, law, fit_error) = counting_fit(&fit_samples(&best));
    Ok(CertificateResults { certificates, spectral_nu0, unsound, above_spectral, fit, law, fit_error })
}

/// Nonempty, uncapped certificates as `(ε, dim)` fit samples. A capped
/// search saturates and would flatten the fitted rate.
fn fit_samples(best: &[Mu0Certificate]) -> Vec<(f64, f64)> {
    best.iter().filter(|c| c.dim > 0 && !c.capped).map(|c| (c.epsilon, c.dim as f64)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    crate::spectral::csv_err(e)
}

/// Default family parameters per regime: levels for σ > m/n, cutoffs
/// (dyadic and 3·2^i) otherwise.
fn entropy_values(params: &EmbeddingParams) -> Vec<u32> {
    match params.regime_sign() {
        std::cmp::Ordering::Greater => (2..=2 + 14 / params.n).collect(),
        _ => (1..=8).flat_map(|i| [1u32 << i, 3 << (i - 1)]).chain([512]).collect(),
    }
}

fn entropy(config: &ExperimentConfig, dir: &Path) -> Result<EntropyResults> {
    let params = config.params;
    let values = config.grid.levels.clone().unwrap_or_else(|| entropy_values(&params));
    let family = entropy_family(&params, &values)?;
    let mut w = csv::Writer::from_writer(File::create(dir.join("entropy.csv"))?);
    w.write_record(["N", "lower_value", "construction"]).map_err(csv_err)?;
    for c in &family {
        let tag = match c.construction {
            crate::certificates::EntropyConstruction::SingleLevel { .. } => "single-level",
            crate::certificates::EntropyConstruction::MultiShell { .. } => "multi-shell",
            crate::certificates::EntropyConstruction::LimitingCase { .. } => "limiting-case",
        };
        w.write_record([c.n_index.to_string(), c.lower_value.to_string(), tag.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    let samples: Vec<(f64, f64)> =
        family.iter().filter(|c| c.n_index > 1).map(|c| (c.n_index as f64, c.lower_value)).collect();
    let (fit, fit_error) = match fit_rate(FitModel::Sequence, &samples) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (upper, upper_error) = if params.p == 2.0 && params.n == 1 {
        let [_, k_hi] = config.k_range();
        let (_, slice) = resolved_spectrum(config, k_hi)?;
        match entropy_upper_from_ak(&slice.approx_numbers(), DOUBLING_BAND) {
            Ok(u) => (Some(u), None),
            Err(Error::Precondition(msg)) => (None, Some(msg)),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    Ok(EntropyResults { family, fit, fit_error, upper, upper_error })
}

enum FitInput {
    /// `a_1, a_2, ...` from a spectrum table, fitted on the k side.
    Sequence(Vec<f64>),
    Samples(FitModel, Vec<(f64, f64)>),
}

/// Reads `(x, y)` pairs and the model from a CSV produced by this harness or
/// a plain `x,y` table.
fn read_fit_input(config: &ExperimentConfig) -> Result<FitInput> {
    let path = config.fit.input.as_ref().expect("validated");
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::config("fit.input", format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    let num = |row: &csv::StringRecord, i: usize| -> Result<Option<f64>> {
        let s = row.get(i).unwrap_or("");
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|_| Error::config("fit.input", format!("'{s}' is not a number")))
    };
    let pairs = |xi: usize, yi: usize, filter: &dyn Fn(&csv::StringRecord) -> bool| -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for row in rows.iter().filter(|r| filter(r)) {
            if let (Some(x), Some(y)) = (num(row, xi)?, num(row, yi)?) {
                out.push((x, y));
            }
        }
        Ok(out)
    };
    if let (Some(k), Some(a)) = (col("k"), col("a_k")) {
        return Ok(FitInput::Sequence(pairs(k, a, &|_| true)?.into_iter().map(|(_, a)| a).collect()));
    }
    if let (Some(e), Some(hi), Some(m)) = (col("epsilon"), col("nu0_hi"), col("method")) {
        let s = pairs(e, hi, &|r| r.get(m) == Some("spectral"))?;
        return Ok(FitInput::Samples(FitModel::Counting, s));
    }
    if let (Some(n), Some(v)) = (col("N"), col("lower_value")) {
        return Ok(FitInput::Samples(FitModel::Sequence, pairs(n, v, &|_| true)?));
    }
    if let (Some(x), Some(y)) = (col("x"), col("y")) {
        let model = match config.fit.model.unwrap_or(FitInputModel::Counting) {
            FitInputModel::Counting => FitModel::Counting,
            FitInputModel::Sequence => FitModel::Sequence,
        };
        return Ok(FitInput::Samples(model, pairs(x, y, &|_| true)?));
    }
    Err(Error::config("fit.input", format!("unrecognized columns {headers:?}")))
}

fn fit(config: &ExperimentConfig, dir: &Path) -> Result<FitResults> {
    let (model, fit) = match read_fit_input(config)? {
        FitInput::Sequence(a) => {
            let [lo, hi] = config.k_range();
            (FitModel::Counting, fit_sequence_counting(&a, lo, hi)?)
        }
        FitInput::Samples(model, samples) => (model, fit_rate(model, &samples)?),
    };
    let law = if model == FitModel::Counting { invert_counting(&fit).ok() } else { None };
    let out = FitResults { model, fit, law };
    fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

fn report(config: &ExperimentConfig, dir: &Path) -> Result<ReportResults> {
    let source = config.report.source.as_ref().expect("validated");
    let records = load_records(source)?;
    let mut rows = Vec::new();
    let mut sandwich = Vec::new();
    let mut failed = 0;
    for r in &records {
        if r.mode == Mode::Report {
            continue;
        }
        if r.exit_code() != 0 {
            failed += 1;
        }
        if let Some(v) = &r.verdict {
            rows.push(RegimeRow {
                params: r.config.params,
                prediction: v.predicted,
                method: format!("{}/{}", r.mode.tag(), v.method),
                fitted_power: v.fitted_power,
                fitted_log_power: v.fitted_log_power,
                tolerance: v.tolerance,
            });
        }
        if let Some(ModeResults::Bracketing(b)) = &r.results {
            let p = r.config.params;
            sandwich.extend(sandwich_violations(&b.samples, &format!("n={} m={} p={} sigma={} ", p.n, p.m, p.p, p.sigma)));
        }
    }
    let table = regime_table(&rows);
    fs::write(dir.join("report.txt"), &table)?;
    let out = ReportResults { records: records.len(), failed, rows, table, sandwich_violations: sandwich };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}
