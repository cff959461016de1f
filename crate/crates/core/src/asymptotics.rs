//! Rate fitting, inversion of counting laws into `a_k` laws, the Carl-type
//! route from `a_k` to entropy upper bounds, and the predicted regime table.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingParams;

/// Which side of the asymptotic relation the samples describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// `(ε, N)` with `N ≈ C ε^{-κ} |ln ε|^ρ`.
    Counting,
    /// `(k, v)` with `v ≈ C k^κ (ln k)^ρ`.
    Sequence,
}

/// Samples that entered a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRange {
    pub x_min: f64,
    pub x_max: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: FitModel,
    pub kappa: f64,
    pub rho: f64,
    /// `ln C`.
    pub log_constant: f64,
    /// Largest relative deviation of the fitted law from the samples.
    pub residual: f64,
    pub range: FitRange,
    /// The two-regressor estimate before ρ zeroing.
    pub raw_kappa: f64,
    pub raw_rho: f64,
    pub rho_zeroed: bool,
}

impl RateFit {
    /// The fitted law at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let (u, v) = regressors(self.model, x);
        (self.log_constant + self.kappa * u + self.rho * v).exp()
    }
}

/// `|ρ|` below which the log exponent is reported as 0.
pub const RHO_ZERO_THRESHOLD: f64 = 0.15;

/// Minimum number of samples and decades spanned by a fit.
pub const MIN_FIT_SAMPLES: usize = 8;
pub const MIN_FIT_DECADES: f64 = 2.0;
/// Decades of `k` required by the k-side fits of a computed sequence. Lower
/// than [`MIN_FIT_DECADES`] so the standard window `k ∈ [10, 500]` is usable.
pub const MIN_INDEX_DECADES: f64 = 1.5;

/// Which coordinate must span the required decades.
#[derive(Debug, Clone, Copy)]
enum Span {
    Abscissa(f64),
    Count(f64),
}

fn regressors(model: FitModel, x: f64) -> (f64, f64) {
    match model {
        FitModel::Counting => {
            let u = -x.ln();
            (u, u.ln())
        }
        FitModel::Sequence => {
            let u = x.ln();
            (u, u.ln())
        }
    }
}

fn check_samples(model: FitModel, samples: &[(f64, f64)], span: Span) -> Result<FitRange> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::Range(format!("{} samples, need at least {MIN_FIT_SAMPLES}", samples.len())));
    }
    for &(x, y) in samples {
        let ok_x = match model {
            FitModel::Counting => x > 0.0 && x < 1.0,
            FitModel::Sequence => x > 1.0 && x.is_finite(),
        };
        if !ok_x || !(y > 0.0 && y.is_finite()) {
            return Err(Error::Range(format!("sample ({x}, {y}) outside the fit domain")));
        }
    }
    let x_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let x_max = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let (lo, hi, need, axis) = match span {
        Span::Abscissa(d) => (x_min, x_max, d, "samples"),
        Span::Count(d) => (
            samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min),
            samples.iter().map(|s| s.1).fold(0.0, f64::max),
            d,
            "indices",
        ),
    };
    if (hi / lo).log10() < need {
        return Err(Error::Range(format!("{axis} span {:.2} decades, need {need}", (hi / lo).log10())));
    }
    Ok(FitRange { x_min, x_max, samples: samples.len() })
}

/// Least squares for `y ≈ X β` with columns scaled to unit norm.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    let scales: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)).collect();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i] / scales[j]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let beta = svd
        .solve(&DVector::from_column_slice(y), 1e-13 * smax)
        .map_err(|e| Error::Range(format!("degenerate fit design: {e}")))?;
    Ok(beta.iter().zip(&scales).map(|(b, s)| b / s).collect())
}

fn fit_with(model: FitModel, samples: &[(f64, f64)], range: FitRange, with_log: bool, kappa: Option<f64>) -> Result<(f64, f64, f64)> {
    let (us, vs): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| regressors(model, s.0)).unzip();
    let mut y: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mut cols = vec![vec![1.0; range.samples]];
    if let Some(k) = kappa {
        for (yi, u) in y.iter_mut().zip(&us) {
            *yi -= k * u;
        }
    } else {
        cols.push(us);
    }
    if with_log {
        cols.push(vs);
    }
    let beta = least_squares(&cols, &y)?;
    let kappa_hat = kappa.unwrap_or(beta[1]);
    let rho = if with_log { *beta.last().expect("log column") } else { 0.0 };
    Ok((beta[0], kappa_hat, rho))
}

fn finish(model: FitModel, samples: &[(f64, f64)], range: FitRange, c: f64, kappa: f64, rho: f64, raw: (f64, f64), zeroed: bool) -> RateFit {
    let mut fit = RateFit {
        model,
        kappa,
        rho,
        log_constant: c,
        residual: 0.0,
        range,
        raw_kappa: raw.0,
        raw_rho: raw.1,
        rho_zeroed: zeroed,
    };
    fit.residual = samples.iter().map(|&(x, y)| (fit.eval(x) / y - 1.0).abs()).fold(0.0, f64::max);
    fit
}

/// Two-regressor fit of `ln y` against `(ln u, ln ln u)`, with `u = 1/ε` for
/// counting samples and `u = k` for sequences. When `|ρ|` falls below
/// [`RHO_ZERO_THRESHOLD`] the law is refitted without the log term and ρ is
/// reported as 0.
pub fn fit_rate(model: FitModel, samples: &[(f64, f64)]) -> Result<RateFit> {
    fit_checked(model, samples, check_samples(model, samples, Span::Abscissa(MIN_FIT_DECADES))?)
}

fn fit_checked(model: FitModel, samples: &[(f64, f64)], range: FitRange) -> Result<RateFit> {
    let (c, kappa, rho) = fit_with(model, samples, range, true, None)?;
    if rho.abs() < RHO_ZERO_THRESHOLD {
        let (c0, k0, _) = fit_with(model, samples, range, false, None)?;
        return Ok(finish(model, samples, range, c0, k0, 0.0, (kappa, rho), true));
    }
    Ok(finish(model, samples, range, c, kappa, rho, (kappa, rho), false))
}

/// Log exponent with the power held at `kappa`.
pub fn fit_log_exponent(model: FitModel, samples: &[(f64, f64)], kappa: f64) -> Result<RateFit> {
    let range = check_samples(model, samples, Span::Abscissa(MIN_FIT_DECADES))?;
    let (c, _, rho) = fit_with(model, samples, range, true, Some(kappa))?;
    Ok(finish(model, samples, range, c, kappa, rho, (kappa, rho), false))
}

/// Counting samples `(a_k, k)` from a decreasing sequence `a_1, a_2, ...`,
/// keeping `k` in `[k_lo, k_hi]`.
pub fn counting_samples_from_sequence(a: &[f64], k_lo: usize, k_hi: usize) -> Vec<(f64, f64)> {
    a.iter()
        .enumerate()
        .map(|(i, &v)| (i + 1, v))
        .filter(|&(k, _)| k >= k_lo && k <= k_hi)
        .map(|(k, v)| (v, k as f64))
        .collect()
}

/// Counting-side fit of `(a_k, k)` over `k ∈ [k_lo, k_hi]`, requiring
/// [`MIN_INDEX_DECADES`] of `k` rather than decades of `a_k`.
pub fn fit_sequence_counting(a: &[f64], k_lo: usize, k_hi: usize) -> Result<RateFit> {
    let samples = counting_samples_from_sequence(a, k_lo, k_hi);
    let range = check_samples(FitModel::Counting, &samples, Span::Count(MIN_INDEX_DECADES))?;
    fit_checked(FitModel::Counting, &samples, range)
}

/// [`fit_log_exponent`] on `(a_k, k)` with the span rule of
/// [`fit_sequence_counting`].
pub fn fit_sequence_log_exponent(a: &[f64], k_lo: usize, k_hi: usize, kappa: f64) -> Result<RateFit> {
    let samples = counting_samples_from_sequence(a, k_lo, k_hi);
    let range = check_samples(FitModel::Counting, &samples, Span::Count(MIN_INDEX_DECADES))?;
    let (c, _, rho) = fit_with(FitModel::Counting, &samples, range, true, Some(kappa))?;
    Ok(finish(FitModel::Counting, &samples, range, c, kappa, rho, (kappa, rho), false))
}

/// `a_k ∼ k^{-power} (ln k)^{log_power}`, with the constant that makes the
/// forward counting law return `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AkLaw {
    pub power: f64,
    pub log_power: f64,
    pub log_constant: f64,
}

impl AkLaw {
    pub fn eval(&self, k: f64) -> f64 {
        (self.log_constant - self.power * k.ln() + self.log_power * k.ln().ln()).exp()
    }
}

/// Inverts `ν(ε) ∼ ε^{-κ}|ln ε|^ρ` into `a_k ∼ k^{-1/κ}(ln k)^{ρ/κ}`.
pub fn invert_counting(fit: &RateFit) -> Result<AkLaw> {
    if fit.model != FitModel::Counting {
        return Err(Error::domain("only counting fits can be inverted"));
    }
    if !(fit.kappa > 0.0) {
        return Err(Error::domain(format!("kappa = {} must be positive", fit.kappa)));
    }
    let (kappa, rho) = (fit.kappa, fit.rho);
    // ν(a_k) = C D^{-κ} κ^{-ρ} k (1 + o(1)) for a_k = D k^{-1/κ} (ln k)^{ρ/κ}.
    Ok(AkLaw {
        power: 1.0 / kappa,
        log_power: rho / kappa,
        log_constant: (fit.log_constant - rho * kappa.ln()) / kappa,
    })
}

/// Range of `ν(a_k) / k` over `ks`, with `ν` the fitted counting law and
/// `a_k` its inversion. Bounded ratios confirm the inversion.
pub fn inversion_ratio_range(fit: &RateFit, law: &AkLaw, ks: &[f64]) -> (f64, f64) {
    ks.iter()
        .map(|&k| fit.eval(law.eval(k)) / k)
        .fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl Regime {
    pub fn of(params: &EmbeddingParams) -> Self {
        match params.regime_sign() {
            Ordering::Less => Regime::Subcritical,
            Ordering::Equal => Regime::Critical,
            Ordering::Greater => Regime::Supercritical,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        }
    }
}

/// Predicted laws; `a_k` and `e_k` share one table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimePrediction {
    pub regime: Regime,
    /// `a_k, e_k ∼ k^{-power} (ln k)^{log_power}`.
    pub power: f64,
    pub log_power: f64,
    /// `ν₀(ε) ∼ ε^{-kappa} |ln ε|^{rho}`.
    pub kappa: f64,
    pub rho: f64,
}

impl RegimePrediction {
    pub fn describe(&self) -> String {
        if self.log_power == 0.0 {
            format!("k^-{}", fmt_num(self.power))
        } else {
            format!("k^-{} (log k)^{}", fmt_num(self.power), fmt_num(self.log_power))
        }
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn predicted_rate(params: &EmbeddingParams) -> Result<RegimePrediction> {
    params.validate()?;
    if !params.is_compact() {
        return Err(Error::NonCompact("sigma = 0: the embedding is not compact".into()));
    }
    let crit = params.critical_sigma();
    let regime = Regime::of(params);
    Ok(match regime {
        Regime::Supercritical => RegimePrediction { regime, power: crit, log_power: 0.0, kappa: 1.0 / crit, rho: 0.0 },
        Regime::Critical => RegimePrediction { regime, power: crit, log_power: crit, kappa: 1.0 / crit, rho: 1.0 },
        Regime::Subcritical => {
            RegimePrediction { regime, power: params.sigma, log_power: 0.0, kappa: 1.0 / params.sigma, rho: 0.0 }
        }
    })
}

/// Default band for the doubling ratios `a_{2^{j-1}} / a_{2^j}`.
pub const DOUBLING_BAND: (f64, f64) = (1.0, 4.0);

/// Entropy upper-bound samples `e_k <= c · a_k`, with `c` unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyUpper {
    /// `(k, a_k)`; the bound is `c · a_k`.
    pub samples: Vec<(u64, f64)>,
    /// `(j, a_{2^{j-1}} / a_{2^j})`.
    pub doubling: Vec<(u32, f64)>,
    pub calibration: String,
    /// Fitted `k`-exponent of the bound, when the samples allow a fit.
    pub exponent: Option<RateFit>,
}

/// Carl-type route: accepts `a_1, a_2, ...` only when every doubling ratio
/// lies in `band`, then emits the bound samples.
pub fn entropy_upper_from_ak(a: &[f64], band: (f64, f64)) -> Result<EntropyUpper> {
    if a.len() < 2 {
        return Err(Error::Range("need at least a_1 and a_2".into()));
    }
    let mut doubling = Vec::new();
    let mut bad = Vec::new();
    let mut j = 1u32;
    while (1usize << j) <= a.len() {
        let r = a[(1usize << (j - 1)) - 1] / a[(1usize << j) - 1];
        if !(band.0 <= r && r <= band.1) {
            bad.push(format!("j={j} (ratio {r:.4})"));
        }
        doubling.push((j, r));
        j += 1;
    }
    if !bad.is_empty() {
        return Err(Error::Precondition(format!(
            "doubling ratios outside [{}, {}]: {}",
            band.0,
            band.1,
            bad.join(", ")
        )));
    }
    let samples: Vec<(u64, f64)> = a.iter().enumerate().map(|(i, &v)| ((i + 1) as u64, v)).collect();
    let fit_samples: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.0 >= 10).map(|&(k, v)| (k as f64, v)).collect();
    Ok(EntropyUpper {
        samples,
        doubling,
        calibration: "e_k <= c a_k with an unspecified universal constant c".into(),
        exponent: fit_rate(FitModel::Sequence, &fit_samples).ok(),
    })
}

/// One row of the regime summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub params: EmbeddingParams,
    pub prediction: RegimePrediction,
    /// Method tag of the fitted number, e.g. `spectral` or `certificate`.
    pub method: String,
    /// Fitted `a_k` power, when available.
    pub fitted_power: Option<f64>,
    pub fitted_log_power: Option<f64>,
    pub tolerance: f64,
}

impl RegimeRow {
    pub fn passes(&self) -> Option<bool> {
        self.fitted_power.map(|f| (f - self.prediction.power).abs() <= self.tolerance)
    }
}

/// Plain-text table comparing fitted and predicted exponents.
pub fn regime_table(rows: &[RegimeRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3} {:>3} {:>5} {:>7}  {:<13} {:<22} {:<10} {:>8} {:>8}  status",
        "n", "m", "p", "sigma", "regime", "predicted a_k, e_k", "method", "power", "log"
    );
    for r in rows {
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        let status = match r.passes() {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "n/a",
        };
        let _ = writeln!(
            out,
            "{:>3} {:>3} {:>5} {:>7}  {:<13} {:<22} {:<10} {:>8} {:>8}  {}",
            r.params.n,
            r.params.m,
            fmt_num(r.params.p),
            fmt_num(r.params.sigma),
            r.prediction.regime.tag(),
            r.prediction.describe(),
            r.method,
            opt(r.fitted_power),
            opt(r.fitted_log_power),
            status
        );
    }
    out
}
