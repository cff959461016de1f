//! Experiment configuration: TOML ingestion, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FieldError, Result};
use crate::geometry::EmbeddingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Spectrum,
    Bracketing,
    Certificates,
    Entropy,
    Fit,
    Report,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Spectrum => "spectrum",
            Mode::Bracketing => "bracketing",
            Mode::Certificates => "certificates",
            Mode::Entropy => "entropy",
            Mode::Fit => "fit",
            Mode::Report => "report",
        }
    }
}

/// Geometric ε-range `hi, ..., lo` with `count` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsRange {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Explicit ε values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_range: Option<EpsRange>,
    /// Inclusive `[k_lo, k_hi]` for sequence fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_range: Option<[usize; 2]>,
    /// Decomposition levels `J` (bracketing) or family parameters (entropy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Elements per local wavelength (adapted) or per octave (geometric).
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Extra octaves of geometric mesh below the deepest shell.
    #[serde(default = "default_depth_margin")]
    pub depth_margin: u32,
}

fn default_resolution() -> usize {
    8
}

fn default_depth_margin() -> u32 {
    12
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { resolution: default_resolution(), depth_margin: default_depth_margin() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative eigen-residual bound.
    #[serde(default = "default_eigen_tol")]
    pub eigen: f64,
    /// Allowed deviation of a fitted exponent from the predicted one.
    #[serde(default = "default_exponent_tol")]
    pub exponent: f64,
}

fn default_eigen_tol() -> f64 {
    1e-9
}

fn default_exponent_tol() -> f64 {
    0.1
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { eigen: default_eigen_tol(), exponent: default_exponent_tol() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Elements per octave of the annulus pencils used for `c`.
    #[serde(default = "default_cal_resolution")]
    pub resolution: usize,
    /// Approximation numbers per annulus entering `c`.
    #[serde(default = "default_cal_k")]
    pub k_max: usize,
    /// Skip the factorized upper bound.
    #[serde(default)]
    pub skip_factorized: bool,
}

fn default_cal_resolution() -> usize {
    16
}

fn default_cal_k() -> usize {
    40
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { resolution: default_cal_resolution(), k_max: default_cal_k(), skip_factorized: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitInputModel {
    Counting,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV to fit: a spectrum, counting or entropy table, or plain `x,y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Model for plain `x,y` input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<FitInputModel>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Directory holding run directories to summarize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<f64>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.n.is_empty() && self.m.is_empty() && self.p.is_empty() && self.sigma.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// One experiment. Every table except `params` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub params: EmbeddingParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default, skip_serializing_if = "SweepConfig::is_empty")]
    pub sweep: SweepConfig,
    /// Not part of the experiment identity.
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

/// Default `k` range for spectral fits.
pub const DEFAULT_K_RANGE: [usize; 2] = [10, 500];
/// Default decomposition levels for bracketing.
pub const DEFAULT_LEVELS: [u32; 3] = [2, 4, 8];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or("config".to_string(), |s| format!("config[{}..{}]", s.start, s.end));
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative input paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.fit.input.as_mut(), cfg.report.source.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.ok_or_else(|| Error::config("mode", "no mode given in the config or on the command line"))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The ε-grid, largest first.
    pub fn epsilons(&self) -> Vec<f64> {
        let mut out = self.grid.epsilon.clone().unwrap_or_default();
        if let Some(r) = self.grid.epsilon_range {
            if r.count == 1 {
                out.push(r.hi);
            } else {
                out.extend((0..r.count).map(|i| r.hi * (r.lo / r.hi).powf(i as f64 / (r.count - 1) as f64)));
            }
        }
        out.sort_by(|a, b| b.total_cmp(a));
        out
    }

    pub fn k_range(&self) -> [usize; 2] {
        self.grid.k_range.unwrap_or(DEFAULT_K_RANGE)
    }

    pub fn levels(&self) -> Vec<u32> {
        self.grid.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec())
    }

    /// Checks every field against the preconditions of the selected mode and
    /// reports all offending fields at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, msg: String| errs.push(FieldError::new(field, msg));
        let mode = match self.mode {
            Some(m) => Some(m),
            None => {
                bad("mode", "no mode given in the config or on the command line".into());
                None
            }
        };
        let p = &self.params;
        if p.n < 1 {
            bad("params.n", "must be at least 1".into());
        }
        if p.m < 1 {
            bad("params.m", "must be at least 1".into());
        }
        if !(p.p >= 1.0 && p.p.is_finite()) {
            bad("params.p", format!("{} must satisfy 1 <= p < inf", p.p));
        }
        if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
            bad("params.sigma", format!("{} must be finite and >= 0", p.sigma));
        }
        let needs_compact = matches!(mode, Some(Mode::Spectrum | Mode::Bracketing | Mode::Certificates | Mode::Entropy));
        if needs_compact && p.sigma == 0.0 {
            bad("params.sigma", "must be positive: the embedding is not compact at sigma = 0".into());
        }
        let p2 = p.p == 2.0;
        if mode == Some(Mode::Spectrum) && !p2 {
            bad("params.p", "spectrum mode discretizes p = 2 only".into());
        }
        if matches!(mode, Some(Mode::Spectrum | Mode::Bracketing)) && p.n != 1 {
            bad("params.n", "the spectral discretization covers n = 1".into());
        }
        if let Some(v) = &self.grid.epsilon {
            if let Some(e) = v.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                bad("grid.epsilon", format!("{e} is not a positive threshold"));
            }
        }
        if let Some(r) = self.grid.epsilon_range {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                bad("grid.epsilon_range", format!("need 0 < lo <= hi, got [{}, {}]", r.lo, r.hi));
            }
            if r.count == 0 {
                bad("grid.epsilon_range.count", "must be at least 1".into());
            }
        }
        if matches!(mode, Some(Mode::Bracketing | Mode::Certificates)) && self.epsilons().is_empty() {
            bad("grid.epsilon", "the epsilon grid is empty".into());
        }
        if let Some([lo, hi]) = self.grid.k_range {
            if !(1 <= lo && lo < hi) {
                bad("grid.k_range", format!("need 1 <= k_lo < k_hi, got [{lo}, {hi}]"));
            }
            if hi > 20_000 {
                bad("grid.k_range", format!("k_hi = {hi} exceeds the supported 20000"));
            }
        }
        if let Some(l) = &self.grid.levels {
            if l.is_empty() {
                bad("grid.levels", "must not be empty".into());
            }
            if l.iter().any(|&j| j == 0 || j > 64) {
                bad("grid.levels", "levels must lie in 1..=64".into());
            }
            if mode == Some(Mode::Entropy) && p.regime_sign() == std::cmp::Ordering::Equal && l.iter().any(|&j| j < 2) {
                bad("grid.levels", "the limiting-case family needs J >= 2".into());
            }
        }
        if !(1..=1000).contains(&self.mesh.resolution) {
            bad("mesh.resolution", format!("{} outside 1..=1000", self.mesh.resolution));
        }
        if self.mesh.depth_margin > 60 {
            bad("mesh.depth_margin", "at most 60 octaves".into());
        }
        if !(self.tolerances.eigen > 0.0 && self.tolerances.eigen < 1.0) {
            bad("tolerances.eigen", format!("{} outside (0, 1)", self.tolerances.eigen));
        }
        if !(self.tolerances.exponent > 0.0 && self.tolerances.exponent.is_finite()) {
            bad("tolerances.exponent", "must be positive".into());
        }
        if !(1..=1000).contains(&self.calibration.resolution) {
            bad("calibration.resolution", format!("{} outside 1..=1000", self.calibration.resolution));
        }
        if self.calibration.k_max == 0 {
            bad("calibration.k_max", "must be at least 1".into());
        }
        if mode == Some(Mode::Fit) && self.fit.input.is_none() {
            bad("fit.input", "fit mode needs an input CSV".into());
        }
        if mode == Some(Mode::Report) && self.report.source.is_none() {
            bad("report.source", "report mode needs a source directory".into());
        }
        if self.sweep.n.contains(&0) {
            bad("sweep.n", "values must be at least 1".into());
        }
        if self.sweep.m.contains(&0) {
            bad("sweep.m", "values must be at least 1".into());
        }
        if self.sweep.p.iter().any(|x| !(*x >= 1.0 && x.is_finite())) {
            bad("sweep.p", "values must satisfy 1 <= p < inf".into());
        }
        if self.sweep.sigma.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            bad("sweep.sigma", "values must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// One config per point of the sweep grid, in grid order.
    pub fn expand_sweep(&self) -> Result<Vec<ExperimentConfig>> {
        if self.sweep.is_empty() {
            return Err(Error::config("sweep", "the sweep grid is empty"));
        }
        let pick = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let picku = |v: &Vec<u32>, d: u32| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &n in &picku(&self.sweep.n, self.params.n) {
            for &m in &picku(&self.sweep.m, self.params.m) {
                for &p in &pick(&self.sweep.p, self.params.p) {
                    for &sigma in &pick(&self.sweep.sigma, self.params.sigma) {
                        let mut c = self.clone();
                        c.sweep = SweepConfig::default();
                        c.params = EmbeddingParams { n, m, p, sigma };
                        out.push(c);
                    }
                }
            }
        }
        Ok(out)
    }
}
