use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsob_core::harness::{self, ExperimentConfig, ExperimentRecord, Mode, ModeResults, RunStatus};
use wsob_core::Error;

#[derive(Parser)]
#[command(name = "wsob", version, about = "Weighted Sobolev embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral a_k on the ball (p = 2, n = 1) and their rate fit.
    Spectrum(Common),
    /// Counting functions over annulus decompositions with the sandwich check.
    Bracketing(Common),
    /// Subspace certificates for μ₀(ε), any p.
    Certificates(Common),
    /// Entropy-number lower families and the a_k upper route.
    Entropy(Common),
    /// Rate fit of a stored CSV.
    Fit(Common),
    /// Regime table over a directory of stored runs.
    Report(Common),
    /// Runs the config's mode over its [sweep] grid.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output root; run directories are created below it.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Exponent tolerance for the pass/fail verdict.
    #[arg(long, value_name = "T")]
    tolerance: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match &cli.command {
        Command::Spectrum(c) => (Some(Mode::Spectrum), c),
        Command::Bracketing(c) => (Some(Mode::Bracketing), c),
        Command::Certificates(c) => (Some(Mode::Certificates), c),
        Command::Entropy(c) => (Some(Mode::Entropy), c),
        Command::Fit(c) => (Some(Mode::Fit), c),
        Command::Report(c) => (Some(Mode::Report), c),
        Command::Sweep(c) => (None, c),
    };
    match execute(mode, common) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report_error(e: &Error) {
    match e {
        Error::Config(fields) => {
            eprintln!("error: invalid configuration");
            for f in fields {
                eprintln!("  {}: {}", f.field, f.message);
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn execute(mode: Option<Mode>, common: &Common) -> Result<u8, Error> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(m) = mode {
        config.mode = Some(m);
    }
    if let Some(t) = common.tolerance {
        config.tolerances.exponent = t;
    }
    let out = harness::output_root(&config, common.out.as_deref());
    if mode.is_none() {
        return run_sweep(&config, &out);
    }
    let outcome = harness::run(&config, &out)?;
    print_record(&outcome.record, &outcome.dir);
    Ok(outcome.record.exit_code() as u8)
}

fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<u8, Error> {
    let summary = harness::sweep(config, out)?;
    println!("sweep {} ({} points) -> {}", summary.template_hash, summary.entries.len(), out.display());
    let mut failed = 0;
    for e in &summary.entries {
        let p = e.params;
        let status = match &e.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Failed { message, .. } => {
                failed += 1;
                format!("FAILED: {message}")
            }
        };
        let verdict = e.verdict.as_ref().map_or(String::new(), |v| {
            format!(
                " {} predicted {} fitted {} [{}]",
                v.predicted.regime.tag(),
                v.predicted.describe(),
                v.fitted_power.map_or("-".into(), |x| format!("{x:.3}")),
                match v.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "n/a",
                }
            )
        });
        println!("  {} n={} m={} p={} sigma={}: {status}{verdict}", e.config_hash, p.n, p.m, p.p, p.sigma);
    }
    Ok(if failed > 0 { 2 } else { 0 })
}

fn print_record(r: &ExperimentRecord, dir: &Path) {
    let p = r.config.params;
    println!("{} run {} (n={} m={} p={} sigma={})", r.mode.tag(), r.config_hash, p.n, p.m, p.p, p.sigma);
    println!("  output: {}", dir.display());
    if let RunStatus::Failed { message, exit_code } = &r.status {
        println!("  FAILED (exit {exit_code}): {message}");
        if r.partial.is_some() {
            println!("  partial results stored in record.json");
        }
        return;
    }
    match &r.results {
        Some(ModeResults::Spectrum(s)) => {
            println!("  eigenpairs: {} (dim {}, max residual {:.2e})", s.computed, s.dim, s.max_residual);
            if let Some(e) = &s.fit_error {
                println!("  fit: {e}");
            }
            if let Some(rho) = s.conditional_rho {
                println!("  log exponent at the predicted power: {rho:.3}");
            }
        }
        Some(ModeResults::Bracketing(b)) => {
            println!(
                "  levels: {}, samples: {}, bracketing violations: {}, sandwich violations: {}",
                b.levels.len(),
                b.samples.len(),
                b.violations,
                b.sandwich_violations.len()
            );
            for v in &b.sandwich_violations {
                println!("    {v}");
            }
            for e in b.lower_fit_error.iter().chain(&b.upper_fit_error) {
                println!("  fit: {e}");
            }
        }
        Some(ModeResults::Certificates(c)) => {
            println!(
                "  certificates: {}, unsound: {}, above spectral: {}",
                c.certificates.len(),
                c.unsound,
                c.above_spectral
            );
            if let Some(e) = &c.fit_error {
                println!("  fit: {e}");
            }
        }
        Some(ModeResults::Entropy(e)) => {
            println!("  family members: {}", e.family.len());
            if let Some(err) = &e.fit_error {
                println!("  fit: {err}");
            }
            if let Some(err) = &e.upper_error {
                println!("  upper route: {err}");
            }
        }
        Some(ModeResults::Fit(f)) => {
            println!(
                "  kappa {:.4} rho {:.4} (residual {:.2e}, {} samples)",
                f.fit.kappa, f.fit.rho, f.fit.residual, f.fit.range.samples
            );
        }
        Some(ModeResults::Report(rep)) => {
            println!("  records: {} ({} failed)", rep.records, rep.failed);
            print!("{}", rep.table);
            for v in &rep.sandwich_violations {
                println!("  sandwich violation: {v}");
            }
        }
        None => {}
    }
    if let Some(v) = &r.verdict {
        let fitted = match (v.fitted_power, v.fitted_log_power) {
            (Some(a), Some(b)) => format!("k^-{a:.3} (log k)^{b:.3}"),
            (Some(a), None) => format!("k^-{a:.3}"),
            _ => "no fit".into(),
        };
        let pass = match v.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "n/a",
        };
        println!(
            "  [{}] {}: predicted {}, fitted {} (tol {}) {pass}",
            v.method,
            v.predicted.regime.tag(),
            v.predicted.describe(),
            fitted,
            v.tolerance
        );
    }
}
