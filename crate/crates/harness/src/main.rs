use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nhcz::decomposition::{cz_decompose, verify_cz, verify_whitney, whitney, CzOptions, OpenSet, WhitneyOptions};
use nhcz::geometry::{generate, Generator};
use nhcz::maximal::{maximal_at, Integrand, MaximalKind, MaximalSpec};
use nhcz::operators::atoms_of;
use nhcz::{AtomicMeasure, Execution};
use nhcz_harness::{run_suite, SuiteConfig, SuiteReport};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nhcz", version, about = "Bilinear Calderón–Zygmund checks over atomic measures")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Cantor4,
    Cantor1d,
    Uniform,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Cz,
    Whitney,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a fixture measure as JSON.
    Gen {
        #[arg(long, value_enum, default_value = "cantor4")]
        kind: Kind,
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `measure.json`; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run inequality suites and emit a report.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `all` or a comma separated list of check names.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        sigma: Option<u32>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        lambda0: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Directory for `report.json` and `report.csv`; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Calderón–Zygmund or Whitney decomposition of a measure file.
    Decompose {
        /// Reference measure μ.
        #[arg(long)]
        measure: PathBuf,
        /// Measure ν to decompose; μ itself when absent.
        #[arg(long)]
        nu: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "cz")]
        method: Method,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failures caused by what the user supplied, reported with exit code 2.
#[derive(Debug)]
struct InputError(anyhow::Error);

fn input<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure::Input(InputError(e)))
}

enum Failure {
    Input(InputError),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn emit(out: Option<&Path>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let p = dir.join(file);
            fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_measure(path: &Path) -> Result<AtomicMeasure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

fn run(cli: Cli) -> std::result::Result<bool, Failure> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.cmd {
        Cmd::Gen { kind, level, dim, count, seed, out } => {
            let g = match kind {
                Kind::Cantor4 => Generator::Cantor4 { level },
                Kind::Cantor1d => Generator::Cantor1d { level },
                Kind::Uniform => Generator::Uniform { dim, count },
                Kind::Random => Generator::Random { dim, count, seed },
            };
            let mu = input(generate(&g).map_err(Into::into))?;
            let mut text = mu.to_json();
            text.push('\n');
            emit(out.as_deref(), "measure.json", &text)?;
            Ok(true)
        }
        Cmd::Check { config, suite, seed, m, alpha, gamma, sigma, theta, lambda0, trials, out, format } => {
            let mut cfg = match &config {
                Some(p) => input(SuiteConfig::from_path(p))?,
                None => SuiteConfig::default(),
            };
            if suite != "all" {
                cfg.checks = suite.split(',').map(|s| s.trim().to_string()).collect();
            }
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = $f { cfg.$f = v; } )* };
            }
            set!(seed, m, alpha, gamma, sigma, theta, lambda0, trials);
            input(cfg.validate())?;
            let rep = run_suite(&cfg, exec)?;
            for c in &rep.checks {
                eprintln!("{:<24} {:>14.6e}  {}  ({:.2?})", c.name, c.constant, if c.pass { "pass" } else { "FAIL" }, c.elapsed);
            }
            match (&out, format) {
                (Some(dir), _) => {
                    emit(Some(dir), "report.json", &rep.to_json())?;
                    emit(Some(dir), "report.csv", &rep.to_csv()?)?;
                }
                (None, Format::Json) => emit(None, "", &rep.to_json())?,
                (None, Format::Csv) => emit(None, "", &rep.to_csv()?)?,
            }
            Ok(rep.pass())
        }
        Cmd::Decompose { measure, nu, method, lambda, m, out } => {
            let mu = input(read_measure(&measure))?;
            let nu = match &nu {
                Some(p) => input(read_measure(p))?,
                None => mu.clone(),
            };
            let text = match method {
                Method::Cz => {
                    let opts = CzOptions::new(m);
                    let d = input(cz_decompose(&nu, &mu, lambda, &opts, exec).map_err(Into::into))?;
                    let rep = verify_cz(&d, &nu, &mu, &opts);
                    let ok = rep.pass();
                    (serde_json::to_string_pretty(&json!({ "decomposition": d, "report": rep, "pass": ok })), ok)
                }
                Method::Whitney => {
                    let xs = atoms_of(&mu);
                    let spec = MaximalSpec::new(MaximalKind::NoncenteredFive);
                    let vals = maximal_at(&mu, Integrand::Measure(&nu), &xs, &spec, exec).map_err(anyhow::Error::from)?;
                    let omega = OpenSet::level_set(&mu, &vals, lambda).map_err(anyhow::Error::from)?;
                    let opts = WhitneyOptions::default();
                    let cov = whitney(&omega, &mu, &opts).map_err(anyhow::Error::from)?;
                    let rep = verify_whitney(&cov, &omega, &mu);
                    let ok = rep.pass(cov.d0, opts.t);
                    (serde_json::to_string_pretty(&json!({ "omega": omega, "cover": cov, "report": rep, "pass": ok })), ok)
                }
            };
            let (json, ok) = text;
            let mut json = json.context("serialising decomposition")?;
            json.push('\n');
            emit(out.as_deref(), "decomposition.json", &json)?;
            Ok(ok)
        }
        Cmd::Report { input: path, format, out } => {
            let text = input(fs::read_to_string(&path).with_context(|| format!("reading {}", path.display())))?;
            let rep = input(SuiteReport::from_json(&text))?;
            match format {
                Format::Json => emit(out.as_deref(), "report.json", &rep.to_json())?,
                Format::Csv => emit(out.as_deref(), "report.csv", &rep.to_csv()?)?,
            }
            Ok(rep.pass())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Input(InputError(e))) => {
            eprintln!("input error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
