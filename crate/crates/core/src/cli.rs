//! `bayes-oed` command-line interface.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::design::{exchange, exhaustive, greedy, greedy_rank_one, CandidatePool, DesignResult, TraceStep};
use crate::eig::{EigReport, McConfig};
use crate::error::{OedError, Result};
use crate::generate::{deconvolution_pool, random_pool, DeconvolutionParams, RandomParams};
use crate::inverse::{hessian_bundle, posterior, BayesLinearProblem};
use crate::io::{load_pool, load_problem, read_matrix, save_pool, write_matrix, ProblemDescriptor};
use crate::lowrank::{
    eig_from_lowrank, full_spectrum, randomized_spectrum, truncated_spectrum, truncation_error,
    RandomizedConfig, TruncationPolicy,
};
use crate::report::{DesignReport, PosteriorReport, ProblemMeta, Report, SpectrumReport};
use crate::validate::run_checks;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

pub const DEFAULT_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Parser)]
#[command(name = "bayes-oed", version, about = "Expected information gain and D-optimal design for linear-Gaussian inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expected information gain by both closed forms and Monte Carlo.
    Eig {
        #[command(flatten)]
        problem: ProblemArg,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Posterior mean and covariance for observed (or synthesized) data.
    Posterior {
        #[command(flatten)]
        problem: ProblemArg,
        /// Observation vector as a q×1 Matrix Market file. Without it, data are
        /// synthesized from a prior draw.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Select sensors from a candidate pool.
    Design {
        #[arg(value_enum)]
        method: DesignMethod,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        budget: usize,
        /// Greedy only: use rank-one determinant updates.
        #[arg(long)]
        rank_one: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Eigenvalues of the prior-preconditioned Hessian and low-rank EIG.
    Spectrum {
        #[command(flatten)]
        problem: ProblemArg,
        #[arg(long, conflicts_with = "tail_tol")]
        rank: Option<usize>,
        #[arg(long)]
        tail_tol: Option<f64>,
        /// Randomized range finder instead of the dense eigensolver (needs --rank).
        #[arg(long, requires = "rank")]
        randomized: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Write a synthetic candidate pool.
    Generate(GenerateArgs),
    /// Run the identity and Monte Carlo consistency battery.
    Validate {
        #[command(flatten)]
        problem: ProblemArg,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Debug, Args)]
struct ProblemArg {
    /// Problem descriptor (JSON).
    #[arg(long, alias = "pool")]
    problem: PathBuf,
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Directory for the report and CSV series.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DesignMethod {
    Greedy,
    Exchange,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenerateKind {
    Random,
    #[value(name = "deconvolution-1d")]
    Deconvolution1d,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    kind: GenerateKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    width: f64,
    #[arg(long, default_value_t = 0.1)]
    length_scale: f64,
    /// Comma-separated station locations (deconvolution-1d); overrides --q.
    #[arg(long, value_delimiter = ',')]
    stations: Option<Vec<f64>>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &OedError) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

struct Output<'a> {
    stdout: &'a mut dyn Write,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(stderr, "{e}");
            return code;
        }
    };
    let mut out = Output { stdout };
    match dispatch(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn meta(desc: &ProblemDescriptor) -> ProblemMeta {
    ProblemMeta {
        name: desc.name.clone(),
        n: desc.n,
        q: desc.q,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| OedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| OedError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OedError + '_ {
    move |e| OedError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| OedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn finish(out: &mut Output, report: &Report, dir: Option<&Path>) -> Result<()> {
    let json = report.to_json()?;
    if let Some(dir) = dir {
        prepare_dir(dir)?;
        write_file(&dir.join("report.json"), &json)?;
    }
    out.stdout
        .write_all(json.as_bytes())
        .map_err(|source| OedError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn dispatch(cmd: Command, out: &mut Output) -> Result<i32> {
    let start = Instant::now();
    match cmd {
        Command::Eig { problem, mc, out: dir } => {
            let loaded = load_problem(&problem.problem)?;
            let cfg = McConfig::new(mc.seed, mc.mc_samples)?;
            let mut report = Report::new("eig");
            report.problem = Some(meta(&loaded.descriptor));
            report.seed = Some(cfg.seed);
            report.mc_samples = Some(cfg.n_samples);
            report.eig = Some(EigReport::new(&loaded.problem, Some(cfg))?);
            report.timings.insert("total_s".into(), start.elapsed().as_secs_f64());
            finish(out, &report, dir.out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Posterior {
            problem,
            data,
            seed,
            out: dir,
        } => {
            let loaded = load_problem(&problem.problem)?;
            let p = &loaded.problem;
            let (y, source) = match data {
                Some(path) => {
                    let m = read_matrix(&path)?;
                    if m.shape() != (p.q(), 1) {
                        return Err(OedError::Validation {
                            path,
                            message: format!("expected a {}x1 observation vector", p.q()),
                        });
                    }
                    (m.column(0).into_owned(), path.display().to_string())
                }
                None => {
                    let m_true = p.prior().draw_indexed(seed, 0);
                    (p.observe(&m_true, seed, 1)?, format!("synthetic (seed {seed})"))
                }
            };
            let post = posterior(p, &y)?;
            let mut report = Report::new("posterior");
            report.problem = Some(meta(&loaded.descriptor));
            report.seed = Some(seed);
            report.posterior = Some(PosteriorReport {
                mean: post.mean().iter().copied().collect(),
                variances: post.cov().matrix().diagonal().iter().copied().collect(),
                data_source: source,
            });
            if let Some(d) = dir.out.as_deref() {
                prepare_dir(d)?;
                write_matrix(&d.join("posterior_mean.mtx"), &DMatrix::from_column_slice(p.n(), 1, post.mean().as_slice()))?;
                write_matrix(&d.join("posterior_cov.mtx"), post.cov().matrix())?;
                report.files = Some(vec!["posterior_mean.mtx".into(), "posterior_cov.mtx".into()]);
            }
            report.timings.insert("total_s".into(), start.elapsed().as_secs_f64());
            finish(out, &report, dir.out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Design {
            method,
            pool,
            budget,
            rank_one,
            out: dir,
        } => {
            let (desc, pool) = load_pool(&pool)?;
            let (name, result) = run_design(&pool, method, budget, rank_one)?;
            let mut report = Report::new("design");
            report.problem = Some(meta(&desc));
            report.design = Some(DesignReport::new(name, budget, &result, pool.labels()));
            if let Some(d) = dir.out.as_deref() {
                prepare_dir(d)?;
                let rows: Vec<Vec<String>> = result
                    .trace
                    .iter()
                    .map(|s| {
                        vec![
                            s.step.to_string(),
                            s.added.to_string(),
                            s.removed.map(|r| r.to_string()).unwrap_or_default(),
                            format!("{:.17e}", s.criterion),
                        ]
                    })
                    .collect();
                write_csv(&d.join("trace.csv"), &["step", "added", "removed", "criterion"], &rows)?;
                report.files = Some(vec!["trace.csv".into()]);
            }
            report.timings.insert("total_s".into(), start.elapsed().as_secs_f64());
            finish(out, &report, dir.out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Spectrum {
            problem,
            rank,
            tail_tol,
            randomized,
            seed,
            out: dir,
        } => {
            let loaded = load_problem(&problem.problem)?;
            let mut report = Report::new("spectrum");
            report.problem = Some(meta(&loaded.descriptor));
            let spectrum = spectrum_report(&loaded.problem, rank, tail_tol, randomized, seed)?;
            if randomized {
                report.seed = Some(seed);
            }
            if let Some(d) = dir.out.as_deref() {
                prepare_dir(d)?;
                let mut cumulative = 0.0;
                let rows: Vec<Vec<String>> = spectrum
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        cumulative += 0.5 * l.ln_1p();
                        vec![(i + 1).to_string(), format!("{l:.17e}"), format!("{cumulative:.17e}")]
                    })
                    .collect();
                write_csv(&d.join("spectrum.csv"), &["index", "eigenvalue", "cumulative_eig"], &rows)?;
                report.files = Some(vec!["spectrum.csv".into()]);
            }
            report.spectrum = Some(spectrum);
            report.timings.insert("total_s".into(), start.elapsed().as_secs_f64());
            finish(out, &report, dir.out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Generate(args) => {
            let (default_name, pool) = generate_pool(&args)?;
            let name = args.name.clone().unwrap_or(default_name);
            let path = save_pool(&args.out, &name, &pool)?;
            let mut report = Report::new("generate");
            report.problem = Some(ProblemMeta {
                name,
                n: pool.n(),
                q: pool.len(),
            });
            report.seed = Some(args.seed);
            report.files = Some(vec![path.display().to_string()]);
            report.timings.insert("total_s".into(), start.elapsed().as_secs_f64());
            finish(out, &report, None)?;
            Ok(EXIT_OK)
        }
        Command::Validate { problem, mc, out: dir } => {
            let loaded = load_problem(&problem.problem)?;
            let cfg = McConfig::new(mc.seed, mc.mc_samples)?;
            let checks = run_checks(&loaded.problem, cfg)?;
            let mut report = Report::new("validate");
            report.problem = Some(meta(&loaded.descriptor));
            report.seed = Some(cfg.seed);
            report.mc_samples = Some(cfg.n_samples);
            let all_passed = checks.iter().all(|c| c.passed);
            let lines: Vec<String> = checks.iter().map(|c| c.line()).collect();
            report.checks = Some(checks);
            report.timings.insert("total_s".into(), start.elapsed().as_secs_f64());
            if let Some(d) = dir.out.as_deref() {
                prepare_dir(d)?;
                write_file(&d.join("report.json"), &report.to_json()?)?;
            }
            let text = lines.join("\n") + "\n";
            out.stdout
                .write_all(text.as_bytes())
                .map_err(|source| OedError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
            Ok(if all_passed { EXIT_OK } else { EXIT_VALIDATION })
        }
    }
}

fn run_design(
    pool: &CandidatePool,
    method: DesignMethod,
    budget: usize,
    rank_one: bool,
) -> Result<(&'static str, DesignResult)> {
    let greedy_run = |pool: &CandidatePool| {
        if rank_one {
            greedy_rank_one(pool, budget)
        } else {
            greedy(pool, budget)
        }
    };
    Ok(match method {
        DesignMethod::Greedy => ("greedy", greedy_run(pool)?),
        DesignMethod::Exchange => {
            let start = greedy_run(pool)?;
            let mut res = exchange(pool, &start.design)?;
            let mut trace = start.trace;
            let offset = trace.len();
            trace.extend(res.trace.iter().map(|s| TraceStep {
                step: s.step + offset,
                ..*s
            }));
            res.trace = trace;
            ("exchange", res)
        }
        DesignMethod::Exhaustive => ("exhaustive", exhaustive(pool, budget)?),
    })
}

fn spectrum_report(
    p: &BayesLinearProblem,
    rank: Option<usize>,
    tail_tol: Option<f64>,
    randomized: bool,
    seed: u64,
) -> Result<SpectrumReport> {
    let bundle = hessian_bundle(p)?;
    let dense = full_spectrum(&bundle.h_tilde)?;
    let eig_dense = 0.5 * dense.iter().map(|l| l.ln_1p()).sum::<f64>();
    let n = p.n();
    let lr = if randomized {
        let r = rank.expect("clap enforces --rank with --randomized");
        if r > n {
            return Err(OedError::InvalidArgument(format!("rank {r} exceeds dimension {n}")));
        }
        let cfg = RandomizedConfig {
            oversampling: RandomizedConfig::default().oversampling.min(n - r),
            seed,
            ..Default::default()
        };
        let h = &bundle.h_tilde;
        randomized_spectrum(|v| h * v, n, r, cfg)?
    } else {
        let policy = match (rank, tail_tol) {
            (Some(r), _) => TruncationPolicy::Rank(r),
            (None, Some(t)) => TruncationPolicy::TailTolerance(t),
            (None, None) => TruncationPolicy::Rank(n),
        };
        truncated_spectrum(&bundle.h_tilde, policy)?
    };
    let eigenvalues = if rank.is_none() && tail_tol.is_none() {
        dense.clone()
    } else {
        lr.eigenvalues().to_vec()
    };
    Ok(SpectrumReport {
        eigenvalues,
        rank: lr.rank(),
        randomized,
        eig_lowrank: eig_from_lowrank(&lr),
        eig_dense,
        truncation_error: truncation_error(&dense, lr.rank())?,
    })
}

fn generate_pool(args: &GenerateArgs) -> Result<(String, CandidatePool)> {
    match args.kind {
        GenerateKind::Random => {
            let mut params = RandomParams::new(args.n, args.q);
            if let Some(v) = args.noise_var {
                params.noise_variance = v;
            }
            Ok((
                format!("random_n{}_q{}_s{}", args.n, args.q, args.seed),
                random_pool(params, args.seed)?,
            ))
        }
        GenerateKind::Deconvolution1d => {
            let mut params = DeconvolutionParams::uniform(args.n, args.q);
            params.width = args.width;
            params.length_scale = args.length_scale;
            if let Some(v) = args.noise_var {
                params.noise_variance = v;
            }
            if let Some(s) = &args.stations {
                params.stations = s.clone();
            }
            let q = params.stations.len();
            Ok((format!("deconv_n{}_q{}", args.n, q), deconvolution_pool(&params)?))
        }
    }
}

/// Convenience for tests: run with captured output.
pub fn run_captured<I, T>(argv: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = run(argv, &mut stdout, &mut stderr);
    (
        code,
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}
