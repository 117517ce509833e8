//! Command line front end for the solver: seeded instance generation,
//! solving (relaxation bounds or full branch and bound), exhaustive oracle
//! runs, and benchmark grids.
//!
//! Exit codes: 0 on success (including iteration- and time-limited runs,
//! which still return a valid bound sandwich), 1 for flag or file problems,
//! 2 when a requested computation fails.

mod bench;
mod formats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cqp_core::apps::AppsError;
use cqp_core::bb::{self, BBLimits, RunReport, RunStatus};
use cqp_core::conic::{self, RelaxStatus, SearchBox, SolveAudit};
use cqp_core::model::ArgumentSet;
use cqp_core::sdpsolver::SolverConfig;

use formats::{
    complex_pairs, json_f64, AuditJson, CheckJson, InstanceFile, InstanceIdentity,
    InstancePayload, OracleRecord, ProblemJson, Realized, ResultRecord, FORMAT_VERSION,
};

#[derive(Parser)]
#[command(
    name = "cqp",
    version,
    about = "Global solver for complex quadratic programs with modulus and argument constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded instance file.
    #[command(subcommand)]
    Generate(GenerateKind),
    /// Solve an instance file: a single relaxation bound or the full
    /// branch-and-bound run.
    Solve(SolveArgs),
    /// Run a seeded benchmark grid and print the aggregate table.
    Bench(bench::BenchArgs),
    /// Exhaustively minimize a fully discrete fixed-modulus instance.
    Oracle(OracleArgs),
}

#[derive(Subcommand)]
enum GenerateKind {
    /// PSK detection through a Gaussian channel.
    Mimo {
        /// Number of channel outputs.
        #[arg(long)]
        m: usize,
        /// Number of transmitted symbols.
        #[arg(long)]
        n: usize,
        /// Constellation order (4 = QPSK).
        #[arg(long = "mod")]
        constellation: usize,
        /// Signal-to-noise ratio in dB; "inf" plants a noiseless instance.
        #[arg(long, value_parser = parse_snr)]
        snr: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Store the realized problem data instead of the generator spec
        /// (drops application-scale metadata).
        #[arg(long)]
        expand: bool,
    },
    /// Unimodular radar code design around the Barker-7 reference.
    Radar {
        /// Code length (7 uses the built-in reference code).
        #[arg(long, default_value_t = 7)]
        n: usize,
        /// Noise correlation; drawn uniformly from [0.2, 0.8] when omitted.
        #[arg(long)]
        rho: Option<f64>,
        /// Normalized target Doppler.
        #[arg(long = "fd-tr", default_value_t = 0.15)]
        fd_tr: f64,
        /// Similarity half-width; accepts decimals or pi fractions like
        /// "pi/6".
        #[arg(long, value_parser = parse_angle, default_value = "pi/6")]
        delta: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Store the realized problem data instead of the generator spec
        /// (drops application-scale metadata).
        #[arg(long)]
        expand: bool,
    },
    /// Virtual beamforming with per-transmitter power budgets.
    Vb {
        /// Number of receive antennas.
        #[arg(long)]
        m: usize,
        /// Number of transmitters.
        #[arg(long)]
        n: usize,
        /// Comma-separated power budgets; all one when omitted.
        #[arg(long, value_delimiter = ',')]
        power: Option<Vec<f64>>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Store the realized problem data instead of the generator spec
        /// (drops application-scale metadata).
        #[arg(long)]
        expand: bool,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file to solve.
    #[arg(long = "in")]
    input: PathBuf,
    /// Certified optimality gap for branch and bound.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// What to run: one relaxation for its bound, or the full search.
    #[arg(long, value_enum, default_value_t = Relaxation::Bb)]
    relaxation: Relaxation,
    /// Stop after this many node selections.
    #[arg(long = "max-iter")]
    max_iter: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Record per-iteration invariant checks in the result.
    #[arg(long)]
    verify: bool,
    /// Write the result record as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Relaxation {
    Csdr,
    Ecsdr,
    Bb,
}

#[derive(Args)]
struct OracleArgs {
    /// Instance file; every argument set must be discrete and every
    /// modulus fixed.
    #[arg(long = "in")]
    input: PathBuf,
    /// Write the oracle record as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures split by exit code: flag and file problems exit 1, failed
/// computations exit 2.
#[derive(Debug)]
pub(crate) enum CliError {
    Usage(String),
    Solve(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Solve(m) => f.write_str(m),
        }
    }
}

pub(crate) type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(kind) => cmd_generate(kind),
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => bench::run(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Solve(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn cmd_generate(kind: GenerateKind) -> CliResult<()> {
    let (payload, out, expand) = match kind {
        GenerateKind::Mimo { m, n, constellation, snr, seed, out, expand } => {
            (InstancePayload::Mimo { m, n, constellation, snr_db: snr, seed }, out, expand)
        }
        GenerateKind::Radar { n, rho, fd_tr, delta, seed, out, expand } => (
            InstancePayload::Radar { n, rho, fd_tr, delta_angle: delta, seed, reference: None },
            out,
            expand,
        ),
        GenerateKind::Vb { m, n, power, seed, out, expand } => {
            (InstancePayload::Vb { m, n, power, seed }, out, expand)
        }
    };
    let mut file = InstanceFile { format: FORMAT_VERSION, payload };
    // Reject bad flag combinations before writing anything.
    let real = file.realize().map_err(CliError::Usage)?;
    if expand {
        file.payload =
            InstancePayload::RawCqp { problem: ProblemJson::from_problem(&real.problem) };
    }
    write_json(&out, &file)?;
    println!(
        "wrote {} ({} instance, n = {}, hash {})",
        out.display(),
        real.kind,
        real.problem.n(),
        file.canonical_hash()
    );
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> CliResult<()> {
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(CliError::Usage(format!(
            "--epsilon must be a positive number, got {}",
            args.epsilon
        )));
    }
    if args.time_limit.is_some_and(|t| !(t >= 0.0)) {
        return Err(CliError::Usage("--time-limit must be nonnegative".into()));
    }
    let (file, real) = read_instance(&args.input)?;
    let identity = InstanceIdentity { hash: file.canonical_hash(), kind: real.kind.to_string() };

    let (record, failed) = match args.relaxation {
        Relaxation::Bb => {
            let limits = BBLimits {
                max_iterations: args.max_iter,
                time_limit: args.time_limit.map(Duration::from_secs_f64),
                verify: args.verify,
            };
            let report = bb::run(&real.problem, args.epsilon, &limits);
            (bb_record(&real, identity, args.epsilon, &report), false)
        }
        mode => relaxation_record(&real, identity, args.epsilon, mode),
    };

    print_solve_summary(&record, &real);
    if let Some(out) = &args.out {
        write_json(out, &record)?;
    }
    if failed {
        return Err(CliError::Solve(format!(
            "relaxation solve ended with status {}",
            record.status
        )));
    }
    Ok(())
}

fn bb_record(
    real: &Realized,
    instance: InstanceIdentity,
    epsilon: f64,
    report: &RunReport,
) -> ResultRecord {
    let status = match report.status {
        RunStatus::EpsilonOptimal => "epsilon-optimal",
        RunStatus::IterationLimit => "iteration-limit",
        RunStatus::TimeLimit => "time-limit",
    };
    ResultRecord {
        format: FORMAT_VERSION,
        instance,
        mode: "bb".into(),
        epsilon,
        status: status.into(),
        obj_val: json_f64(report.objective),
        lower: json_f64(report.final_lower),
        lbd_e: json_f64(report.lbde),
        lbd_c: json_f64(report.lbdc),
        cld_gap: json_f64(report.closed_gap),
        iterations: Some(report.iterations),
        nodes: Some(report.nodes_created),
        theoretical_k: json_f64(report.theoretical_k),
        offset: real.offset,
        maximize: real.maximize,
        time_total_s: report.time_total.as_secs_f64(),
        time_e_s: Some(report.time_ecsdr.as_secs_f64()),
        time_c_s: Some(report.time_csdr.as_secs_f64()),
        solver: solver_fingerprint(&SolverConfig::default()),
        solution: Some(complex_pairs(&report.solution)),
        checks_passed: (!report.checks.is_empty()).then(|| report.checks_passed()),
        checks: (!report.checks.is_empty()).then(|| {
            report
                .checks
                .iter()
                .map(|c| CheckJson {
                    iteration: c.iteration,
                    name: c.name.to_string(),
                    passed: c.passed,
                    detail: c.detail.clone(),
                })
                .collect()
        }),
        audit: AuditJson::from(&report.audit),
    }
}

fn relaxation_record(
    real: &Realized,
    instance: InstanceIdentity,
    epsilon: f64,
    mode: Relaxation,
) -> (ResultRecord, bool) {
    let cfg = SolverConfig::default();
    let program = match mode {
        Relaxation::Csdr => conic::build_csdr(&real.problem),
        Relaxation::Ecsdr => conic::build_ecsdr(&real.problem, &SearchBox::root(&real.problem)),
        Relaxation::Bb => unreachable!("handled by the caller"),
    };
    let mut audit = SolveAudit::new();
    let started = Instant::now();
    let solution = conic::solve_relaxation_audited(&program, &cfg, &mut audit);
    let elapsed = started.elapsed().as_secs_f64();
    let (status, failed) = match solution.status {
        RelaxStatus::Optimal => ("optimal", false),
        RelaxStatus::Infeasible => ("infeasible", true),
        RelaxStatus::NumericalFailure => ("numerical-failure", true),
    };
    let bound = (!failed).then_some(solution.value).and_then(json_f64);
    let record = ResultRecord {
        format: FORMAT_VERSION,
        instance,
        mode: match mode {
            Relaxation::Csdr => "csdr".into(),
            _ => "ecsdr".into(),
        },
        epsilon,
        status: status.into(),
        obj_val: None,
        lower: bound,
        lbd_e: (mode == Relaxation::Ecsdr).then_some(bound).flatten(),
        lbd_c: (mode == Relaxation::Csdr).then_some(bound).flatten(),
        cld_gap: None,
        iterations: None,
        nodes: None,
        theoretical_k: None,
        offset: real.offset,
        maximize: real.maximize,
        time_total_s: elapsed,
        time_e_s: (mode == Relaxation::Ecsdr).then_some(elapsed),
        time_c_s: (mode == Relaxation::Csdr).then_some(elapsed),
        solver: solver_fingerprint(&cfg),
        solution: None,
        checks_passed: None,
        checks: None,
        audit: AuditJson::from(&audit),
    };
    (record, failed)
}

fn cmd_oracle(args: OracleArgs) -> CliResult<()> {
    let (file, real) = read_instance(&args.input)?;
    let truth = cqp_core::apps::brute_force(&real.problem).map_err(|e| {
        CliError::Solve(match e {
            AppsError::NotEnumerable => {
                "oracle requires discrete arguments and fixed moduli".into()
            }
            AppsError::TooLarge { size } => {
                format!("enumeration would visit {size} points, above the 10^7 budget")
            }
            other => other.to_string(),
        })
    })?;
    let points: u64 = real
        .problem
        .args()
        .iter()
        .map(|a| match a {
            ArgumentSet::Discrete(v) => v.len() as u64,
            _ => 1,
        })
        .product();
    let record = OracleRecord {
        format: FORMAT_VERSION,
        instance: InstanceIdentity { hash: file.canonical_hash(), kind: real.kind.to_string() },
        points,
        value: truth.value.expect("oracle always returns a value"),
        minimizer: complex_pairs(&truth.minimizer.expect("oracle always returns a minimizer")),
    };
    println!("scanned {} points: minimum {:.9}", record.points, record.value);
    if let Some(out) = &args.out {
        write_json(out, &record)?;
    }
    Ok(())
}

fn print_solve_summary(record: &ResultRecord, real: &Realized) {
    println!(
        "instance {} ({}), mode {}, epsilon {:.1e}",
        record.instance.hash, record.instance.kind, record.mode, record.epsilon
    );
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => "-".into(),
    };
    if record.mode == "bb" {
        println!(
            "status {}: ObjVal {}, certified lower {}",
            record.status,
            fmt(record.obj_val),
            fmt(record.lower)
        );
        if let Some(v) = record.obj_val {
            if real.maximize {
                println!("  application scale (maximized value): {:.6}", -v);
            } else if real.offset != 0.0 {
                println!("  application scale (residual value): {:.6}", v + real.offset);
            }
        }
        println!(
            "LBdE {}  LBdC {}  CldGap {}",
            fmt(record.lbd_e),
            fmt(record.lbd_c),
            match record.cld_gap {
                Some(g) => format!("{g:.1}%"),
                None => "-".into(),
            }
        );
        println!(
            "iterations {} (worst-case bound {}), nodes {}",
            record.iterations.unwrap_or(0),
            fmt(record.theoretical_k),
            record.nodes.unwrap_or(0)
        );
        if let Some(passed) = record.checks_passed {
            let total = record.checks.as_ref().map_or(0, |c| c.len());
            if passed {
                println!("verification: {total} checks recorded, all passed");
            } else {
                let failed = record
                    .checks
                    .as_ref()
                    .map_or(0, |c| c.iter().filter(|x| !x.passed).count());
                println!("verification: {failed} of {total} checks FAILED");
            }
        }
    } else {
        println!("status {}: bound {}", record.status, fmt(record.lower));
    }
    println!(
        "time {:.3}s total, root solves {}s enhanced / {}s conventional",
        record.time_total_s,
        match record.time_e_s {
            Some(t) => format!("{t:.3}"),
            None => "-".into(),
        },
        match record.time_c_s {
            Some(t) => format!("{t:.3}"),
            None => "-".into(),
        }
    );
}

fn solver_fingerprint(cfg: &SolverConfig) -> String {
    format!(
        "ipm(feas_tol={:e}, gap_tol={:e}, max_iter={}, step={})",
        cfg.feas_tol, cfg.gap_tol, cfg.max_iter, cfg.step_fraction
    )
}

pub(crate) fn read_instance(path: &Path) -> CliResult<(InstanceFile, Realized)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("cannot parse {}: {e}", path.display())))?;
    if file.format != FORMAT_VERSION {
        return Err(CliError::Usage(format!(
            "{} has format version {}, this tool reads version {}",
            path.display(),
            file.format,
            FORMAT_VERSION
        )));
    }
    let real = file.realize().map_err(CliError::Usage)?;
    Ok((file, real))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Solve(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Parses an angle given as a decimal literal or a pi fraction: "pi",
/// "pi/6", "2pi/3", "-pi/4", "0.7854".
fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let err = || format!("expected a decimal or a pi fraction like \"pi/6\", got {s:?}");
    let Some(idx) = t.find("pi") else {
        return Err(err());
    };
    let coefficient = match &t[..idx] {
        "" | "+" => 1.0,
        "-" => -1.0,
        other => other.parse::<f64>().map_err(|_| err())?,
    };
    let rest = &t[idx + 2..];
    let divisor = if rest.is_empty() {
        1.0
    } else {
        let d: f64 = rest.strip_prefix('/').ok_or_else(err)?.parse().map_err(|_| err())?;
        if d == 0.0 {
            return Err(err());
        }
        d
    };
    Ok(coefficient * std::f64::consts::PI / divisor)
}

/// Parses an SNR in dB, accepting "inf" for the noiseless case.
fn parse_snr(s: &str) -> Result<f64, String> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|_| format!("expected a number or \"inf\", got {s:?}")),
    }
}
