//! Benchmark grids: a Cartesian grid of generator cells, a fixed number of
//! seeded instances per cell, each solved end to end, aggregated into
//! per-cell means and rendered as an aligned table.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, ValueEnum};

use cqp_core::bb::{self, BBLimits, RunStatus};

use crate::formats::{BenchCell, BenchReport, InstanceFile, InstancePayload, FORMAT_VERSION};
use crate::{parse_angle, parse_snr, write_json, CliError, CliResult};

#[derive(Args)]
pub(crate) struct BenchArgs {
    /// Which generator family to run.
    #[arg(long, value_enum)]
    suite: Suite,
    /// Seeded instances per cell; instance seeds are
    /// --seed + cell_index * reps + rep.
    #[arg(long)]
    reps: u64,
    /// Receive-dimension grid (mimo, vb).
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    /// Transmit-dimension grid (mimo, vb).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Constellation-order grid (mimo).
    #[arg(long = "mod", value_delimiter = ',')]
    constellation: Vec<usize>,
    /// SNR grid in dB (mimo); accepts "inf".
    #[arg(long, value_delimiter = ',', value_parser = parse_snr)]
    snr: Vec<f64>,
    /// Similarity half-width grid (radar); accepts pi fractions; defaults
    /// to pi/6.
    #[arg(long, value_delimiter = ',', value_parser = parse_angle)]
    delta: Vec<f64>,
    /// Fixed noise correlation (radar); drawn per instance when omitted.
    #[arg(long)]
    rho: Option<f64>,
    /// Base seed for the grid.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Certified optimality gap per instance.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Node-selection cap per instance.
    #[arg(long = "max-iter")]
    max_iter: Option<u64>,
    /// Wall-clock budget per instance, in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Write the aggregate report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Mimo,
    Radar,
    Vb,
}

enum CellSpec {
    Mimo { m: usize, n: usize, constellation: usize, snr_db: f64 },
    Radar { delta: f64, rho: Option<f64> },
    Vb { m: usize, n: usize },
}

impl CellSpec {
    fn label(&self) -> String {
        match self {
            CellSpec::Mimo { m, n, constellation, snr_db } => {
                format!("(m={m}, n={n}, M={constellation}, snr={snr_db})")
            }
            CellSpec::Radar { delta, rho } => match rho {
                Some(r) => format!("(n=7, delta={delta:.4}, rho={r})"),
                None => format!("(n=7, delta={delta:.4}, rho=rand)"),
            },
            CellSpec::Vb { m, n } => format!("(m={m}, n={n})"),
        }
    }

    fn payload(&self, seed: u64) -> InstancePayload {
        match *self {
            CellSpec::Mimo { m, n, constellation, snr_db } => {
                InstancePayload::Mimo { m, n, constellation, snr_db, seed }
            }
            CellSpec::Radar { delta, rho } => InstancePayload::Radar {
                n: 7,
                rho,
                fd_tr: 0.15,
                delta_angle: delta,
                seed,
                reference: None,
            },
            CellSpec::Vb { m, n } => InstancePayload::Vb { m, n, power: None, seed },
        }
    }
}

/// One successful rep, already on the application scale.
struct Sample {
    obj: f64,
    bound_e: f64,
    bound_c: f64,
    gap: f64,
    iterations: f64,
    time_s: f64,
    time_e_s: f64,
    time_c_s: f64,
}

pub(crate) fn run(args: BenchArgs) -> CliResult<()> {
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(CliError::Usage(format!(
            "--epsilon must be a positive number, got {}",
            args.epsilon
        )));
    }
    let cells = build_cells(&args)?;
    let limits = BBLimits {
        max_iterations: args.max_iter,
        time_limit: args.time_limit.map(Duration::from_secs_f64),
        verify: false,
    };
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|ci| (0..args.reps).map(move |rep| (ci, args.seed + ci as u64 * args.reps + rep)))
        .collect();
    let outcomes = run_jobs(&cells, jobs, args.epsilon, &limits);

    let mut per_cell: Vec<(Vec<Sample>, u64)> = (0..cells.len()).map(|_| (Vec::new(), 0)).collect();
    for (ci, outcome) in outcomes {
        match outcome {
            Ok(sample) => per_cell[ci].0.push(sample),
            Err(_) => per_cell[ci].1 += 1,
        }
    }
    let report = BenchReport {
        format: FORMAT_VERSION,
        suite: suite_name(args.suite).to_string(),
        epsilon: args.epsilon,
        reps: args.reps,
        cells: cells
            .iter()
            .zip(&per_cell)
            .map(|(cell, (samples, failures))| BenchCell {
                label: cell.label(),
                reps: args.reps,
                failures: *failures,
                obj_val: mean(samples.iter().map(|s| s.obj)),
                bound_e: mean(samples.iter().map(|s| s.bound_e)),
                bound_c: mean(samples.iter().map(|s| s.bound_c)),
                cld_gap: mean(samples.iter().map(|s| s.gap)),
                iterations: mean(samples.iter().map(|s| s.iterations)),
                time_s: mean(samples.iter().map(|s| s.time_s)),
                time_e_s: mean(samples.iter().map(|s| s.time_e_s)),
                time_c_s: mean(samples.iter().map(|s| s.time_c_s)),
            })
            .collect(),
    };
    print!("{}", render(&report, args.suite != Suite::Mimo));
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn build_cells(args: &BenchArgs) -> CliResult<Vec<CellSpec>> {
    let need = |name: &str, empty: bool| {
        if empty {
            Err(CliError::Usage(format!(
                "suite {} needs a --{name} list",
                suite_name(args.suite)
            )))
        } else {
            Ok(())
        }
    };
    match args.suite {
        Suite::Mimo => {
            need("m", args.m.is_empty())?;
            need("n", args.n.is_empty())?;
            need("mod", args.constellation.is_empty())?;
            need("snr", args.snr.is_empty())?;
            let mut cells = Vec::new();
            for &m in &args.m {
                for &n in &args.n {
                    for &constellation in &args.constellation {
                        for &snr_db in &args.snr {
                            cells.push(CellSpec::Mimo { m, n, constellation, snr_db });
                        }
                    }
                }
            }
            Ok(cells)
        }
        Suite::Radar => {
            let deltas = if args.delta.is_empty() {
                vec![std::f64::consts::PI / 6.0]
            } else {
                args.delta.clone()
            };
            Ok(deltas.iter().map(|&delta| CellSpec::Radar { delta, rho: args.rho }).collect())
        }
        Suite::Vb => {
            need("m", args.m.is_empty())?;
            need("n", args.n.is_empty())?;
            let mut cells = Vec::new();
            for &m in &args.m {
                for &n in &args.n {
                    cells.push(CellSpec::Vb { m, n });
                }
            }
            Ok(cells)
        }
    }
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Mimo => "mimo",
        Suite::Radar => "radar",
        Suite::Vb => "vb",
    }
}

#[cfg(feature = "parallel")]
fn run_jobs(
    cells: &[CellSpec],
    jobs: Vec<(usize, u64)>,
    epsilon: f64,
    limits: &BBLimits,
) -> Vec<(usize, Result<Sample, String>)> {
    use rayon::prelude::*;
    jobs.into_par_iter()
        .map(|(ci, seed)| (ci, run_job(&cells[ci], seed, epsilon, limits)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_jobs(
    cells: &[CellSpec],
    jobs: Vec<(usize, u64)>,
    epsilon: f64,
    limits: &BBLimits,
) -> Vec<(usize, Result<Sample, String>)> {
    jobs.into_iter()
        .map(|(ci, seed)| (ci, run_job(&cells[ci], seed, epsilon, limits)))
        .collect()
}

fn run_job(
    cell: &CellSpec,
    seed: u64,
    epsilon: f64,
    limits: &BBLimits,
) -> Result<Sample, String> {
    let file = InstanceFile { format: FORMAT_VERSION, payload: cell.payload(seed) };
    let real = file.realize()?;
    let report = bb::run(&real.problem, epsilon, limits);
    if report.status != RunStatus::EpsilonOptimal {
        return Err(format!("seed {seed}: run stopped with {:?}", report.status));
    }
    if !report.closed_gap.is_finite() {
        return Err(format!("seed {seed}: root relaxation bound missing"));
    }
    let scale = |v: f64| if real.maximize { -v } else { v + real.offset };
    Ok(Sample {
        obj: scale(report.objective),
        bound_e: scale(report.lbde),
        bound_c: scale(report.lbdc),
        gap: report.closed_gap,
        iterations: report.iterations as f64,
        time_s: report.time_total.as_secs_f64(),
        time_e_s: report.time_ecsdr.as_secs_f64(),
        time_c_s: report.time_csdr.as_secs_f64(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn render(report: &BenchReport, maximize: bool) -> String {
    let (be, bc) = if maximize { ("UBdE", "UBdC") } else { ("LBdE", "LBdC") };
    let label_width = report
        .cells
        .iter()
        .map(|c| c.label.len())
        .chain([4])
        .max()
        .unwrap();
    let mut out = format!(
        "suite {}, reps {}, epsilon {:.1e}, {} cells\n",
        report.suite,
        report.reps,
        report.epsilon,
        report.cells.len()
    );
    out += &format!(
        "{:<label_width$}  {:>10}  {:>10}  {:>10}  {:>7}  {:>6}  {:>8}  {:>8}  {:>8}  {:>4}\n",
        "cell", "ObjVal", be, bc, "CldGap", "# Iter", "Time", "TimeE", "TimeC", "fail"
    );
    for cell in &report.cells {
        out += &format!(
            "{:<label_width$}  {:>10}  {:>10}  {:>10}  {:>7}  {:>6}  {:>8}  {:>8}  {:>8}  {:>4}\n",
            cell.label,
            num(cell.obj_val, 4),
            num(cell.bound_e, 4),
            num(cell.bound_c, 4),
            match cell.cld_gap {
                Some(g) => format!("{g:.1}%"),
                None => "-".into(),
            },
            num(cell.iterations, 1),
            num(cell.time_s, 3),
            num(cell.time_e_s, 3),
            num(cell.time_c_s, 3),
            cell.failures,
        );
    }
    out
}

fn num(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(v) => format!("{v:.precision$}"),
        None => "-".into(),
    }
}
