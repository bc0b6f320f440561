//! `lcg-sim`: heralding, Wigner grids, rank reduction and circuit
//! optimization from JSON configs.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use lcg_core::characterize::{normalized_overlap, overlap_by_quadrature, wigner_grid, write_wigner_csv, Grid};
use lcg_core::gbs::{self, evaluate_state, herald, herald_staged};
use lcg_core::optimize::Budget;
use lcg_core::stellar::{core_overlap, rank_reduce, ReduceOptions};
use lcg_core::LcogState;

use config::{HeraldConfig, OptimizeConfig, Provenance};

#[derive(Parser)]
#[command(name = "lcg-sim", version, about = "Linear-combination-of-Gaussians optics simulator")]
struct Cli {
    /// Worker threads for the data-parallel loops.
    #[arg(long, global = true, env = "LCG_SIM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a heralded circuit; writes `state.json` and `summary.json`.
    Herald(HeraldArgs),
    /// Sample the Wigner function of a checkpoint on a grid, as CSV.
    Wigner(WignerArgs),
    /// Optimize a circuit; writes `report.json` and `trace.csv`.
    Optimize(OptimizeArgs),
    /// Rank-reduce a single-mode checkpoint; writes `state.json` and `reduce.json`.
    Reduce(ReduceArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Wall-clock budget; exceeding it exits with code 4.
    #[arg(long)]
    budget_seconds: Option<f64>,
}

#[derive(Args)]
struct HeraldArgs {
    #[arg(long)]
    config: PathBuf,
    /// Recorded in the provenance block; heralding itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct WignerArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `xmin:xmax:n,pmin:pmax:n`
    #[arg(long, allow_hyphen_values = true, default_value = "-6:6:121,-6:6:121")]
    grid: String,
    /// CSV file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the basin-hopping seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output ring radius.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 6.0)]
    kstd: f64,
    /// Stellar rank of a pure input; estimated when absent.
    #[arg(long)]
    rank: Option<usize>,
    #[command(flatten)]
    common: Common,
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<lcg_core::Error> for Failure {
    fn from(e: lcg_core::Error) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 2, message: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| config_error(e.to_string()))?;
    write(path, &(text + "\n"))
}

/// Run `job` on a worker thread, giving up with exit code 4 after `budget`.
fn with_budget<T: Send + 'static>(
    budget: Option<f64>,
    job: impl FnOnce() -> Result<T, Failure> + Send + 'static,
) -> Result<T, Failure> {
    let Some(secs) = budget else { return job() };
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(job());
    });
    rx.recv_timeout(Duration::from_secs_f64(secs.max(0.0)))
        .unwrap_or_else(|_| Err(Failure { code: 4, message: format!("budget of {secs} s exceeded") }))
}

fn cmd_herald(args: HeraldArgs) -> Result<(), Failure> {
    let text = read(&args.config)?;
    let cfg: HeraldConfig = config::parse(&text)?;
    let provenance = Provenance::new(&text, args.seed);
    let start = Instant::now();
    let circuit = cfg.circuit.clone();
    let staged = cfg.staged;
    let (state, eval) = with_budget(args.common.budget_seconds, move || {
        let h = match staged {
            Some(opts) => herald_staged(&circuit, &opts)?,
            None => herald(&circuit, false)?,
        };
        let eval = evaluate_state(&h.state, h.log_prob)?;
        Ok((h.state, eval))
    })?;
    let summary = json!({
        "log_prob": eval.log_prob,
        "probability": eval.log_prob.exp(),
        "delta_x_dB": eval.delta_x_db,
        "delta_p_dB": eval.delta_p_db,
        "delta_s_dB": eval.delta_s_db,
        "xi_dB": eval.xi_db,
        "n_weights": state.num_weights(),
        "full_form_count": state.full_form_count(),
        "runtime_ms": start.elapsed().as_secs_f64() * 1e3,
        "seed": args.seed,
        "conventions": { "hbar": lcg_core::phase_space::HBAR },
        "provenance": provenance,
    });
    fs::create_dir_all(&args.common.out).map_err(|e| io_error(&args.common.out, e))?;
    write(&args.common.out.join("state.json"), &state.to_json()?)?;
    write_json(&args.common.out.join("summary.json"), &summary)
}

fn parse_axis(s: &str) -> Option<(f64, f64, usize)> {
    let mut it = s.split(':');
    let lo = it.next()?.trim().parse().ok()?;
    let hi = it.next()?.trim().parse().ok()?;
    let n = it.next()?.trim().parse().ok()?;
    (it.next().is_none() && n > 0 && lo <= hi).then_some((lo, hi, n))
}

fn parse_grid(s: &str) -> Result<Grid, Failure> {
    let bad = || config_error(format!("grid must look like xmin:xmax:n,pmin:pmax:n, got {s:?}"));
    let (x, p) = s.split_once(',').ok_or_else(bad)?;
    let (x_min, x_max, nx) = parse_axis(x).ok_or_else(bad)?;
    let (p_min, p_max, np) = parse_axis(p).ok_or_else(bad)?;
    Ok(Grid { x_min, x_max, nx, p_min, p_max, np })
}

fn cmd_wigner(args: WignerArgs) -> Result<(), Failure> {
    let grid = parse_grid(&args.grid)?;
    let state = LcogState::from_json(&read(&args.checkpoint)?)?;
    if state.num_modes() != 1 {
        return Err(config_error("Wigner grids need a single-mode checkpoint"));
    }
    let points = grid.points();
    let values = wigner_grid(&state, &points)?;
    let mut buf = Vec::new();
    write_wigner_csv(&mut buf, &points, &values).map_err(|e| config_error(e.to_string()))?;
    let text = String::from_utf8(buf).expect("CSV output is ASCII");
    match args.out {
        Some(path) => write(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_optimize(args: OptimizeArgs) -> Result<(), Failure> {
    let text = read(&args.config)?;
    let cfg: OptimizeConfig = config::parse(&text)?;
    let mut hop = cfg.hops;
    if let Some(seed) = args.seed {
        hop.seed = seed;
    }
    let provenance = Provenance::new(&text, Some(hop.seed));
    let mut budget: Budget = cfg.budget;
    if let Some(secs) = args.common.budget_seconds {
        budget.max_seconds = Some(budget.max_seconds.map_or(secs, |b| b.min(secs)));
    }
    let cost = cfg.cost.clone();
    let spec = cfg.circuit.clone();
    let out = &args.common.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    if let Some(etas) = &cfg.loss_sweep {
        let rows = gbs::reoptimize_with_loss(&spec, &cost, etas, &budget)?;
        let doc = json!({ "rows": rows, "provenance": provenance });
        return write_json(&out.join("report.json"), &doc);
    }
    let report = if hop.hops == 0 { gbs::local_minimize(&spec, &cost, &budget)? } else { gbs::basin_hop(&spec, &cost, &budget, &hop)? };
    let mut csv = String::from("iteration,cost,gradient_norm\n");
    for row in &report.trace {
        csv.push_str(&format!("{},{:.16e},{:.16e}\n", row.iteration, row.cost, row.gradient_norm));
    }
    let doc = json!({ "report": report, "provenance": provenance });
    write_json(&out.join("report.json"), &doc)?;
    write(&out.join("trace.csv"), &csv)?;
    if report.evaluation.is_none() {
        let msg = report.failure.unwrap_or_else(|| "optimization failed".into());
        return Err(Failure { code: 3, message: msg });
    }
    Ok(())
}

/// Fidelity of a reduction. Core-basis and quadrature overlaps keep each
/// state's cancellation separate, so they are tried before the pairwise sum.
fn fidelity(a: &LcogState, b: &LcogState) -> Result<(f64, &'static str), Failure> {
    if let Ok(f) = core_overlap(a, b, None) {
        return Ok((f, "core"));
    }
    if a.num_modes() == 1 {
        let ab = overlap_by_quadrature(a, b)?;
        let aa = overlap_by_quadrature(a, a)?;
        let bb = overlap_by_quadrature(b, b)?;
        return Ok((ab / (aa * bb).sqrt(), "quadrature"));
    }
    Ok((normalized_overlap(a, b)?, "pairwise"))
}

fn cmd_reduce(args: ReduceArgs) -> Result<(), Failure> {
    let text = read(&args.checkpoint)?;
    let state = LcogState::from_json(&text)?;
    let opts = ReduceOptions { eps_out: args.eps, k_std: args.kstd, rank: args.rank, ..Default::default() };
    let outcome = with_budget(args.common.budget_seconds, move || {
        let outcome = rank_reduce(&state, &opts)?;
        let fidelity = fidelity(&state, &outcome.state)?;
        Ok((outcome, fidelity))
    })?;
    let (outcome, (fidelity, method)) = outcome;
    let report = json!({
        "fidelity": fidelity,
        "fidelity_method": method,
        "count": outcome.state.full_form_count(),
        "n_weights": outcome.state.num_weights(),
        "rank": outcome.rank,
        "mixed": outcome.mixed,
        "r_prime": outcome.mixed.then_some(outcome.rank),
        "k_std": outcome.k_std,
        "nu": outcome.nu,
        "eps_out": outcome.eps_out,
        "captured_weight": outcome.captured_weight,
        "provenance": Provenance::new(&text, None),
    });
    let out = &args.common.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write(&out.join("state.json"), &outcome.state.to_json()?)?;
    write_json(&out.join("reduce.json"), &report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Herald(a) => cmd_herald(a),
        Command::Wigner(a) => cmd_wigner(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Reduce(a) => cmd_reduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
