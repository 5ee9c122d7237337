use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use portqubo::bench::{
    load_plan, parse_external_csv, parse_report_csv, render_csv, render_markdown,
    run_benchmark_with_workers, workers_from_env, ReportFormat,
};
use portqubo::ingest::{
    compute_stats_with, generate_synthetic, load_instance, load_prices_csv, load_universe,
    save_instance, save_universe, ReturnKind, StatsOptions, SyntheticSpec,
};
use portqubo::penalty::{
    default_grid, escalate_penalties, grid_search, lambda_sweep, linspace, runs_csv,
    DEFAULT_GRID_FACTORS, LAMBDA2_NOTE,
};
use portqubo::qubo::{read_qubo, write_qubo};
use portqubo::{
    build_qubo, decode, estimate_lambdas, solve_exhaustive_subsets, Error, PenaltyParams,
    PortfolioInstance, QuboMatrix, QuboSolver, ReturnMode, SlackEncoding, SolverConfig,
};

#[derive(Parser)]
#[command(
    name = "portqubo",
    version,
    about = "Portfolio selection as QUBO: build, solve, tune and benchmark"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price CSV to universe JSON (μ and Σ in percent).
    Ingest {
        prices: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Use log returns instead of simple returns.
        #[arg(long)]
        log_returns: bool,
        /// Multiplier applied to μ.
        #[arg(long, default_value_t = 1.0)]
        mu_scale: f64,
    },
    /// Universe JSON plus (n, R*, mode) to instance JSON.
    MakeInstance {
        universe: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        r_star: f64,
        #[arg(long, default_value = "none")]
        mode: ReturnMode,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Seeded factor-model instance.
    Synth {
        #[arg(long)]
        assets: usize,
        #[arg(long)]
        factors: usize,
        #[arg(long)]
        seed: u64,
        /// Assets to select; defaults to a quarter of the universe.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        r_star: f64,
        #[arg(long, default_value = "none")]
        mode: ReturnMode,
        #[arg(long, default_value_t = 1.0)]
        floor: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        return_low: f64,
        #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
        return_high: f64,
        /// Round μ to whole numbers.
        #[arg(long)]
        integer_returns: bool,
        /// Mean of the factor loadings (positive values correlate assets).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        loading_mean: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Instance JSON to QUBO file.
    Build {
        instance: PathBuf,
        #[command(flatten)]
        penalties: PenaltyArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve a QUBO file, or an instance JSON (encoded on the fly; `exact`
    /// enumerates feasible subsets directly).
    Solve {
        input: PathBuf,
        #[arg(long, default_value = "sa")]
        solver: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        time_limit: Option<f64>,
        #[command(flatten)]
        penalties: PenaltyArgs,
        /// Write the best-energy trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Grid search over (λ₁, λ₂).
    Tune {
        instance: PathBuf,
        #[arg(long, default_value = "sa")]
        solver: String,
        /// Comma-separated λ₁ values; defaults to multiples of λ̂₁.
        #[arg(long, value_delimiter = ',')]
        grid1: Option<Vec<f64>>,
        /// Comma-separated λ₂ values; defaults to multiples of λ̂₂.
        #[arg(long, value_delimiter = ',')]
        grid2: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[command(flatten)]
        encoding: EncodingArgs,
        /// Write every run as CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve at evenly spaced λ₁ values.
    Sweep {
        instance: PathBuf,
        #[arg(long)]
        lambda1_from: f64,
        #[arg(long)]
        lambda1_to: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, default_value_t = 0.0)]
        lambda2: f64,
        #[arg(long, default_value = "exact")]
        solver: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        encoding: EncodingArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a benchmark plan.
    Bench {
        plan: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Write zero into the timing column.
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render a benchmark CSV.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Externally produced results (`instance,solver,risk`).
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PenaltyArgs {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    /// Use λ̂ for any λ not given explicitly.
    #[arg(long)]
    estimate: bool,
    /// Double the penalties (from the chosen start) until the exact QUBO
    /// optimum satisfies the constraints; needs a QUBO of at most 24 variables.
    #[arg(long)]
    escalate: bool,
    #[command(flatten)]
    encoding: EncodingArgs,
}

#[derive(Args)]
struct EncodingArgs {
    /// Slack weights 2¹…2^K instead of 2⁰…2^(K−1).
    #[arg(long)]
    literal_slack: bool,
}

impl EncodingArgs {
    fn encoding(&self) -> SlackEncoding {
        if self.literal_slack {
            SlackEncoding::Literal
        } else {
            SlackEncoding::ZeroBased
        }
    }
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn solver_by_name(name: &str) -> CliResult<SolverConfig> {
    SolverConfig::by_name(name).ok_or_else(|| {
        usage(format!(
            "unknown solver '{name}' (expected sa, tabu, ga or exact)"
        ))
    })
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            CliError::Data(Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn bits(x: &[bool]) -> String {
    let inner: Vec<&str> = x.iter().map(|&b| if b { "1" } else { "0" }).collect();
    format!("[{}]", inner.join(","))
}

/// Resolves penalties for `instance`, printing estimates when they are used.
fn resolve_penalties(args: &PenaltyArgs, instance: &PortfolioInstance) -> CliResult<PenaltyParams> {
    let none = instance.return_mode() == ReturnMode::None;
    let (mut l1, mut l2) = (args.lambda1, args.lambda2);
    if args.estimate {
        let est = estimate_lambdas(instance)?;
        println!("lambda1_hat={}", est.lambda1_hat);
        println!("lambda2_hat={}", est.lambda2_hat);
        if !none {
            println!("note: {LAMBDA2_NOTE}");
        }
        l1 = l1.or(Some(est.lambda1_hat));
        l2 = l2.or(Some(est.lambda2_hat));
    }
    let l1 = l1.ok_or_else(|| usage("give --lambda1 or --estimate"))?;
    let l2 = if none { 0.0 } else { l2.unwrap_or(0.0) };
    let mut params = PenaltyParams::new(args.lambda0, l1, l2)?;
    if args.escalate {
        let esc = escalate_penalties(
            instance,
            &SolverConfig::Exact,
            params,
            20,
            args.encoding.encoding(),
            0,
        )?;
        if !esc.settled {
            log::warn!("penalties did not settle after {} doublings", esc.doublings);
        }
        println!("escalated {} times", esc.doublings);
        params = esc.params;
    }
    println!("lambda1={}", params.lambda1);
    println!("lambda2={}", params.lambda2);
    Ok(params)
}

fn is_qubo_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "qubo")
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest {
            prices,
            output,
            log_returns,
            mu_scale,
        } => {
            let panel = load_prices_csv(&prices)?;
            let options = StatsOptions {
                kind: if log_returns {
                    ReturnKind::Log
                } else {
                    ReturnKind::Simple
                },
                mu_scale,
            };
            let universe = compute_stats_with(&panel, &options)?;
            save_universe(&universe, &output)?;
            println!(
                "{} assets over {} periods -> {}",
                universe.len(),
                panel.periods(),
                output.display()
            );
        }
        Command::MakeInstance {
            universe,
            n,
            r_star,
            mode,
            output,
        } => {
            let inst = PortfolioInstance::new(load_universe(&universe)?, n, r_star, mode)?;
            save_instance(&inst, &output)?;
            println!("wrote {}", output.display());
        }
        Command::Synth {
            assets,
            factors,
            seed,
            n,
            r_star,
            mode,
            floor,
            return_low,
            return_high,
            integer_returns,
            loading_mean,
            output,
        } => {
            let spec = SyntheticSpec {
                n_assets: assets,
                n_factors: factors,
                idiosyncratic_floor: floor,
                return_range: (return_low, return_high),
                seed,
                integer_returns,
                loading_mean,
            };
            let n = n.unwrap_or((assets / 4).max(1));
            let inst = PortfolioInstance::new(generate_synthetic(&spec)?, n, r_star, mode)?;
            save_instance(&inst, &output)?;
            println!("wrote {}", output.display());
        }
        Command::Build {
            instance,
            penalties,
            output,
        } => {
            let inst = load_instance(&instance)?;
            let params = resolve_penalties(&penalties, &inst)?;
            let (q, layout) = build_qubo(&inst, &params, penalties.encoding.encoding())?;
            write_out(Some(&output), &write_qubo(&q, Some(&layout)))?;
            println!("qubo={} dim={} nnz={}", output.display(), q.dim(), q.nnz());
        }
        Command::Solve {
            input,
            solver,
            seed,
            restarts,
            time_limit,
            penalties,
            trace,
        } => {
            let mut config = solver_by_name(&solver)?;
            if let Some(r) = restarts {
                config.set_restarts(r);
            }
            config.set_time_limit(time_limit);
            if is_qubo_file(&input) {
                let (q, layout) = read_qubo(&read_text(&input)?)?;
                solve_qubo(&q, layout.as_ref(), &config, seed, trace.as_deref())?;
            } else {
                let inst = load_instance(&input)?;
                if matches!(config, SolverConfig::Exact)
                    && penalties.lambda1.is_none()
                    && !penalties.estimate
                {
                    let sol = solve_exhaustive_subsets(&inst)?;
                    println!("x={}", bits(&sol.x));
                    println!("risk={}", sol.risk);
                    println!("return={}", sol.ret);
                    println!("feasible={}", sol.feasible);
                    return Ok(());
                }
                let params = resolve_penalties(&penalties, &inst)?;
                let (q, layout) = build_qubo(&inst, &params, penalties.encoding.encoding())?;
                let result = config.solve(&q, seed)?;
                if let Some(path) = &trace {
                    write_out(Some(path), &result.trace_csv())?;
                }
                let sol = decode(&inst, &layout, &result.bits)?;
                println!("x={}", bits(&sol.x));
                println!("risk={}", sol.risk);
                println!("return={}", sol.ret);
                println!("cardinality={}", sol.cardinality);
                println!("feasible={}", sol.feasible);
                println!("energy={}", result.energy);
                println!("qubo_dim={}", q.dim());
                println!("wall_time_s={}", result.wall_time_s);
            }
        }
        Command::Tune {
            instance,
            solver,
            grid1,
            grid2,
            seeds,
            encoding,
            output,
        } => {
            let inst = load_instance(&instance)?;
            let config = solver_by_name(&solver)?;
            let (g1, g2) = match (grid1, grid2) {
                (Some(a), Some(b)) => (a, b),
                (a, b) => {
                    let est = estimate_lambdas(&inst)?;
                    let l2_default = if inst.return_mode() == ReturnMode::None {
                        vec![0.0]
                    } else {
                        default_grid(est.lambda2_hat, &DEFAULT_GRID_FACTORS)
                    };
                    (
                        a.unwrap_or_else(|| default_grid(est.lambda1_hat, &DEFAULT_GRID_FACTORS)),
                        b.unwrap_or(l2_default),
                    )
                }
            };
            let result = grid_search(&inst, &config, &g1, &g2, &seeds, encoding.encoding())?;
            if let Some(path) = &output {
                write_out(
                    Some(path),
                    &runs_csv(result.cells.iter().flat_map(|c| &c.runs)),
                )?;
            }
            println!("lambda1={}", result.best.lambda1);
            println!("lambda2={}", result.best.lambda2);
            println!("feasible={}", result.feasible);
            if let Some(r) = result.best_risk {
                println!("risk={r}");
            }
        }
        Command::Sweep {
            instance,
            lambda1_from,
            lambda1_to,
            points,
            lambda2,
            solver,
            seed,
            encoding,
            output,
        } => {
            if points == 0 {
                return Err(usage("--points must be positive"));
            }
            let inst = load_instance(&instance)?;
            let config = solver_by_name(&solver)?;
            let base = PenaltyParams::new(1.0, lambda1_from, lambda2)?;
            let values = linspace(lambda1_from, lambda1_to, points);
            let runs = lambda_sweep(&inst, &config, &values, &base, encoding.encoding(), seed)?;
            write_out(output.as_deref(), &runs_csv(&runs))?;
        }
        Command::Bench {
            plan,
            output,
            format,
            no_timing,
            workers,
        } => {
            let format: ReportFormat = format.parse().map_err(usage)?;
            let parsed = load_plan(&plan)?;
            let base = plan.parent().filter(|p| !p.as_os_str().is_empty());
            let mut report =
                run_benchmark_with_workers(&parsed, base, workers.or_else(workers_from_env))?;
            if no_timing {
                report = report.without_timing();
            }
            for r in report.rows.iter().filter(|r| r.error.is_some()) {
                log::warn!(
                    "{} / {} / seed {}: {}",
                    r.instance,
                    r.solver,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            write_out(output.as_deref(), &report.render(format)?)?;
        }
        Command::Report {
            input,
            format,
            external,
            output,
        } => {
            let format: ReportFormat = format.parse().map_err(usage)?;
            let report = parse_report_csv(&read_text(&input)?)?;
            let text = match format {
                ReportFormat::Csv => render_csv(&report)?,
                ReportFormat::Markdown => {
                    let ext = match &external {
                        Some(p) => parse_external_csv(&read_text(p)?)?,
                        None => Vec::new(),
                    };
                    render_markdown(&report, &ext)?
                }
            };
            write_out(output.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn solve_qubo(
    q: &QuboMatrix,
    layout: Option<&portqubo::VariableLayout>,
    config: &SolverConfig,
    seed: u64,
    trace: Option<&Path>,
) -> CliResult {
    let result = config.solve(q, seed)?;
    if let Some(path) = trace {
        write_out(Some(path), &result.trace_csv())?;
    }
    println!("bits={}", bits(&result.bits));
    println!("energy={}", result.energy);
    if let Some(layout) = layout {
        let (x, y) = result.bits.split_at(layout.n_assets);
        println!("x={}", bits(x));
        if layout.n_slack > 0 {
            println!("slack_surplus={}", layout.surplus(y));
        }
    }
    println!("evaluations={}", result.evaluations);
    println!("wall_time_s={}", result.wall_time_s);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `portqubo --help` for usage");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Infeasible) { 3 } else { 2 })
        }
    }
}
