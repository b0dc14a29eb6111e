use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use inertia_alloc::allocator::{evaluate, run, Method, NullSink, TraceSink};
use inertia_alloc::bundle::{
    export_bundle, metric_table, metrics_json, outcome_label, CsvTraceSink, MetricsFile, ResultBundle,
};
use inertia_alloc::case::{load_case, LoadedCase};
use inertia_alloc::grid::SwingModel;
use inertia_alloc::norms::norm_report;
use inertia_alloc::sim::{step_response, write_csv, DEFAULT_DT, DEFAULT_HORIZON};
use inertia_alloc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "inertia-alloc",
    version,
    about = "Virtual inertia and damping allocation by sequential LP"
)]
struct Cli {
    /// Log defaults and iteration progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Uniform,
    Multistep,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::Uniform => Method::Uniform,
            MethodArg::Multistep => Method::Multistep,
        }
    }

    fn label(self) -> &'static str {
        match self {
            MethodArg::Uniform => "uniform",
            MethodArg::Multistep => "multistep",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the allocator and write the result files.
    Optimize {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Drop the RoCoF and nadir rows.
        #[arg(long)]
        no_freq_constraints: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectrum and metrics of the allocation given in the case.
    Analyze {
        #[arg(long)]
        case: PathBuf,
    },
    /// H2 and H-infinity norms of the allocation given in the case.
    Norms {
        #[arg(long)]
        case: PathBuf,
    },
    /// Step response of unit speeds to a power deficit at the disturbance bus.
    Simulate {
        #[arg(long)]
        case: PathBuf,
        /// Deficit in p.u. on the system base; defaults to the case disturbance.
        #[arg(long = "dP")]
        dp: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the allocator and stream the iteration trace as CSV.
    TraceExport {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        no_freq_constraints: bool,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, no_freq: bool) -> Result<LoadedCase> {
    let mut c = load_case(path)?;
    if no_freq {
        c.loop_cfg.freq_constraints = false;
    }
    Ok(c)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    println!("{s}");
    Ok(())
}

#[derive(Serialize)]
struct Mode {
    re: f64,
    im: f64,
    zeta: f64,
}

#[derive(Serialize)]
struct Analysis {
    case: String,
    zeta_floor: f64,
    zeta_floor_met: bool,
    rocof_limit_met: bool,
    nadir_limit_met: bool,
    #[serde(flatten)]
    metrics: inertia_alloc::bundle::MetricTable,
    modes: Vec<Mode>,
}

#[derive(Serialize)]
struct Norms {
    case: String,
    stable: bool,
    h2: Option<f64>,
    hinf: Option<f64>,
    hinf_bracket: Option<(f64, f64)>,
}

/// Runs the allocator; `Ok(false)` when it stopped without converging.
fn optimize(c: &LoadedCase, m: MethodArg, out: &Path) -> Result<bool> {
    let res = run(
        &SwingModel,
        &c.grid,
        &c.initial_allocation(),
        &c.loop_cfg,
        &c.costs,
        m.method(),
        &mut NullSink,
    )?;
    let bundle = ResultBundle::new(c, m.label(), &res)?;
    export_bundle(&bundle, out)?;
    let mf: MetricsFile = bundle.metrics_file();
    print!("{}", metrics_json(&mf));
    if !res.trace.outcome.is_converged() {
        eprintln!("{}", outcome_label(&res.trace.outcome));
    }
    Ok(res.trace.outcome.is_converged())
}

fn execute(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Optimize {
            case,
            method,
            no_freq_constraints,
            out,
        } => optimize(&load(&case, no_freq_constraints)?, method, &out),
        Cmd::Analyze { case } => {
            let c = load(&case, false)?;
            let alloc = c.initial_allocation();
            let ev = evaluate(&SwingModel, &c.grid, &alloc, c.loop_cfg.filter_tol)?;
            let l = &c.loop_cfg;
            print_json(&Analysis {
                case: c.name.clone(),
                zeta_floor: l.zeta_floor,
                zeta_floor_met: ev.worst.zeta_min >= l.zeta_floor,
                rocof_limit_met: ev.freq.rocof_max.abs() <= l.rocof_limit,
                nadir_limit_met: ev.freq.nadir.abs() <= l.nadir_limit,
                metrics: metric_table(&c.grid, &alloc, l.filter_tol)?,
                modes: ev
                    .modes
                    .lambdas
                    .iter()
                    .zip(&ev.modes.zetas)
                    .map(|(l, &z)| Mode {
                        re: l.re,
                        im: l.im,
                        zeta: z,
                    })
                    .collect(),
            })?;
            Ok(true)
        }
        Cmd::Norms { case } => {
            let c = load(&case, false)?;
            let model = inertia_alloc::grid::linearize(&c.grid, &c.initial_allocation())?;
            let r = norm_report(&model.state_space(), inertia_alloc::bundle::HINF_TOL)?;
            print_json(&Norms {
                case: c.name.clone(),
                stable: r.stable,
                h2: r.h2,
                hinf: r.hinf,
                hinf_bracket: r.hinf_bracket,
            })?;
            Ok(true)
        }
        Cmd::Simulate {
            case,
            dp,
            horizon,
            dt,
            out,
        } => {
            let c = load(&case, false)?;
            let model = inertia_alloc::grid::linearize(&c.grid, &c.initial_allocation())?;
            let dp = dp.unwrap_or(c.grid.disturbance.dp_mw / c.grid.base_power);
            let tr = step_response(&model.state_space(), dp, horizon, dt)?;
            write_csv(&tr, output(&out)?)?;
            Ok(true)
        }
        Cmd::TraceExport {
            case,
            method,
            no_freq_constraints,
            out,
        } => {
            let c = load(&case, no_freq_constraints)?;
            let mut sink = CsvTraceSink::new(&c.grid, output(&out)?)?;
            let res = run(
                &SwingModel,
                &c.grid,
                &c.initial_allocation(),
                &c.loop_cfg,
                &c.costs,
                method.method(),
                &mut sink as &mut dyn TraceSink<f64>,
            )?;
            sink.finish()?;
            if !res.trace.outcome.is_converged() {
                eprintln!("{}", outcome_label(&res.trace.outcome));
            }
            Ok(res.trace.outcome.is_converged())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
    match execute(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
