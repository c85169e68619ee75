//! `mrcr`: generate clutter scenes, plan them, run experiment suites and
//! export traces.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrcr_core::bench::{self, BenchConfig, BenchError, CellStatus};
use mrcr_core::motion::Trace;
use mrcr_core::planners::{self, Algorithm, HeuristicKind, Plan, PlannerError, PlannerOptions};
use mrcr_core::scene::{self, Fleet, GenMode, GenParams, SceneError};
use mrcr_core::world::{World, MAX_OBJECTS};

const EXIT_FLAGS: u8 = 2;
const EXIT_GEN: u8 = 3;
const EXIT_INPUT: u8 = 4;
const EXIT_BUDGET: u8 = 5;

/// Multi-robot clutter removal planner.
///
/// Exit codes: 0 success, 2 invalid flags or config, 3 generation failure,
/// 4 infeasible or invalid instance or unreadable input, 5 budget exhausted
/// without a solution.
#[derive(Debug, Parser)]
#[command(name = "mrcr", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random instances into a corpus directory
    /// (<out>/<mode>/<n>/<seed>.inst).
    Gen(GenArgs),
    /// Plan one instance and write the plan and its trace.
    Plan(PlanArgs),
    /// Run an experiment suite described by a TOML config.
    Bench(BenchArgs),
    /// Flatten a trace into a per-timestep table.
    Replay(ReplayArgs),
    /// Check an instance file against every scene invariant.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Object placement mode.
    #[arg(long, value_parser = parse_mode)]
    mode: GenMode,
    /// Number of objects.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=MAX_OBJECTS as i64))]
    n: u32,
    /// Number of robots.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// Number of seeds (one file each).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Corpus root directory.
    #[arg(long)]
    out: PathBuf,
    /// Exit width in meters [default: the narrow single-lane exit].
    #[arg(long)]
    exit_width: Option<f64>,
    /// Widen the exit with the fleet so every robot has its own slot.
    #[arg(long, conflicts_with = "exit_width")]
    scaled_exit: bool,
    /// Workspace side length in meters.
    #[arg(long)]
    side: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Heuristic {
    Strengthened,
    PaperFaithful,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    /// Planner.
    #[arg(long, value_parser = parse_algorithm)]
    algo: Algorithm,
    /// Treat objects committed to robots as already removed when testing
    /// reachability.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    lookahead: Switch,
    /// Wall-clock budget in seconds (A*).
    #[arg(long)]
    budget: Option<f64>,
    /// Plan file to write (JSON); the trace goes to <out>.trace.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the robot count of the instance.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: Option<u32>,
    /// MCTS iterations per decision.
    #[arg(long)]
    mcts_iterations: Option<usize>,
    /// MCTS exploration constant.
    #[arg(long)]
    exploration_c: Option<f64>,
    /// A* lower bound.
    #[arg(long, value_enum, default_value_t = Heuristic::Strengthened)]
    heuristic: Heuristic,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Suite config (TOML, BenchConfig field names).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads [default: number of cores].
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReplayFormat {
    Csv,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Trace file (line-delimited JSON).
    #[arg(long)]
    trace: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = ReplayFormat::Csv)]
    format: ReplayFormat,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
}

fn parse_mode(s: &str) -> Result<GenMode, String> {
    s.parse()
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse()
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Plan(a) => plan(a),
        Command::Bench(a) => run_bench(a),
        Command::Replay(a) => replay(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mrcr: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::new(EXIT_INPUT, format!("cannot access {}: {e}", path.display()))
}

fn gen(a: GenArgs) -> CmdResult {
    let k = a.k as usize;
    let mut fleet = if a.scaled_exit {
        Fleet::scaled(k)
    } else {
        Fleet::narrow(k)
    };
    if let Some(w) = a.exit_width {
        if !(w.is_finite() && w > 0.0) {
            return Err(Failure::new(
                EXIT_FLAGS,
                "--exit-width must be a positive number of meters",
            ));
        }
        fleet.exit_width = w;
    }
    if let Some(side) = a.side {
        if !(side.is_finite() && side > 0.0) {
            return Err(Failure::new(
                EXIT_FLAGS,
                "--side must be a positive number of meters",
            ));
        }
        fleet.side_l = side;
    }
    let params = GenParams::new(a.mode, a.n as usize);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for seed in a.first_seed..a.first_seed + a.seeds {
        let inst = scene::generate(&params, &fleet, seed)
            .map_err(|e| Failure::new(EXIT_GEN, format!("seed {seed}: {e}")))?;
        let path = scene::corpus_path(&a.out, a.mode, params.n, seed);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| {
                Failure::new(EXIT_GEN, format!("cannot create {}: {e}", dir.display()))
            })?;
        }
        scene::save(&inst, &path).map_err(|e| Failure::new(EXIT_GEN, e.to_string()))?;
        let _ = writeln!(
            out,
            "{} mode={} n={} k={} seed={} exit_width={:.3}",
            path.display(),
            a.mode,
            inst.n(),
            inst.robot_count,
            seed,
            inst.exit_width
        );
    }
    Ok(())
}

fn load_instance(path: &Path) -> Result<scene::Instance, Failure> {
    scene::load(path).map_err(|e| match e {
        SceneError::Io { .. }
        | SceneError::Parse { .. }
        | SceneError::SchemaMismatch { .. }
        | SceneError::Invalid(_) => Failure::new(EXIT_INPUT, e.to_string()),
        SceneError::GenerationBudgetExceeded { .. } => Failure::new(EXIT_GEN, e.to_string()),
    })
}

fn plan(a: PlanArgs) -> CmdResult {
    if let Some(b) = a.budget {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Failure::new(
                EXIT_FLAGS,
                "--budget must be a non-negative number of seconds",
            ));
        }
    }
    let mut inst = load_instance(&a.instance)?;
    if let Some(k) = a.k {
        inst = inst.with_robot_count(k as usize);
    }
    let world = World::new(&inst);
    let defaults = PlannerOptions::default();
    let opts = PlannerOptions {
        lookahead: a.lookahead == Switch::On,
        time_budget: a.budget.map(Duration::from_secs_f64),
        mcts_iterations: a.mcts_iterations.unwrap_or(defaults.mcts_iterations),
        exploration_c: a.exploration_c.unwrap_or(defaults.exploration_c),
        heuristic: match a.heuristic {
            Heuristic::Strengthened => HeuristicKind::Strengthened,
            Heuristic::PaperFaithful => HeuristicKind::PaperFaithful,
        },
        ..defaults
    };
    let plan = match planners::run(&world, a.algo, &opts) {
        Ok(plan) => plan,
        Err(PlannerError::BudgetExhausted {
            incumbent: Some(plan),
        }) => {
            eprintln!("mrcr: time budget exhausted; reporting the best plan found");
            *plan
        }
        Err(e @ PlannerError::BudgetExhausted { incumbent: None }) => {
            return Err(Failure::new(EXIT_BUDGET, e.to_string()));
        }
        Err(e) => return Err(Failure::new(EXIT_INPUT, e.to_string())),
    };
    if let Some(out) = &a.out {
        write_plan(&plan, out)?;
    }
    println!(
        "{} makespan={:.3} compute_time={:.3} nodes_expanded={}",
        plan.algorithm, plan.makespan, plan.compute_time, plan.nodes_expanded
    );
    Ok(())
}

fn trace_path(plan_path: &Path) -> PathBuf {
    let mut name = plan_path.file_name().unwrap_or_default().to_os_string();
    name.push(".trace.jsonl");
    plan_path.with_file_name(name)
}

fn write_plan(plan: &Plan, out: &Path) -> CmdResult {
    let trace = trace_path(out);
    let trace_name = trace.file_name().map(|n| n.to_string_lossy().into_owned());
    let json =
        serde_json::to_string_pretty(&plan.export(trace_name.as_deref())).expect("plan serializes");
    fs::write(out, json + "\n").map_err(|e| io_failure(out, e))?;
    fs::write(&trace, plan.trace.to_jsonl()).map_err(|e| io_failure(&trace, e))
}

fn run_bench(a: BenchArgs) -> CmdResult {
    let text = fs::read_to_string(&a.config).map_err(|e| io_failure(&a.config, e))?;
    let config =
        BenchConfig::from_toml_str(&text).map_err(|e| Failure::new(EXIT_FLAGS, e.to_string()))?;
    let progress = |r: &bench::BenchRecord| {
        let makespan = r.makespan.map_or("-".to_string(), |m| format!("{m:.3}"));
        let la = if r.lookahead { "on" } else { "off" };
        let status = match r.status {
            CellStatus::Ok => "ok",
            CellStatus::Timeout => "timeout",
            CellStatus::Failed => "failed",
        };
        eprintln!(
            "{} k={} {} lookahead={la} {status} makespan={makespan}",
            r.instance_id, r.k, r.algorithm
        );
    };
    let records = bench::run_suite_with(&config, a.jobs, &progress).map_err(|e| match e {
        BenchError::Config(_) => Failure::new(EXIT_FLAGS, e.to_string()),
        BenchError::Scene(_) => Failure::new(EXIT_INPUT, e.to_string()),
        BenchError::Io(_) | BenchError::Csv(_) => {
            Failure::new(EXIT_INPUT, format!("cannot write results: {e}"))
        }
    })?;
    let failed = records
        .iter()
        .filter(|r| r.status == CellStatus::Failed)
        .count();
    let timeouts = records
        .iter()
        .filter(|r| r.status == CellStatus::Timeout)
        .count();
    println!(
        "{} records ({failed} failed, {timeouts} timeout) -> {}",
        records.len(),
        config.output_dir.join("results.csv").display()
    );
    Ok(())
}

fn replay(a: ReplayArgs) -> CmdResult {
    let text = fs::read_to_string(&a.trace).map_err(|e| io_failure(&a.trace, e))?;
    let trace = if text.trim().is_empty() {
        Trace::default()
    } else {
        Trace::from_jsonl(&text)
            .map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", a.trace.display())))?
    };
    let table = match a.format {
        ReplayFormat::Csv => trace.replay_csv(),
    };
    match &a.out {
        Some(path) => fs::write(path, table).map_err(|e| io_failure(path, e)),
        None => {
            let _ = io::stdout().lock().write_all(table.as_bytes());
            Ok(())
        }
    }
}

fn validate(a: ValidateArgs) -> CmdResult {
    let text = fs::read_to_string(&a.instance).map_err(|e| io_failure(&a.instance, e))?;
    let inst =
        scene::from_str_unchecked(&text).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    let report = scene::validate(&inst);
    if report.is_valid() {
        println!(
            "{}: valid (n={}, k={})",
            a.instance.display(),
            inst.n(),
            inst.robot_count
        );
        Ok(())
    } else {
        for v in &report.violations {
            println!("{}: {v}", a.instance.display());
        }
        Err(Failure::new(
            EXIT_INPUT,
            format!("{} is invalid", a.instance.display()),
        ))
    }
}
