//! Command-line entry point.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use super::config::{ConfigError, ExperimentConfig, Resolved};
use super::experiment::{run_experiment, write_outputs};
use super::metrics::{fmt12, round12};
use crate::dynamics::{Engine, Event, EventKind, SimConfig};
use crate::exact::{
    brute_force_optimum, build_generator, connectivity_check, detailed_balance, enumerate_states, gibbs_measure,
    log_rho, nash_check, reachability_check, stationary_distribution, stationary_residual, total_variation,
    unreachable_states, ExactError,
};
use crate::feasibility::{hall_check_bruteforce, hall_check_maxflow, sufficient_condition, BRUTE_FORCE_MAX_UNITS};
use crate::moves::MoveError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_GUARD: i32 = 2;

/// Tolerance reported as the pass threshold for stationary and balance checks.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "coopstore", version, about = "Cooperative storage allocation: simulation and exact analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Check {
    Stationary,
    Balance,
    Connectivity,
    Nash,
    Reach,
    Optimum,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo batch and write metrics, summary and traces.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Report wall_ms as 0 for byte-identical outputs.
        #[arg(long)]
        deterministic: bool,
        /// Skip per-replica JSONL traces.
        #[arg(long)]
        no_traces: bool,
    },
    /// Hall-condition report for the configured instance.
    Feasibility {
        #[command(flatten)]
        common: Common,
    },
    /// Exact analysis on a small instance.
    Exact {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        check: Check,
        /// Inverse noise; defaults to the configured gamma0.
        #[arg(long)]
        gamma: Option<f64>,
        /// Include on/off states (uses sim.nu_on and sim.nu_off).
        #[arg(long)]
        churn: bool,
    },
    /// Potential and mass against time from a JSONL trace, as CSV.
    TraceStats {
        trace: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Guard(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Guard(_) => EXIT_GUARD,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Guard(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Family(MoveError::FullFamilyTooLarge { .. }) => Failure::Guard(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<ExactError> for Failure {
    fn from(e: ExactError) -> Self {
        match e {
            ExactError::TooManyStates { .. }
            | ExactError::GeneratorTooLarge { .. }
            | ExactError::RowTooLarge { .. }
            | ExactError::Family(MoveError::FullFamilyTooLarge { .. }) => Failure::Guard(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<Resolved, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.engine {
        cfg.sim.engine = match e {
            EngineArg::Discrete => Engine::DiscreteTime,
            EngineArg::Continuous => Engine::ContinuousTime,
        };
    }
    let base = common.config.parent().unwrap_or(Path::new("."));
    Ok(cfg.resolve(base)?)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json values serialize") + "\n"));
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            common,
            replicas,
            out_dir,
            deterministic,
            no_traces,
        } => {
            let mut r = load(&common)?;
            if let Some(k) = replicas {
                if k == 0 {
                    return Err(Failure::Config("--replicas must be positive".into()));
                }
                r.replicas = k;
            }
            r.deterministic |= deterministic;
            r.traces &= !no_traces;
            let result = run_experiment(&r).map_err(|e| Failure::Config(e.to_string()))?;
            if !result.feasible {
                eprintln!("warning: instance violates the Hall condition; complete allocation is impossible");
            }
            write_outputs(&r, &result, &out_dir).map_err(|e| io_failure(&out_dir, e))?;
            emit(&super::experiment::metrics_csv(&result));
            Ok(())
        }
        Command::Feasibility { common } => {
            let r = load(&common)?;
            let flow = hall_check_maxflow(&r.instance);
            let brute = hall_check_bruteforce(&r.instance).ok();
            print_json(&json!({
                "n": r.instance.n(),
                "max_flow": flow,
                "brute_force": brute,
                "brute_force_limit": BRUTE_FORCE_MAX_UNITS,
                "sufficient_condition": sufficient_condition(&r.instance),
            }));
            Ok(())
        }
        Command::Exact {
            common,
            check,
            gamma,
            churn,
        } => {
            let r = load(&common)?;
            let gamma = gamma.unwrap_or(r.sim.gamma0);
            print_json(&exact_report(&r, check, gamma, churn)?);
            Ok(())
        }
        Command::TraceStats { trace, out } => {
            let csv = trace_stats(&trace)?;
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| io_failure(&path, e))?,
                None => emit(&csv),
            }
            Ok(())
        }
    }
}

fn rows_json(w: &crate::model::AllocationMatrix) -> Value {
    json!(w.rows())
}

fn exact_report(r: &Resolved, check: Check, gamma: f64, churn: bool) -> Result<Value, Failure> {
    let inst = &r.instance;
    let spec = &r.spec;
    let family = &r.sim.move_family;
    let name = format!("{check:?}").to_lowercase();
    Ok(match check {
        Check::Stationary | Check::Balance => {
            let cfg: &SimConfig = &r.sim;
            if churn && (cfg.nu_on.iter().any(|&v| v <= 0.0) || cfg.nu_off.iter().any(|&v| v <= 0.0)) {
                return Err(Failure::Config("--churn needs positive sim.nu_on and sim.nu_off".into()));
            }
            if cfg.nu_act.iter().any(|&v| v <= 0.0) {
                return Err(Failure::Config("exact checks need positive sim.nu_act".into()));
            }
            let gen = build_generator(inst, spec, family, cfg, gamma, churn)?;
            if check == Check::Balance {
                let rho = log_rho(inst, spec, cfg, &gen, gamma, churn);
                let b = detailed_balance(&gen, &rho);
                json!({
                    "check": name, "gamma": gamma, "churn": churn, "states": gen.states.len(),
                    "pairs": b.pairs, "max_relative_error": b.max_relative_error,
                    "tolerance": EXACT_TOLERANCE, "passed": b.max_relative_error <= EXACT_TOLERANCE,
                })
            } else {
                match stationary_distribution(&gen) {
                    Ok(mu) => {
                        let closed = gibbs_measure(inst, spec, cfg, &gen, gamma, churn);
                        let tv = total_variation(&mu, &closed);
                        json!({
                            "check": name, "gamma": gamma, "churn": churn, "states": gen.states.len(),
                            "total_variation": tv, "residual": stationary_residual(&gen, &mu),
                            "tolerance": EXACT_TOLERANCE, "passed": tv <= EXACT_TOLERANCE,
                        })
                    }
                    Err(ExactError::Reducible) => json!({
                        "check": name, "gamma": gamma, "churn": churn, "states": gen.states.len(),
                        "reducible": true, "passed": false,
                    }),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Check::Connectivity => {
            let connected = connectivity_check(inst, family)?;
            let states = enumerate_states(inst, true)?.len();
            json!({
                "check": name, "states": states, "connected": connected,
                "strict_hall": hall_check_maxflow(inst).strict,
            })
        }
        Check::Nash => {
            let targets = if r.initial_given {
                vec![r.initial.clone()]
            } else {
                brute_force_optimum(inst, spec)?.argmax
            };
            let mut reports = Vec::new();
            for w in &targets {
                let rep = nash_check(inst, spec, w)?;
                reports.push(json!({
                    "matrix": rows_json(w), "complete": w.is_complete(inst),
                    "is_nash": rep.is_nash, "deviations": rep.deviations,
                }));
            }
            json!({ "check": name, "results": reports })
        }
        Check::Reach => match r.initial_given.then_some(&r.initial) {
            Some(w0) => {
                let path = reachability_check(inst, family, w0)?;
                json!({
                    "check": name, "reached": path.is_some(),
                    "path_length": path.as_ref().map(|p| p.len()),
                    "path": path.map(|p| p.iter().map(rows_json).collect::<Vec<_>>()),
                })
            }
            None => {
                if !hall_check_maxflow(inst).feasible {
                    return Err(ExactError::Infeasible.into());
                }
                let stuck = unreachable_states(inst, family)?;
                json!({
                    "check": name, "states": enumerate_states(inst, false)?.len(),
                    "unreachable": stuck.len(), "passed": stuck.is_empty(),
                })
            }
        },
        Check::Optimum => {
            let opt = brute_force_optimum(inst, spec)?;
            json!({
                "check": name, "value": round12(opt.value),
                "argmax": opt.argmax.iter().map(rows_json).collect::<Vec<_>>(),
            })
        }
    })
}

/// CSV `t,kind,psi,mass,moves` with `moves` the cumulative move count.
pub fn trace_stats_text(text: &str, origin: &str) -> Result<String, String> {
    let mut out = String::from("t,kind,psi,mass,moves\n");
    let mut moves = 0u64;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(line).map_err(|err| format!("{origin}:{}: {err}", i + 1))?;
        if matches!(e.kind, EventKind::Allocation | EventKind::Distribution) {
            moves += 1;
        }
        let kind = serde_json::to_value(e.kind).expect("kind serializes");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt12(e.t),
            kind.as_str().unwrap_or_default(),
            fmt12(e.psi),
            e.mass,
            moves
        ));
    }
    Ok(out)
}

fn trace_stats(path: &Path) -> Result<String, Failure> {
    let file = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| io_failure(path, e))?);
        text.push('\n');
    }
    trace_stats_text(&text, &path.display().to_string()).map_err(Failure::Config)
}
