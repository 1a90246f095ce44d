//! Command line front end: estimate collision probabilities for planned
//! paths, sweep estimators across path refinements, run the full
//! chance-constrained planner, and check stored paths against a plain Monte
//! Carlo oracle.
//!
//! Tabular subcommands print CSV with the header
//! `method,waypoints,particles,p_hat,std_err,wall_ms`; `wall_ms` is zero
//! unless `--timing` is given so runs stay byte-for-byte reproducible.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use mcmp_core::cp_approx::{combine, pointwise_cps, CombineMode};
use mcmp_core::cp_mc::{estimate_cp_vr, rollout_collides, simple_mc, CpProblem};
use mcmp_core::error::{McmpError, Result};
use mcmp_core::lqg::{
    propagate_moments, simulate_rollout, synthesize, DiscreteLqgModel, TrackingLaw,
};
use mcmp_core::mcmp::{mcmp_plan, McmpConfig, McmpStatus};
use mcmp_core::planner::{time_parameterize, PlannedPath};
use mcmp_core::rng::derive_seed;
use mcmp_core::scenario::Scenario;
use mcmp_core::trajectory::{NominalTrajectory, NominalTrajectoryJson};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "mcmp", version, about = "Monte Carlo motion planning under tracking uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the collision probability of a freshly planned path.
    Estimate(EstimateArgs),
    /// Re-parameterize one planned path at several waypoint counts and
    /// estimate each, one CSV row per method and count.
    Sweep(SweepArgs),
    /// Run the chance-constrained planner (bisection over inflation).
    Plan(PlanArgs),
    /// Plain Monte Carlo estimate for a stored trajectory; the reference
    /// other estimates are judged against.
    Oracle(OracleArgs),
    /// Sample closed-loop rollouts of a stored trajectory and report
    /// collision and tracking statistics.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Vr,
    Simple,
    Additive,
    Multiplicative,
    All,
}

#[derive(Parser)]
struct EstimateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Vr)]
    method: Method,
    #[arg(long, default_value_t = 10_000)]
    particles: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Obstacle inflation the path is planned against (estimation always
    /// runs against the uninflated workspace). Defaults to the scenario's
    /// nominal_inflation.
    #[arg(long)]
    inflation: Option<f64>,
    /// Re-parameterize the path to this many waypoints.
    #[arg(long)]
    waypoints: Option<usize>,
    #[arg(long, default_value_t = false)]
    timing: bool,
}

#[derive(Parser)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma separated waypoint counts, e.g. 50,100,200.
    #[arg(long, value_delimiter = ',', required = true)]
    waypoints: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Method::All)]
    method: Method,
    #[arg(long, default_value_t = 10_000)]
    particles: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the scenario's sweep_inflation.
    #[arg(long)]
    inflation: Option<f64>,
    #[arg(long, default_value_t = false)]
    timing: bool,
}

#[derive(Parser)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the scenario's collision probability bound.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 12)]
    bisection_steps: usize,
    /// Adaptive estimator particle budget per evaluation.
    #[arg(long)]
    max_particles: Option<u64>,
    #[arg(long, default_value_t = false)]
    no_backtrack: bool,
    /// Write the accepted trajectory (with a summary) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    timing: bool,
}

#[derive(Parser)]
struct OracleArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Trajectory file: either `plan --out` output or a bare trajectory.
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    particles: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    timing: bool,
}

#[derive(Parser)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 1_000)]
    rollouts: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    // Die quietly like any pipeline tool when the reader of stdout goes
    // away; the Rust default turns SIGPIPE into a mid-print panic.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    if let Ok(v) = std::env::var("MCMP_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &McmpError) -> i32 {
    match e {
        McmpError::Io(_) | McmpError::InvalidArgument(_) => 2,
        McmpError::Scenario(_) | McmpError::Json(_) => 3,
        McmpError::Infeasible(_) => 4,
        _ => 1,
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

const CSV_HEADER: &str = "method,waypoints,particles,p_hat,std_err,wall_ms";

fn csv_row(method: &str, waypoints: usize, particles: u64, p_hat: f64, std_err: f64, ms: u128) {
    println!("{method},{waypoints},{particles},{p_hat},{std_err},{ms}");
}

/// The planned path, re-parameterized to `waypoints` states when requested
/// (dt is chosen so the whole duration splits into waypoints-1 steps).
fn parameterized(
    sc: &Scenario,
    planned: &PlannedPath,
    waypoints: Option<usize>,
) -> Result<(DiscreteLqgModel, NominalTrajectory, TrackingLaw)> {
    let dt = match waypoints {
        None => sc.dt,
        Some(k) => {
            if k < 2 {
                return Err(McmpError::InvalidArgument("waypoints must be at least 2".into()));
            }
            let duration: f64 = planned.durations.iter().sum();
            duration / (k - 1) as f64
        }
    };
    let model = sc.model_with_dt(dt)?;
    let nominal = time_parameterize(&sc.spec, &model, planned)?;
    let law = synthesize(&sc.spec, &model, nominal.horizon())?;
    Ok((model, nominal, law))
}

/// Smoothed plan at the given inflation, built from a fresh planner cache.
fn plan_geometry(sc: &Scenario, inflation: f64) -> Result<PlannedPath> {
    let model = sc.model()?;
    let cache = sc.build_cache()?;
    let (planned, _, _) = sc.plan_with_cache(&cache, &model, inflation)?;
    Ok(planned)
}

fn methods_of(m: Method) -> Vec<Method> {
    match m {
        Method::All => vec![Method::Vr, Method::Simple, Method::Additive, Method::Multiplicative],
        one => vec![one],
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Vr => "vr",
        Method::Simple => "simple",
        Method::Additive => "additive",
        Method::Multiplicative => "multiplicative",
        Method::All => "all",
    }
}

/// One CSV row per requested method for a fixed nominal path.
fn emit_estimates(
    sc: &Scenario,
    nominal: &NominalTrajectory,
    law: &TrackingLaw,
    methods: &[Method],
    particles: u64,
    seed: u64,
    timing: bool,
) -> Result<()> {
    let problem = CpProblem { law, nominal, workspace: &sc.workspace };
    let waypoints = nominal.states.len();
    // Approximations share the moment propagation; compute lazily once.
    let mut moments = None;
    for &m in methods {
        let t0 = Instant::now();
        let (particles_used, p_hat, std_err) = match m {
            Method::Vr => {
                let est = estimate_cp_vr(&problem, particles, seed)?;
                (est.particles, est.p_hat, est.std_err())
            }
            Method::Simple => {
                let est = simple_mc(&problem, particles, seed)?;
                (est.particles, est.p_hat, est.std_err())
            }
            Method::Additive | Method::Multiplicative => {
                if moments.is_none() {
                    moments = Some(propagate_moments(law));
                }
                let cps = pointwise_cps(&sc.workspace, nominal, moments.as_ref().unwrap())?;
                let mode = if m == Method::Additive {
                    CombineMode::Additive
                } else {
                    CombineMode::Multiplicative
                };
                (0, combine(&cps, mode), 0.0)
            }
            Method::All => unreachable!("expanded before dispatch"),
        };
        let ms = if timing { t0.elapsed().as_millis() } else { 0 };
        csv_row(method_name(m), waypoints, particles_used, p_hat, std_err, ms);
    }
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> Result<i32> {
    let sc = Scenario::load(&a.scenario)?;
    let inflation = a.inflation.unwrap_or(sc.nominal_inflation);
    let planned = plan_geometry(&sc, inflation)?;
    let (_, nominal, law) = parameterized(&sc, &planned, a.waypoints)?;
    println!("{CSV_HEADER}");
    emit_estimates(&sc, &nominal, &law, &methods_of(a.method), a.particles, a.seed, a.timing)?;
    Ok(0)
}

fn cmd_sweep(a: SweepArgs) -> Result<i32> {
    let sc = Scenario::load(&a.scenario)?;
    let inflation = a.inflation.unwrap_or(sc.sweep_inflation);
    // One geometric path for the whole sweep; only the parameterization
    // changes, so rows differ by discretization alone.
    let planned = plan_geometry(&sc, inflation)?;
    let methods = methods_of(a.method);
    println!("{CSV_HEADER}");
    for &k in &a.waypoints {
        let (_, nominal, law) = parameterized(&sc, &planned, Some(k))?;
        emit_estimates(&sc, &nominal, &law, &methods, a.particles, a.seed, a.timing)?;
    }
    Ok(0)
}

fn cmd_plan(a: PlanArgs) -> Result<i32> {
    let sc = Scenario::load(&a.scenario)?;
    let model = sc.model()?;
    let mut cfg = McmpConfig {
        alpha: a.alpha.unwrap_or(sc.alpha),
        bisection_steps: a.bisection_steps,
        seed: a.seed,
        max_inflation: sc.max_inflation,
        backtrack: !a.no_backtrack,
        ..McmpConfig::default()
    };
    if let Some(cap) = a.max_particles {
        cfg.adaptive.max_particles = cap;
    }
    let t0 = Instant::now();
    let out = mcmp_plan(&sc.spec, &model, &sc.workspace, &sc.start, &sc.goal, &sc.planner, &cfg)?;
    let wall_ms = if a.timing { t0.elapsed().as_millis() } else { 0 };

    let status = match out.status {
        McmpStatus::Solved => "solved",
        McmpStatus::Stuck => "stuck",
        McmpStatus::Infeasible => "infeasible",
    };
    let evals: Vec<serde_json::Value> = out
        .evals
        .iter()
        .map(|e| {
            serde_json::json!({
                "inflation": e.inflation,
                "feasible": e.feasible,
                "p_hat": e.p_hat,
                "std_err": e.std_err,
                "particles": e.particles,
                "accepted": e.accepted,
                "waypoints": e.waypoints,
                "cost": e.cost,
            })
        })
        .collect();
    let blockers: Vec<serde_json::Value> = out
        .blockers
        .iter()
        .map(|(c, h)| serde_json::json!({ "center": c, "half_side": h }))
        .collect();
    let mut summary = serde_json::json!({
        "scenario": sc.name,
        "status": status,
        "alpha": cfg.alpha,
        "p_hat": out.p_hat,
        "std_err": out.std_err,
        "inflation": out.inflation,
        "waypoints": out.path.as_ref().map(|p| p.states.len()),
        "cost": out.planned.as_ref().map(|p| p.cost),
        "backtracks": out.backtracks,
        "blockers": blockers,
        "evals": evals,
        "wall_ms": wall_ms,
    });
    if let (Some(file), Some(path)) = (&a.out, &out.path) {
        summary["trajectory"] = serde_json::to_value(NominalTrajectoryJson::from(path))?;
        std::fs::write(file, serde_json::to_string_pretty(&summary)?)?;
        // The stdout copy stays light; the trajectory lives in the file.
        summary["trajectory"] = serde_json::Value::String(file.display().to_string());
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if out.path.is_some() { 0 } else { 4 })
}

fn load_trajectory(path: &PathBuf) -> Result<NominalTrajectory> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let tr_value = match value.get("trajectory") {
        Some(t) => t.clone(),
        None => value,
    };
    let j: NominalTrajectoryJson = serde_json::from_value(tr_value)?;
    NominalTrajectory::try_from(j)
}

fn cmd_oracle(a: OracleArgs) -> Result<i32> {
    let sc = Scenario::load(&a.scenario)?;
    let nominal = load_trajectory(&a.path)?;
    let model = sc.model_with_dt(nominal.dt)?;
    let law = synthesize(&sc.spec, &model, nominal.horizon())?;
    let problem = CpProblem { law: &law, nominal: &nominal, workspace: &sc.workspace };
    println!("{CSV_HEADER}");
    let t0 = Instant::now();
    let est = simple_mc(&problem, a.particles, a.seed)?;
    let ms = if a.timing { t0.elapsed().as_millis() } else { 0 };
    csv_row("oracle", nominal.states.len(), est.particles, est.p_hat, est.std_err(), ms);
    Ok(0)
}

fn cmd_simulate(a: SimulateArgs) -> Result<i32> {
    let sc = Scenario::load(&a.scenario)?;
    let nominal = load_trajectory(&a.path)?;
    let model = sc.model_with_dt(nominal.dt)?;
    let law = synthesize(&sc.spec, &model, nominal.horizon())?;
    let problem = CpProblem { law: &law, nominal: &nominal, workspace: &sc.workspace };
    let w = sc.spec.position_dim;

    let mut collisions = 0u64;
    let mut sum_final_dev = 0.0;
    let mut max_dev: f64 = 0.0;
    for i in 0..a.rollouts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, i));
        let rollout = simulate_rollout(&law, &mut rng);
        if rollout_collides(&problem, &rollout) {
            collisions += 1;
        }
        for x in &rollout.states {
            let dev = x.rows(0, w).norm();
            max_dev = max_dev.max(dev);
        }
        sum_final_dev += rollout.states.last().map(|x| x.rows(0, w).norm()).unwrap_or(0.0);
    }
    let n = a.rollouts.max(1) as f64;
    let fraction = collisions as f64 / n;
    let summary = serde_json::json!({
        "scenario": sc.name,
        "rollouts": a.rollouts,
        "collisions": collisions,
        "fraction": fraction,
        "std_err": (fraction * (1.0 - fraction) / n).sqrt(),
        "mean_final_pos_dev": sum_final_dev / n,
        "max_pos_dev": max_dev,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}
