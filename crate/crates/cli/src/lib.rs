//! Command implementations behind the `evpark` binary.
//!
//! Every command is deterministic given its flags and seed; output CSVs are
//! byte-identical across re-runs. Wall-clock timings go to the stats text
//! file and stderr only, never into the CSVs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evpark_core::baseline::{average_rate, baseline_feasibility, immediate};
use evpark_core::domain::{
    check_acceptance, ReserveBoundConvention, ReserveMode, ScenarioSnapshot,
};
use evpark_core::formulation::{build, cost_breakdown, extract_schedule};
use evpark_core::ingest::{self, PriceUnit};
use evpark_core::milp::{enumerate_oracle, solve_milp, MilpStatus, SolverConfig};
use evpark_core::mpc::{load_overlays, run_day, DayTimeline};
use evpark_core::par;
use evpark_core::sweep::{run_sweep, DayInput};
use evpark_core::synth;

/// Exit status mapping used by `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok = 0,
    ValidationFailure = 1,
    IoError = 2,
    SolverLimit = 3,
    Infeasible = 4,
}

#[derive(Debug)]
pub struct CmdError {
    pub outcome: Outcome,
    pub message: String,
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CmdError {}

fn io_fail(message: impl Into<String>) -> CmdError {
    CmdError {
        outcome: Outcome::IoError,
        message: message.into(),
    }
}

fn invalid(message: impl Into<String>) -> CmdError {
    CmdError {
        outcome: Outcome::ValidationFailure,
        message: message.into(),
    }
}

type CmdResult = Result<Outcome, CmdError>;

#[derive(Debug, Parser)]
#[command(
    name = "evpark",
    about = "Schedule EV fleet charging from workplace PV against day-ahead prices",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a scenario bundle and run the admission checks.
    Validate(ScenarioArgs),
    /// Single-shot day solve: schedule CSV, cost report and solver stats.
    SolveDay(SolveDayArgs),
    /// AR vs IMM vs optimizer on one day.
    Compare(CompareArgs),
    /// Receding-horizon run with optional realization overlays.
    Mpc(MpcArgs),
    /// Independent day runs over a directory of day bundles.
    Sweep(SweepArgs),
    /// Branch-and-bound vs exhaustive enumeration on seeded tiny instances.
    OracleCheck(OracleCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReserveBoundsArg {
    Printed,
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriceUnitArg {
    UsdKwh,
    CentsKwh,
    UsdMwh,
}

impl PriceUnitArg {
    fn to_unit(self) -> PriceUnit {
        match self {
            PriceUnitArg::UsdKwh => PriceUnit::UsdPerKwh,
            PriceUnitArg::CentsKwh => PriceUnit::CentsPerKwh,
            PriceUnitArg::UsdMwh => PriceUnit::UsdPerMwh,
        }
    }
}

/// Input files and model knobs shared by the scenario-driven commands.
#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Hourly market prices CSV (timestamp,spp_buy,regup,regdn[,spp_sell]).
    #[arg(long, env = "EVPARK_MARKET")]
    pub market: PathBuf,
    /// 1-minute PV trace CSV (timestamp,power_kw).
    #[arg(long, env = "EVPARK_PV")]
    pub pv: PathBuf,
    /// Fleet table CSV.
    #[arg(long, env = "EVPARK_FLEET")]
    pub fleet: PathBuf,
    /// Charger table CSV.
    #[arg(long, env = "EVPARK_CHARGERS")]
    pub chargers: PathBuf,
    /// Optional hourly site-limit CSV; constants below apply without it.
    #[arg(long, env = "EVPARK_LIMITS")]
    pub limits: Option<PathBuf>,
    /// Rated size of the PV system behind the PV trace (kWp).
    #[arg(long, default_value_t = 11.1, env = "EVPARK_PV_RATED_KWP")]
    pub pv_rated_kwp: f64,
    /// Step length in minutes.
    #[arg(long, default_value_t = 15, env = "EVPARK_DT_MINUTES")]
    pub dt_minutes: u32,
    /// Sell price as a fraction of the buy price when no sell column exists.
    #[arg(long, default_value_t = 0.98, env = "EVPARK_SELL_FACTOR")]
    pub sell_factor: f64,
    /// Unit of the price columns.
    #[arg(long, value_enum, default_value = "usd-kwh", env = "EVPARK_PRICE_UNIT")]
    pub price_unit: PriceUnitArg,
    /// PV forecast uncertainty in [0, 1).
    #[arg(long, default_value_t = 0.10, env = "EVPARK_PV_UNCERTAINTY")]
    pub pv_uncertainty: f64,
    /// Site import cap (kW) when no limits file is given.
    #[arg(long, default_value_t = 40.0, env = "EVPARK_IMPORT_CAP_KW")]
    pub import_cap_kw: f64,
    /// Site export cap (kW) when no limits file is given.
    #[arg(long, default_value_t = 40.0, env = "EVPARK_EXPORT_CAP_KW")]
    pub export_cap_kw: f64,
    /// Disable V2G (forces every discharge limit to zero).
    #[arg(long, env = "EVPARK_NO_V2G")]
    pub no_v2g: bool,
    /// Remove the reserve products from the model.
    #[arg(long, env = "EVPARK_NO_RESERVES")]
    pub no_reserves: bool,
    /// Pin PV extraction to the forecast maximum (no curtailment).
    #[arg(long, env = "EVPARK_NO_CURTAILMENT")]
    pub no_curtailment: bool,
    /// Force equal up and down reserve offers.
    #[arg(long, env = "EVPARK_SYMMETRIC_RESERVES")]
    pub symmetric_reserves: bool,
    /// Which power limit caps each reserve product.
    #[arg(long, value_enum, default_value = "printed", env = "EVPARK_RESERVE_BOUNDS")]
    pub reserve_bounds: ReserveBoundsArg,
    /// SOC fraction where the charge taper starts.
    #[arg(long, default_value_t = 0.9, env = "EVPARK_TAPER_CHARGE")]
    pub taper_charge: f64,
    /// SOC fraction where the discharge taper ends.
    #[arg(long, default_value_t = 0.1, env = "EVPARK_TAPER_DISCHARGE")]
    pub taper_discharge: f64,
    /// V2G battery wear compensation ($/kWh).
    #[arg(long, default_value_t = 0.042, env = "EVPARK_WEAR_RATE")]
    pub wear_rate: f64,
    /// Contractual PV energy cost ($/kWh).
    #[arg(long, default_value_t = 0.0, env = "EVPARK_PV_COST")]
    pub pv_cost: f64,
}

#[derive(Debug, Args, Clone)]
pub struct SolverArgs {
    /// Relative MILP gap tolerance.
    #[arg(long, default_value_t = 1.5e-4, env = "EVPARK_GAP")]
    pub gap: f64,
    /// Wall-clock limit per solve, in seconds.
    #[arg(long, env = "EVPARK_TIME_LIMIT")]
    pub time_limit: Option<f64>,
    /// Branch-and-bound node limit per solve.
    #[arg(long, default_value_t = 1_000_000, env = "EVPARK_MAX_NODES")]
    pub max_nodes: usize,
}

impl SolverArgs {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            rel_gap_tol: self.gap,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            max_nodes: self.max_nodes,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct OutputArgs {
    /// Output directory for CSVs and reports.
    #[arg(long, default_value = "out", env = "EVPARK_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct SolveDayArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Also write the sealed model in the plain-text dump format.
    #[arg(long)]
    pub dump_model: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Parser)]
pub struct MpcArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Realization overlay CSV (step,entity,field,value).
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct SweepArgs {
    /// Directory holding one subdirectory per day, each with market.csv and
    /// pv.csv; fleet/chargers/limits come from the flags below.
    #[arg(long, env = "EVPARK_DAYS_DIR")]
    pub days_dir: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Parser)]
pub struct OracleCheckArgs {
    /// Number of seeded tiny instances to cross-check.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Seed of the first instance.
    #[arg(long, default_value_t = 0, env = "EVPARK_SEED")]
    pub seed: u64,
    /// Relative objective mismatch that counts as a failure.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

/// Loads and assembles the scenario described by the arguments.
pub fn load_snapshot(args: &ScenarioArgs) -> Result<ScenarioSnapshot, CmdError> {
    let step_hours = args.dt_minutes as f64 / 60.0;
    let steps = ingest::steps_per_day(step_hours).map_err(|e| invalid(e.to_string()))?;
    let classify = |e: ingest::IngestError| -> CmdError {
        match &e {
            ingest::IngestError::Io { .. } | ingest::IngestError::Empty { .. } => {
                io_fail(e.to_string())
            }
            _ => invalid(e.to_string()),
        }
    };
    let market = ingest::load_market(
        &args.market,
        step_hours,
        args.sell_factor,
        args.price_unit.to_unit(),
    )
    .map_err(classify)?;
    let pv = ingest::load_pv(&args.pv, args.pv_rated_kwp, step_hours, args.pv_uncertainty)
        .map_err(classify)?;
    for warning in &pv.warnings {
        eprintln!("warning: {warning}");
    }
    let fleet = ingest::load_fleet(&args.fleet, step_hours, steps).map_err(classify)?;
    let chargers = ingest::load_chargers(&args.chargers).map_err(classify)?;
    let limits = match &args.limits {
        Some(path) => ingest::load_limits(path, step_hours).map_err(classify)?,
        None => ingest::constant_limits(args.import_cap_kw, args.export_cap_kw, steps),
    };
    let snapshot = ScenarioSnapshot {
        fleet,
        chargers,
        market,
        pv: pv.value,
        limits,
        step_hours,
        horizon_steps: steps,
        taper_charge: args.taper_charge,
        taper_discharge: args.taper_discharge,
        wear_rate: args.wear_rate,
        pv_cost: args.pv_cost,
        reserve_mode: if args.symmetric_reserves {
            ReserveMode::Symmetric
        } else {
            ReserveMode::Asymmetric
        },
        reserve_bound_convention: match args.reserve_bounds {
            ReserveBoundsArg::Printed => ReserveBoundConvention::AsPrinted,
            ReserveBoundsArg::Swapped => ReserveBoundConvention::Swapped,
        },
        reserves_enabled: !args.no_reserves,
        v2g_enabled: !args.no_v2g,
        curtailment_enabled: !args.no_curtailment,
    };
    snapshot.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(snapshot)
}

fn ensure_out(dir: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(dir).map_err(|e| io_fail(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, content: &[u8]) -> Result<(), CmdError> {
    fs::write(path, content).map_err(|e| io_fail(format!("{}: {e}", path.display())))
}

fn status_outcome(status: MilpStatus) -> Outcome {
    match status {
        MilpStatus::Optimal | MilpStatus::GapLimit => Outcome::Ok,
        MilpStatus::TimeLimit | MilpStatus::NodeLimit => Outcome::SolverLimit,
        MilpStatus::Infeasible | MilpStatus::Unbounded => Outcome::Infeasible,
    }
}

/// `validate`: run the admission gate and print one verdict per EV.
pub fn cmd_validate(args: &ScenarioArgs) -> CmdResult {
    let snapshot = load_snapshot(args)?;
    let verdicts = check_acceptance(&snapshot);
    let mut all_ok = true;
    for v in &verdicts {
        match &v.reason {
            None => println!("{}: accepted", v.ev_id),
            Some(reason) => {
                all_ok = false;
                println!("{}: rejected ({reason})", v.ev_id);
            }
        }
    }
    println!(
        "{} of {} EVs accepted",
        verdicts.iter().filter(|v| v.accepted).count(),
        verdicts.len()
    );
    Ok(if all_ok {
        Outcome::Ok
    } else {
        Outcome::ValidationFailure
    })
}

/// `solve-day`: one full-horizon solve, writing schedule, costs and stats.
pub fn cmd_solve_day(args: &SolveDayArgs) -> CmdResult {
    let snapshot = load_snapshot(&args.scenario)?;
    let verdicts = check_acceptance(&snapshot);
    if verdicts.iter().any(|v| !v.accepted) {
        return Err(invalid(
            "fleet has rejected EVs; run `validate` for details",
        ));
    }
    ensure_out(&args.output.out)?;
    let (model, catalog) = build(&snapshot, 0).map_err(|e| invalid(e.to_string()))?;
    if let Some(dump) = &args.dump_model {
        let mut buf = Vec::new();
        model.write_dump(&mut buf).map_err(|e| io_fail(e.to_string()))?;
        write_file(dump, &buf)?;
    }
    let config = args.solver.to_config();
    let solution = solve_milp(&model, &config).map_err(|e| invalid(e.to_string()))?;
    let outcome = status_outcome(solution.status);
    if !solution.status.has_incumbent() || solution.values.is_empty() {
        return Err(CmdError {
            outcome,
            message: format!("solver finished without an incumbent: {:?}", solution.status),
        });
    }
    let schedule = extract_schedule(&model, &solution, &catalog, &snapshot)
        .map_err(|e| invalid(e.to_string()))?;
    let report = cost_breakdown(&schedule, &snapshot).map_err(|e| invalid(e.to_string()))?;

    let mut csv = Vec::new();
    schedule
        .write_csv(&mut csv)
        .map_err(|e| io_fail(e.to_string()))?;
    write_file(&args.output.out.join("schedule.csv"), &csv)?;
    write_file(
        &args.output.out.join("costs.txt"),
        report.render_text().as_bytes(),
    )?;
    let stats = format!(
        "status: {:?}\nobjective_usd: {:.9}\nbest_bound_usd: {:.9}\nrel_gap: {:.6e}\nnodes: {}\nlp_iterations: {}\nwall_seconds: {:.3}\n",
        solution.status,
        solution.objective,
        solution.best_bound,
        solution.rel_gap,
        solution.stats.nodes,
        solution.stats.lp_iterations,
        solution.stats.wall.as_secs_f64(),
    );
    write_file(&args.output.out.join("stats.txt"), stats.as_bytes())?;
    println!(
        "status {:?}, total {:.4} $, gap {:.3e}, {} nodes",
        solution.status, report.total_usd, solution.rel_gap, solution.stats.nodes
    );
    Ok(outcome)
}

/// `compare`: AR, IMM and the optimizer on the loaded day.
pub fn cmd_compare(args: &CompareArgs) -> CmdResult {
    let snapshot = load_snapshot(&args.scenario)?;
    ensure_out(&args.output.out)?;
    let config = args.solver.to_config();
    let report = run_sweep(
        vec![DayInput {
            label: "day".into(),
            snapshot: snapshot.clone(),
        }],
        &config,
    )
    .map_err(|e| invalid(e.to_string()))?;

    // Feasibility of each baseline against the optimizer's constraints.
    let (model, catalog) = build(&snapshot, 0).map_err(|e| invalid(e.to_string()))?;
    let mut notes = String::new();
    for (name, profile) in [("AR", average_rate(&snapshot)), ("IMM", immediate(&snapshot))] {
        let audit = baseline_feasibility(&profile, &snapshot, &model, &catalog, 1e-6)
            .map_err(|e| invalid(e.to_string()))?;
        if audit.is_empty() {
            notes.push_str(&format!("{name}: feasible for the optimizer's constraint set\n"));
        } else {
            notes.push_str(&format!(
                "{name}: infeasible for the optimizer's constraint set ({} violations)\n",
                audit.rows.len() + audit.bounds.len()
            ));
        }
    }

    let mut csv = Vec::new();
    report
        .write_csv(&mut csv)
        .map_err(|e| io_fail(e.to_string()))?;
    write_file(&args.output.out.join("comparison.csv"), &csv)?;
    let summary = format!("{}\n{notes}", report.render_summary());
    write_file(&args.output.out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(Outcome::Ok)
}

/// `mpc`: shrinking-horizon run, with disturbances when an overlay is given.
pub fn cmd_mpc(args: &MpcArgs) -> CmdResult {
    let snapshot = load_snapshot(&args.scenario)?;
    ensure_out(&args.output.out)?;
    let timeline = match &args.overlay {
        Some(path) => load_overlays(snapshot, path).map_err(|e| invalid(e.to_string()))?,
        None => DayTimeline::undisturbed(snapshot),
    };
    let config = args.solver.to_config();
    let trace = run_day(&timeline, &config).map_err(|e| invalid(e.to_string()))?;

    let mut csv = Vec::new();
    trace
        .write_csv(&mut csv)
        .map_err(|e| io_fail(e.to_string()))?;
    write_file(&args.output.out.join("trace.csv"), &csv)?;
    let mut sched_csv = Vec::new();
    trace
        .realized_schedule
        .write_csv(&mut sched_csv)
        .map_err(|e| io_fail(e.to_string()))?;
    write_file(&args.output.out.join("realized_schedule.csv"), &sched_csv)?;
    write_file(
        &args.output.out.join("costs.txt"),
        trace.cost.render_text().as_bytes(),
    )?;
    let events: Vec<String> = trace
        .records
        .iter()
        .flat_map(|r| r.events.iter().cloned())
        .collect();
    write_file(
        &args.output.out.join("events.txt"),
        (events.join("\n") + "\n").as_bytes(),
    )?;
    println!(
        "mpc total {:.4} $, {} flagged steps",
        trace.cost.total_usd,
        trace.flagged_steps.len()
    );
    Ok(if trace.flagged_steps.is_empty() {
        Outcome::Ok
    } else {
        Outcome::ValidationFailure
    })
}

/// `sweep`: independent day runs over the subdirectories of `days_dir`.
pub fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    ensure_out(&args.output.out)?;
    let mut day_dirs: Vec<PathBuf> = fs::read_dir(&args.days_dir)
        .map_err(|e| io_fail(format!("{}: {e}", args.days_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    day_dirs.sort();
    if day_dirs.is_empty() {
        return Err(io_fail(format!(
            "{} contains no day subdirectories",
            args.days_dir.display()
        )));
    }
    let mut days = Vec::new();
    for dir in &day_dirs {
        let mut scenario = args.scenario.clone();
        scenario.market = dir.join("market.csv");
        scenario.pv = dir.join("pv.csv");
        let snapshot = load_snapshot(&scenario)?;
        days.push(DayInput {
            label: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string()),
            snapshot,
        });
    }
    let config = args.solver.to_config();
    let report = run_sweep(days, &config).map_err(|e| invalid(e.to_string()))?;
    let mut csv = Vec::new();
    report
        .write_csv(&mut csv)
        .map_err(|e| io_fail(e.to_string()))?;
    write_file(&args.output.out.join("sweep.csv"), &csv)?;
    write_file(
        &args.output.out.join("summary.txt"),
        report.render_summary().as_bytes(),
    )?;
    print!("{}", report.render_summary());
    Ok(Outcome::Ok)
}

/// `oracle-check`: branch-and-bound vs exhaustive enumeration on seeded
/// tiny instances, in parallel. Fails on the first objective mismatch.
pub fn cmd_oracle_check(args: &OracleCheckArgs) -> CmdResult {
    let seeds: Vec<u64> = (0..args.instances as u64).map(|i| args.seed + i).collect();
    let tolerance = args.tolerance;
    let results = par::par_map(seeds, move |seed| {
        let snapshot = synth::random_instance(seed);
        let (model, _catalog) = match build(&snapshot, 0) {
            Ok(x) => x,
            Err(e) => return Err(format!("seed {seed}: build failed: {e}")),
        };
        let config = SolverConfig {
            rel_gap_tol: 1e-9,
            ..SolverConfig::default()
        };
        let bnb = solve_milp(&model, &config).map_err(|e| format!("seed {seed}: {e}"))?;
        let oracle =
            enumerate_oracle(&model, 16).map_err(|e| format!("seed {seed}: oracle: {e}"))?;
        match (bnb.status.has_incumbent(), oracle.status) {
            (true, MilpStatus::Optimal) => {
                let scale = oracle.objective.abs().max(1.0);
                if (bnb.objective - oracle.objective).abs() > tolerance * scale {
                    return Err(format!(
                        "seed {seed}: objective mismatch: branch-and-bound {} vs oracle {}",
                        bnb.objective, oracle.objective
                    ));
                }
                Ok(model.free_binaries().len())
            }
            (false, MilpStatus::Infeasible) => Ok(0),
            (a, b) => Err(format!(
                "seed {seed}: status mismatch: incumbent={a} vs oracle {b:?}"
            )),
        }
    });
    let mut failures = 0;
    let mut max_binaries = 0;
    for r in &results {
        match r {
            Ok(n) => max_binaries = max_binaries.max(*n),
            Err(msg) => {
                eprintln!("FAIL {msg}");
                failures += 1;
            }
        }
    }
    println!(
        "oracle check: {}/{} instances agree (largest instance had {} free binaries)",
        results.len() - failures,
        results.len(),
        max_binaries
    );
    Ok(if failures == 0 {
        Outcome::Ok
    } else {
        Outcome::ValidationFailure
    })
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Validate(args) => cmd_validate(&args),
        Command::SolveDay(args) => cmd_solve_day(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Mpc(args) => cmd_mpc(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::OracleCheck(args) => cmd_oracle_check(&args),
    }
}
