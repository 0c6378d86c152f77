//! Batch front end: runs the bidding-game experiments from scenario
//! configs and emits plot-ready CSV or JSON reports.
//!
//! Every command is deterministic given (config, seed); `--threads` only
//! changes wall time. Data goes to stdout (or `--out`), diagnostics to
//! stderr. `verify-ne` and `curves` exit 0 exactly when the zero profile
//! verifies as an equilibrium.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spotbid_core::cost::{
    auto_engine, expected_abc, expected_abc_total, CostEstimate, CostEvaluator, Engine,
    MarketScenario, StrategyProfile, TotalCostEvaluator,
};
use spotbid_core::curves::bump_family;
use spotbid_core::dataio;
use spotbid_core::game;
use spotbid_core::pricing::PricingModel;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Version tag carried by every JSON report.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "spotbid", about = "Two-settlement electricity-market bidding game toolkit")]
struct Cli {
    /// RNG seed for Monte Carlo engines.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (speed only; results are thread-count invariant).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep per-utility deviations (and the market total) over a grid.
    Cost(CostArgs),
    /// Verify whether a profile is a Nash equilibrium; exit 0 iff it is.
    VerifyNe(VerifyArgs),
    /// Sensitivity sweeps: pricing slope, price gap, day-ahead price,
    /// market split factor, or fault deviation.
    Sweep(SweepArgs),
    /// Fault-immunity curve for a rational utility.
    Fault(FaultArgs),
    /// Verify the bidding-curve game at the zero profile; exit 0 iff no
    /// candidate deviation is profitable.
    Curves(CurvesArgs),
    /// Two-sample symmetry test on an error-sample file.
    Ks(KsArgs),
    /// Resolve a config (defaults applied, traces materialized) and emit
    /// it as canonical JSON.
    EchoConfig(EchoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    /// Pick the deterministic engine matching the scenario class.
    Auto,
    Quad,
    Closed,
    #[value(name = "2d")]
    TwoD,
    Mc,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated deviations, one per utility (default all zero).
    #[arg(long, allow_hyphen_values = true)]
    profile: Option<String>,
    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    engine: EngineArg,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    /// Deviation grid as lo:hi:points.
    #[arg(long, default_value = "-200:200:41", allow_hyphen_values = true)]
    grid: String,
    /// Also sweep the market-level cost over the same grid.
    #[arg(long, default_value_t = true)]
    total: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    engine: EngineArg,
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    /// Improvement threshold ($/MWh); defaults per engine.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxis {
    /// Symmetric slope a1 = a2.
    Slope,
    /// Intercept pair b1/b2.
    Gap,
    /// Day-ahead price.
    Pd,
    /// Market split factor k.
    Split,
    /// Aggregate fault deviation.
    Fault,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    axis: SweepAxis,
    /// Comma-separated axis values; `gap` takes b1/b2 pairs like
    /// "1/1,1.2378/0.7622,1.8/0.2".
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    engine: EngineArg,
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    /// Deviation grid for the slope/gap/pd axes.
    #[arg(long, default_value = "-200:200:21", allow_hyphen_values = true)]
    grid: String,
    /// Utility index the per-utility series tracks.
    #[arg(long, default_value_t = 0)]
    utility: usize,
    /// Fault set for the fault axis.
    #[arg(long, default_value = "")]
    fault_set: String,
    #[arg(long, value_enum, default_value_t = SplitModeArg::Scaled)]
    split_mode: SplitModeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitModeArg {
    /// Sub-loads carry 1/k of the parent error.
    Scaled,
    /// Independent re-forecasts per sub-load.
    Iid,
}

#[derive(Args)]
struct FaultArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated fault-set indices.
    #[arg(long)]
    fault_set: String,
    /// Rational utility index.
    #[arg(long)]
    rational: usize,
    /// Aggregate-deviation grid as lo:hi:points.
    #[arg(long, default_value = "0:200:5", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    engine: EngineArg,
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(long)]
    config: PathBuf,
    /// Price-belief CSV with `price,mass` rows.
    #[arg(long)]
    belief: PathBuf,
    /// Bump magnitudes for the deviation family (MWh).
    #[arg(long, default_value = "25,-25,50,-50", allow_hyphen_values = true)]
    magnitudes: String,
    /// Comma-separated per-utility curve CSVs (`price,value` rows); their
    /// curve-game costs are reported alongside the verification.
    #[arg(long)]
    curves: Option<String>,
    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    engine: EngineArg,
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct KsArgs {
    /// Single-column CSV of MWh samples (header optional).
    #[arg(long)]
    samples: PathBuf,
}

#[derive(Args)]
struct EchoArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()
        {
            eprintln!("spotbid: could not size thread pool: {e}");
            std::process::exit(2);
        }
    }
    match run(&cli) {
        Ok(exit) => std::process::exit(exit),
        Err(e) => {
            eprintln!("spotbid: {e:#}");
            std::process::exit(2);
        }
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let (output, exit) = match &cli.command {
        Command::Cost(args) => (cmd_cost(cli, args)?, 0),
        Command::VerifyNe(args) => cmd_verify_ne(cli, args)?,
        Command::Sweep(args) => (cmd_sweep(cli, args)?, 0),
        Command::Fault(args) => (cmd_fault(cli, args)?, 0),
        Command::Curves(args) => cmd_curves(cli, args)?,
        Command::Ks(args) => cmd_ks(args)?,
        Command::EchoConfig(args) => {
            let scenario = load_scenario(&args.config)?;
            (format!("{}\n", dataio::echo_scenario(&scenario)), 0)
        }
    };
    match &cli.out {
        Some(path) => std::fs::write(path, output)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{output}"),
    }
    Ok(exit)
}

fn load_scenario(path: &Path) -> Result<MarketScenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config = dataio::parse_scenario_config(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(dataio::build_scenario(&config, base)?)
}

fn parse_profile(spec: Option<&str>, n: usize) -> Result<StrategyProfile> {
    match spec {
        None => Ok(StrategyProfile::zeros(n)),
        Some(s) => {
            let mu: Vec<f64> = s
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad deviation {t:?}")))
                .collect::<Result<_>>()?;
            if mu.len() != n {
                bail!("profile has {} entries for {} utilities", mu.len(), n);
            }
            Ok(StrategyProfile::new(mu)?)
        }
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("grid must be lo:hi:points, got {spec:?}");
    }
    let lo: f64 = parts[0].parse().map_err(|_| anyhow!("bad grid lo {:?}", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|_| anyhow!("bad grid hi {:?}", parts[1]))?;
    let points: usize =
        parts[2].parse().map_err(|_| anyhow!("bad grid points {:?}", parts[2]))?;
    if points < 1 || hi < lo {
        bail!("grid needs hi >= lo and at least one point");
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..points)
        .map(|j| lo + (hi - lo) * j as f64 / (points - 1) as f64)
        .collect())
}

fn parse_indices(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().map_err(|_| anyhow!("bad index {t:?}")))
        .collect()
}

fn resolve_engine(arg: EngineArg, scenario: &MarketScenario, n: u64, seed: u64) -> Result<Engine> {
    Ok(match arg {
        EngineArg::Auto => auto_engine(scenario)?,
        EngineArg::Quad => Engine::Quadrature,
        EngineArg::Closed => Engine::ClosedForm,
        EngineArg::TwoD => Engine::TwoD,
        EngineArg::Mc => Engine::MonteCarlo { n, seed },
    })
}

fn push_estimate_row(out: &mut String, id: &str, mu_i: f64, mu_minus: f64, est: &CostEstimate) {
    out.push_str(&est.csv_row(id, mu_i, mu_minus));
    out.push('\n');
}

fn cmd_cost(cli: &Cli, args: &CostArgs) -> Result<String> {
    let scenario = load_scenario(&args.config)?;
    let profile = parse_profile(args.profile.as_deref(), scenario.n())?;
    let engine = resolve_engine(args.engine, &scenario, args.n, cli.seed)?;
    let grid = parse_grid(&args.grid)?;
    let span = grid.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut out = String::new();
    out.push_str(CostEstimate::csv_header());
    out.push('\n');
    for i in 0..scenario.n() {
        let id = scenario.utility(i).id.clone();
        let mu_minus = profile.mu_minus(i);
        let evaluator =
            CostEvaluator::new(&scenario, i, engine, span + mu_minus.abs())?;
        for &mu in &grid {
            let est = evaluator.eval(mu, mu_minus)?;
            push_estimate_row(&mut out, &id, mu, mu_minus, &est);
        }
    }
    if args.total {
        match engine {
            Engine::MonteCarlo { .. } => {
                for &mu in &grid {
                    let mut deviations = profile.mu().to_vec();
                    deviations[0] = mu + deviations[0] - profile.mu_total();
                    let total_profile = StrategyProfile::new(deviations)?;
                    let est = expected_abc_total(&scenario, &total_profile, engine)?;
                    push_estimate_row(&mut out, "market", mu, 0.0, &est);
                }
            }
            _ => {
                let total = TotalCostEvaluator::new(&scenario)?;
                for &mu in &grid {
                    let est = total.eval(mu)?;
                    push_estimate_row(&mut out, "market", mu, 0.0, &est);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct VersionedReport<T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    report: T,
}

fn to_json<T: Serialize>(report: T) -> Result<String> {
    let mut text =
        serde_json::to_string_pretty(&VersionedReport { schema_version: SCHEMA_VERSION, report })?;
    text.push('\n');
    Ok(text)
}

fn cmd_verify_ne(cli: &Cli, args: &VerifyArgs) -> Result<(String, i32)> {
    let scenario = load_scenario(&args.config)?;
    let profile = parse_profile(args.profile.as_deref(), scenario.n())?;
    let engine = resolve_engine(args.engine, &scenario, args.n, cli.seed)?;
    let mut opts = game::VerifyOptions::new(engine);
    opts.tol = args.tol;
    let report = game::verify_equilibrium(&scenario, &profile, &opts)?;
    let exit = if report.is_equilibrium { 0 } else { 1 };
    Ok((to_json(report)?, exit))
}

const SWEEP_HEADER: &str =
    "axis,axis_value,series,mu_mwh,method,value_usd_per_mwh,std_error_usd_per_mwh,n";

fn sweep_row(
    out: &mut String,
    axis: &str,
    axis_value: &str,
    series: &str,
    mu: f64,
    est: &CostEstimate,
) {
    let se = est.std_error.map(|s| s.to_string()).unwrap_or_default();
    let _ = writeln!(
        out,
        "{axis},{axis_value},{series},{mu},{},{},{se},{}",
        est.method, est.value, est.n
    );
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<String> {
    let scenario = load_scenario(&args.config)?;
    if args.utility >= scenario.n() {
        bail!("utility index {} out of range", args.utility);
    }
    let grid = parse_grid(&args.grid)?;
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    match args.axis {
        SweepAxis::Slope => {
            for value in args.values.split(',') {
                let a: f64 = value.trim().parse().map_err(|_| anyhow!("bad slope {value:?}"))?;
                let (_, _, b1, b2) = pricing_params(scenario.pricing());
                let swept =
                    scenario.with_pricing(PricingModel::piecewise_linear(a, a, b1, b2)?)?;
                sweep_cost_curves(cli, args, &swept, "slope", value.trim(), &grid, &mut out)?;
            }
        }
        SweepAxis::Gap => {
            for value in args.values.split(',') {
                let (b1, b2) = value
                    .trim()
                    .split_once('/')
                    .ok_or_else(|| anyhow!("gap values are b1/b2 pairs, got {value:?}"))?;
                let b1: f64 = b1.parse().map_err(|_| anyhow!("bad b1 {b1:?}"))?;
                let b2: f64 = b2.parse().map_err(|_| anyhow!("bad b2 {b2:?}"))?;
                let (a1, a2, _, _) = pricing_params(scenario.pricing());
                let swept =
                    scenario.with_pricing(PricingModel::piecewise_linear(a1, a2, b1, b2)?)?;
                sweep_cost_curves(cli, args, &swept, "gap", value.trim(), &grid, &mut out)?;
            }
        }
        SweepAxis::Pd => {
            for value in args.values.split(',') {
                let p_d: f64 = value.trim().parse().map_err(|_| anyhow!("bad p_d {value:?}"))?;
                let swept = scenario.with_p_d(p_d)?;
                sweep_cost_curves(cli, args, &swept, "pd", value.trim(), &grid, &mut out)?;
            }
        }
        SweepAxis::Split => {
            let mode = match args.split_mode {
                SplitModeArg::Scaled => game::SplitMode::Scaled,
                SplitModeArg::Iid => game::SplitMode::Iid,
            };
            for value in args.values.split(',') {
                let k: usize = value.trim().parse().map_err(|_| anyhow!("bad k {value:?}"))?;
                let swept = if k == 1 {
                    scenario.clone()
                } else {
                    game::market_split(&scenario, k, mode)?
                };
                let engine = resolve_engine(args.engine, &swept, args.n, cli.seed)?;
                let zeros = StrategyProfile::zeros(swept.n());
                let child = args.utility * k.max(1);
                let id = swept.utility(child).id.clone();
                let est = expected_abc(&swept, &zeros, child, engine)?;
                sweep_row(&mut out, "split", value.trim(), &format!("utility:{id}"), 0.0, &est);
                let est = expected_abc_total(&swept, &zeros, engine)?;
                sweep_row(&mut out, "split", value.trim(), "market", 0.0, &est);
            }
        }
        SweepAxis::Fault => {
            let fault_set = parse_indices(&args.fault_set)?;
            let engine = resolve_engine(args.engine, &scenario, args.n, cli.seed)?;
            let values: Vec<f64> = args
                .values
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad value {t:?}")))
                .collect::<Result<_>>()?;
            let curve = game::fault_immunity_curve(
                &scenario,
                &fault_set,
                &values,
                args.utility,
                engine,
            )?;
            let id = scenario.utility(args.utility).id.clone();
            for (mu_s, est) in curve {
                sweep_row(
                    &mut out,
                    "fault",
                    &mu_s.to_string(),
                    &format!("utility:{id}"),
                    mu_s,
                    &est,
                );
            }
        }
    }
    Ok(out)
}

fn pricing_params(p: &PricingModel) -> (f64, f64, f64, f64) {
    match *p {
        PricingModel::PiecewiseLinear { a1, a2, b1, b2 } => (a1, a2, b1, b2),
        PricingModel::GeneralOdd { a, k: _, b1, b2 } => (a, a, b1, b2),
    }
}

fn sweep_cost_curves(
    cli: &Cli,
    args: &SweepArgs,
    scenario: &MarketScenario,
    axis: &str,
    axis_value: &str,
    grid: &[f64],
    out: &mut String,
) -> Result<()> {
    let engine = resolve_engine(args.engine, scenario, args.n, cli.seed)?;
    let zeros = StrategyProfile::zeros(scenario.n());
    let id = scenario.utility(args.utility).id.clone();
    let span = grid.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let evaluator = CostEvaluator::new(scenario, args.utility, engine, span)?;
    for &mu in grid {
        let est = evaluator.eval(mu, 0.0)?;
        sweep_row(out, axis, axis_value, &format!("utility:{id}"), mu, &est);
    }
    match engine {
        Engine::MonteCarlo { .. } => {
            for &mu in grid {
                let est =
                    expected_abc_total(scenario, &zeros.with_mu(args.utility, mu), engine)?;
                sweep_row(out, axis, axis_value, "market", mu, &est);
            }
        }
        _ => {
            let total = TotalCostEvaluator::new(scenario)?;
            for &mu in grid {
                let est = total.eval(mu)?;
                sweep_row(out, axis, axis_value, "market", mu, &est);
            }
        }
    }
    Ok(())
}

fn cmd_fault(cli: &Cli, args: &FaultArgs) -> Result<String> {
    let scenario = load_scenario(&args.config)?;
    let fault_set = parse_indices(&args.fault_set)?;
    let engine = resolve_engine(args.engine, &scenario, args.n, cli.seed)?;
    let grid = parse_grid(&args.grid)?;
    let curve =
        game::fault_immunity_curve(&scenario, &fault_set, &grid, args.rational, engine)?;
    let id = scenario.utility(args.rational).id.clone();
    let mut out = String::new();
    out.push_str("mu_s_mwh,rational_id,method,value_usd_per_mwh,std_error_usd_per_mwh,n\n");
    for (mu_s, est) in curve {
        let se = est.std_error.map(|s| s.to_string()).unwrap_or_default();
        writeln!(out, "{mu_s},{id},{},{},{se},{}", est.method, est.value, est.n)?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct CurveCostRow {
    utility_id: String,
    value_usd_per_mwh: f64,
    std_error_usd_per_mwh: Option<f64>,
}

#[derive(Serialize)]
struct CurvesOutput {
    belief_prices: Vec<f64>,
    family_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    submitted_curve_costs: Option<Vec<CurveCostRow>>,
    #[serde(flatten)]
    report: spotbid_core::curves::CurveEquilibriumReport,
}

fn cmd_curves(cli: &Cli, args: &CurvesArgs) -> Result<(String, i32)> {
    let scenario = load_scenario(&args.config)?;
    let belief = dataio::read_belief_csv(&args.belief)?;
    let magnitudes: Vec<f64> = args
        .magnitudes
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad magnitude {t:?}")))
        .collect::<Result<_>>()?;
    let engine = resolve_engine(args.engine, &scenario, args.n, cli.seed)?;
    let family = bump_family(&belief, &magnitudes);
    let tol = args.tol.unwrap_or(1e-4 * spotbid_core::dataio::DEFAULT_P_D);
    let report = spotbid_core::curves::verify_curve_equilibrium(
        &scenario, &belief, &family, engine, tol,
    )?;
    let submitted_curve_costs = match &args.curves {
        None => None,
        Some(paths) => {
            let files: Vec<&str> = paths.split(',').map(str::trim).collect();
            if files.len() != scenario.n() {
                bail!(
                    "{} curve files for {} utilities",
                    files.len(),
                    scenario.n()
                );
            }
            let curves: Vec<_> = files
                .iter()
                .map(|f| dataio::read_curve_csv(Path::new(f)))
                .collect::<std::result::Result<_, _>>()?;
            let mut rows = Vec::with_capacity(scenario.n());
            for i in 0..scenario.n() {
                let est = spotbid_core::curves::expected_curve_cost(
                    &scenario, &curves, &belief, i, engine,
                )?;
                rows.push(CurveCostRow {
                    utility_id: scenario.utility(i).id.clone(),
                    value_usd_per_mwh: est.value,
                    std_error_usd_per_mwh: est.std_error,
                });
            }
            Some(rows)
        }
    };
    let exit = if report.no_profitable_deviation { 0 } else { 1 };
    let out = to_json(CurvesOutput {
        belief_prices: belief.prices().to_vec(),
        family_size: family.len(),
        submitted_curve_costs,
        report,
    })?;
    Ok((out, exit))
}

fn cmd_ks(args: &KsArgs) -> Result<(String, i32)> {
    let samples = dataio::read_error_samples(&args.samples)?;
    let result = spotbid_core::uncertainty::ks_symmetry_test(&samples)?;
    let mut out = String::new();
    out.push_str("n,statistic,reject_at_5pct\n");
    writeln!(out, "{},{},{}", samples.len(), result.statistic, result.reject_at_5pct)?;
    Ok((out, 0))
}
