//! Command-line front end for the Wasserstein projection toolkit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use wproj::bartlett::BartlettMode;
use wproj::error::Error;
use wproj::expansion::{compute_expansion_terms, expansion_approx};
use wproj::hypothesis::{run_el_test, run_t2_test, run_wp_test, WpTestConfig};
use wproj::model::{CostModel, DataSet, MomentModel};
use wproj::power::{
    compute_k_constants, power_expansion, power_first_order, power_gap_b, PowerInputs,
};
use wproj::report::{emit_csv, emit_json, write_output};
use wproj::sim::{
    run_coverage_study, run_example62, run_expansion_study, run_power_study, Scenario,
};
use wproj::solver::SolverOptions;

#[derive(Parser)]
#[command(
    name = "wproj",
    about = "Wasserstein projection tests for moment-equation nulls",
    version
)]
struct Cli {
    /// Worker threads (capped by WPROJ_THREADS when set).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run decision rules on a CSV dataset.
    Test(TestArgs),
    /// Run a Monte Carlo study described by a scenario JSON file.
    Simulate(SimulateArgs),
    /// Predicted second-order power gaps, optionally next to measured powers.
    PowerCompare(PowerCompareArgs),
    /// Emit the empirical expansion tensors and approximations for a dataset.
    ExpansionCheck(ExpansionCheckArgs),
    /// Reproduce the two-atom WP/EL/Hotelling comparison table.
    Example62(Example62Args),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Wp,
    El,
    T2,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BartlettArg {
    None,
    Quantile,
    Statistic,
}

impl From<BartlettArg> for BartlettMode {
    fn from(value: BartlettArg) -> Self {
        match value {
            BartlettArg::None => BartlettMode::None,
            BartlettArg::Quantile => BartlettMode::Quantile,
            BartlettArg::Statistic => BartlettMode::Statistic,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// CSV dataset: one observation per row, optional header.
    #[arg(long)]
    data: PathBuf,
    /// Moment model: linear | quadratic[:c] | zero-power[:eps[:kmax]].
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "all")]
    method: MethodArg,
    /// Ground cost: identity | diag:a,b,... | inline JSON [[..]] | @file.json.
    #[arg(long, default_value = "identity")]
    sigma: String,
    #[arg(long, value_enum, default_value = "none")]
    bartlett: BartlettArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo draws for d > 1 quantiles.
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    /// Multistart seeds for nonconcave inner transport problems.
    #[arg(long, default_value_t = 0)]
    multistart: usize,
    /// Multiplier on the dual ball radius.
    #[arg(long, default_value_t = 1.0)]
    zeta_radius_scale: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// coverage | power | expansion.
    #[arg(long)]
    study: StudyArg,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the tidy CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyArg {
    Coverage,
    Power,
    Expansion,
}

#[derive(Args)]
struct PowerCompareArgs {
    /// Scenario JSON file (generator + model define the null; tau0 the shift).
    #[arg(long)]
    config: PathBuf,
    /// Pilot sample size for the plug-in moments.
    #[arg(long, default_value_t = 200_000)]
    pilot: usize,
    /// Also run the Monte Carlo power study and report measured powers.
    #[arg(long, default_value_t = false)]
    measure: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExpansionCheckArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "identity")]
    sigma: String,
    /// Highest approximation order to report (2 or 3).
    #[arg(long, default_value_t = 3)]
    order: u32,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Example62Args {
    #[arg(long, default_value_t = 3)]
    kmax: usize,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = effective_threads(cli.threads) {
        // A failure here only means a pool already exists; proceed.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn effective_threads(hint: Option<usize>) -> Option<usize> {
    let cap = std::env::var("WPROJ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    match (hint, cap) {
        (Some(h), Some(c)) => Some(h.min(c)),
        (Some(h), None) => Some(h),
        (None, Some(c)) => Some(c),
        (None, None) => None,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::PowerCompare(args) => cmd_power_compare(args),
        Command::ExpansionCheck(args) => cmd_expansion_check(args),
        Command::Example62(args) => cmd_example62(args),
    }
}

fn parse_model(spec: &str, m: usize) -> Result<MomentModel, Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[0] {
        "linear" => MomentModel::linear(m),
        "quadratic" => {
            let c = match parts.get(1) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad quadratic constant {v:?}")))?,
                None => 1.0,
            };
            MomentModel::quadratic_norm(m, c)
        }
        "zero-power" | "zeropower" => {
            let eps = match parts.get(1) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad epsilon {v:?}")))?,
                None => 0.01,
            };
            let kmax = match parts.get(2) {
                Some(v) => v
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad kmax {v:?}")))?,
                None => 3,
            };
            if m != 1 {
                return Err(Error::Config(
                    "zero-power model needs one-column data".into(),
                ));
            }
            MomentModel::zero_power(eps, kmax)
        }
        other => Err(Error::Config(format!(
            "unknown model {other:?}; expected linear, quadratic[:c] or zero-power[:eps[:kmax]]"
        ))),
    }
}

fn parse_sigma(spec: &str, m: usize) -> Result<CostModel, Error> {
    let spec = spec.trim();
    if spec == "identity" {
        return Ok(CostModel::identity(m));
    }
    if let Some(rest) = spec.strip_prefix("diag:") {
        let values: Result<Vec<f64>, _> =
            rest.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = values.map_err(|_| Error::Config(format!("bad diagonal sigma {rest:?}")))?;
        if values.len() != m {
            return Err(Error::Config(format!(
                "diagonal sigma has {} entries for m={m}",
                values.len()
            )));
        }
        return CostModel::from_diagonal(&values);
    }
    let json = if let Some(path) = spec.strip_prefix('@') {
        std::fs::read_to_string(path)?
    } else if spec.starts_with('[') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec)?
    };
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&json).map_err(|e| Error::Config(format!("bad sigma JSON: {e}")))?;
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("sigma must be {m}x{m}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    CostModel::new(DMatrix::from_row_slice(m, m, &flat))
}

fn emit(output: &Option<PathBuf>, json: &str) -> Result<(), Error> {
    match output {
        Some(path) => write_output(path, json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn cmd_test(args: TestArgs) -> Result<(), Error> {
    let data = DataSet::load_csv_path(&args.data)?;
    let model = parse_model(&args.model, data.m())?;
    let cost = parse_sigma(&args.sigma, data.m())?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0,1), got {}",
            args.alpha
        )));
    }
    eprintln!("seed: {}", args.seed);

    let config = WpTestConfig {
        alpha: args.alpha,
        solver: SolverOptions {
            multistart_grid: args.multistart,
            zeta_radius_scale: args.zeta_radius_scale,
            ..SolverOptions::default()
        },
        bartlett: args.bartlett.into(),
        quantile_draws: args.draws,
        seed: args.seed,
    };

    let mut outcomes = Vec::new();
    if matches!(args.method, MethodArg::Wp | MethodArg::All) {
        outcomes.push(run_wp_test(&data, &model, &cost, &config)?);
    }
    if matches!(args.method, MethodArg::El | MethodArg::All) {
        outcomes.push(run_el_test(&data, &model, args.alpha)?);
    }
    if matches!(args.method, MethodArg::T2 | MethodArg::All) {
        outcomes.push(run_t2_test(&data, &model, args.alpha)?);
    }
    emit(&args.output, &emit_json(&outcomes)?)
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, Error> {
    let text = std::fs::read_to_string(path)?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad scenario: {e}")))?;
    Ok(scenario)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let scenario = load_scenario(&args.config)?;
    eprintln!("seed: {}", scenario.seed);
    let report = match args.study {
        StudyArg::Coverage => run_coverage_study(&scenario)?,
        StudyArg::Power => run_power_study(&scenario)?,
        StudyArg::Expansion => run_expansion_study(&scenario)?,
    };
    if let Some(csv_path) = &args.csv {
        write_output(csv_path, &emit_csv(&report))?;
    }
    emit(&args.output, &emit_json(&report)?)
}

#[derive(Serialize)]
struct PowerCompareReport {
    tau: f64,
    k1: f64,
    k2: f64,
    k3: f64,
    b_wp: f64,
    b_el: f64,
    b_t2: f64,
    i_value: f64,
    first_order_power: f64,
    predicted_power_wp: Vec<(usize, f64)>,
    recommendation: wproj::hypothesis::Recommendation,
    moments_provenance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    measured: Option<wproj::sim::SimReport>,
}

fn cmd_power_compare(args: PowerCompareArgs) -> Result<(), Error> {
    let scenario = load_scenario(&args.config)?;
    eprintln!("seed: {}", scenario.seed);
    let model = scenario.model.build()?;
    if model.d() != 1 {
        return Err(Error::Config(
            "power-compare implements the one-dimensional expansion".into(),
        ));
    }
    let cost = scenario.sigma.build(model.m())?;
    if scenario.tau0.is_empty() {
        return Err(Error::Config(
            "power-compare needs tau0 in the scenario".into(),
        ));
    }
    // Pilot sample under the null for the plug-in moments.
    let pilot = scenario.sample_null(args.pilot, 0x9901)?;
    let tau0 = DVector::from_vec(scenario.tau0.clone());
    let inputs = PowerInputs::plugin(&pilot, &model, &cost, tau0, scenario.alpha)?;
    let k = compute_k_constants(&inputs)?;
    let gaps = power_gap_b(&inputs)?;
    let s_a = inputs.alpha3_t / (inputs.alpha2_t * inputs.alpha2_t);
    let s_b = 2.0 * inputs.alpha3 / (3.0 * inputs.alpha2 * inputs.alpha2);
    let tau_h = (&inputs.e_dh * &inputs.tau0)[0];
    let recommendation = wproj::hypothesis::recommend_test(&wproj::hypothesis::DecisionInput {
        s_a,
        s_b,
        tau_h,
    })?;

    let measured = if args.measure {
        Some(run_power_study(&scenario)?)
    } else {
        None
    };

    let report = PowerCompareReport {
        tau: k.tau,
        k1: k.k1,
        k2: k.k2,
        k3: k.k3,
        b_wp: gaps.b_wp,
        b_el: gaps.b_el,
        b_t2: gaps.b_t2,
        i_value: gaps.i_value,
        first_order_power: power_first_order(&inputs)?,
        predicted_power_wp: scenario
            .ns
            .iter()
            .map(|&n| power_expansion(&inputs, n).map(|p| (n, p)))
            .collect::<Result<Vec<_>, Error>>()?,
        recommendation,
        moments_provenance: format!("plug-in from a {}-point null pilot sample", args.pilot),
        measured,
    };
    emit(&args.output, &emit_json(&report)?)
}

#[derive(Serialize)]
struct ExpansionCheckReport {
    terms: wproj::expansion::ExpansionTerms,
    order2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    order3: Option<f64>,
}

fn cmd_expansion_check(args: ExpansionCheckArgs) -> Result<(), Error> {
    if !(args.order == 2 || args.order == 3) {
        return Err(Error::Config("order must be 2 or 3".into()));
    }
    let data = DataSet::load_csv_path(&args.data)?;
    let model = parse_model(&args.model, data.m())?;
    let cost = parse_sigma(&args.sigma, data.m())?;
    let want_l = args.order == 3;
    let terms = compute_expansion_terms(&data, &model, &cost, want_l)?;
    let order2 = expansion_approx(&terms, 2)?;
    let order3 = if want_l {
        Some(expansion_approx(&terms, 3)?)
    } else {
        None
    };
    let report = ExpansionCheckReport {
        terms,
        order2,
        order3,
    };
    emit(&args.output, &emit_json(&report)?)
}

fn cmd_example62(args: Example62Args) -> Result<(), Error> {
    let rows = run_example62(args.kmax, args.epsilon)?;
    emit(&args.output, &emit_json(&rows)?)
}
