use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cav_mechanism::harness::{run_suite, Suite, SuiteOptions, SuiteReport, EXIT_FAIL, EXIT_INPUT, EXIT_PASS};
use cav_mechanism::mechanism::ProfileFile;
use cav_mechanism::scenario::{generate_random_scenario, load_scenario};
use cav_mechanism::{Error, MessageProfile, Orientation, Scenario, SizeSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cavmech", version, about = "Travel-time allocation mechanism harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the centralized welfare problem and certify the optimum.
    Solve(SuiteArgs),
    /// Evaluate the mechanism's outcome on a message profile.
    MechanismEval {
        #[command(flatten)]
        common: SuiteArgs,
        /// Message profile (JSON, keyed by traveler id then edge id).
        profile: PathBuf,
    },
    /// Build the candidate equilibrium, verify it and run best-response dynamics.
    FindNe(SuiteArgs),
    /// Check the equilibrium properties of the mechanism.
    Verify(SuiteArgs),
    /// Run every check.
    Full(SuiteArgs),
    /// Write a seeded random scenario.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OrientationArg {
    PaperLiteral,
    ResourceMode,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::PaperLiteral => Orientation::PaperLiteral,
            OrientationArg::ResourceMode => Orientation::ResourceMode,
        }
    }
}

#[derive(Args, Debug)]
struct SuiteArgs {
    /// Scenario file. Without it a random scenario is generated from --seed.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Seed for random starts, sampling and scenario generation.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the machine-readable JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Equilibrium slack.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Expected valuation orientation; a mismatch with the scenario is an input error.
    #[arg(long, value_enum)]
    orientation: Option<OrientationArg>,
    /// Write the best-response trajectory CSV here.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "resource_mode")]
    orientation: OrientationArg,
    #[arg(long, default_value_t = 3)]
    edges: usize,
    #[arg(long, default_value_t = 4)]
    travelers: usize,
    #[arg(long, default_value_t = 2)]
    max_route_len: usize,
    /// Make every used edge shared by at least two travelers.
    #[arg(long)]
    all_shared: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { EXIT_PASS as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e) as u8)
        }
    }
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Structural(_)
        | Error::Attribute(_)
        | Error::Domain(_)
        | Error::Usage(_)
        | Error::Parse(_)
        | Error::Io(_)
        | Error::Generation(_) => EXIT_INPUT,
        _ => EXIT_FAIL,
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    let (suite, args, profile) = match cli.command {
        Command::Generate(g) => return generate(g),
        Command::Solve(a) => (Suite::Solve, a, None),
        Command::MechanismEval { common, profile } => (Suite::MechanismEval, common, Some(profile)),
        Command::FindNe(a) => (Suite::FindNe, a, None),
        Command::Verify(a) => (Suite::Verify, a, None),
        Command::Full(a) => (Suite::Full, a, None),
    };
    let scenario = scenario_for(&args)?;
    let mut options = SuiteOptions {
        seed: args.seed,
        ..SuiteOptions::default()
    };
    if let Some(eps) = args.epsilon {
        options.search.epsilon_ne = eps;
    }
    if let Some(path) = profile {
        let file: ProfileFile = serde_json::from_str(&read(&path)?)?;
        options.profile = Some(MessageProfile::from_file(&scenario, &file)?);
    }
    let report = run_suite(&scenario, suite, &options)?;
    emit(&report, &args)?;
    Ok(report.exit_code)
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

fn scenario_for(args: &SuiteArgs) -> Result<Scenario, Error> {
    let scenario = match &args.scenario {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Usage(format!("{}: no such file", path.display())));
            }
            load_scenario(path)?
        }
        None => {
            let size = SizeSpec {
                orientation: args.orientation.map_or(Orientation::ResourceMode, Into::into),
                ..SizeSpec::default()
            };
            generate_random_scenario(args.seed.unwrap_or(0), &size)?
        }
    };
    if let Some(expected) = args.orientation {
        let expected = Orientation::from(expected);
        if scenario.metadata.orientation != expected {
            return Err(Error::Usage(format!(
                "scenario orientation is {:?}, --orientation asks for {expected:?}",
                scenario.metadata.orientation
            )));
        }
    }
    Ok(scenario)
}

fn emit(report: &SuiteReport, args: &SuiteArgs) -> Result<(), Error> {
    let json = report.machine_json()?;
    if let Some(out) = &args.out {
        fs::write(out, &json)?;
    }
    if let Some(path) = &args.trajectory {
        fs::write(path, report.trajectory_csv()?)?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.human_table());
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<i32, Error> {
    let size = SizeSpec {
        edges: args.edges,
        travelers: args.travelers,
        orientation: args.orientation.into(),
        max_route_len: args.max_route_len,
        all_shared: args.all_shared,
        ..SizeSpec::default()
    };
    let text = generate_random_scenario(args.seed, &size)?.to_json()?;
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(EXIT_PASS)
}
