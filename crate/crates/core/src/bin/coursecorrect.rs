use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coursecorrect::env::ShellMode;
use coursecorrect::harness::{self, BackendSpec, HarnessError, RunConfig, SupervisorSpec, DEFAULT_API_BASE};
use coursecorrect::metrics::PriceTable;
use coursecorrect::prm::VariantName;

#[derive(Parser)]
#[command(name = "coursecorrect", version, about = "Run code agents under periodic PRM supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a policy (optionally supervised) over every instance of a manifest.
    Run(RunArgs),
    /// Re-evaluate the patches of a run directory in fresh workspaces.
    Evaluate {
        run_dir: PathBuf,
    },
    /// Aggregate a results file into a metrics table.
    Report {
        results: PathBuf,
        /// Results file of a baseline run; adds a delta column.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        price_table: Option<PathBuf>,
        /// Print the JSON summary instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Replay the rule-based detectors over stored trajectories.
    Analyze {
        /// Trajectory files or run directories.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        interval: usize,
        #[arg(long, default_value_t = 8)]
        window: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Remote model id, or scripted:<pattern> (golden_fix, loop_k_actions[:k],
    /// step_repetition, task_derailment[:step], termination_unawareness).
    #[arg(long)]
    policy_model: BackendSpec,
    /// Remote model id, or `scripted` for the rule-based PRM. Omit to run
    /// without a supervisor.
    #[arg(long, requires = "variant")]
    prm_model: Option<BackendSpec>,
    #[arg(long, value_parser = parse_variant, requires = "prm_model")]
    variant: Option<VariantName>,
    #[arg(long, default_value_t = 5)]
    interval: usize,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 75)]
    max_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    price_table: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    /// Environment variable holding the API key for remote models.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value = DEFAULT_API_BASE)]
    api_base: String,
    #[arg(long, value_enum, default_value_t = ShellArg::Bash)]
    shell: ShellArg,
    /// Seconds before an agent bash command is killed.
    #[arg(long, default_value_t = 120.0)]
    bash_timeout: f64,
    /// Taxonomy JSON replacing the bundled one.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// System instructions replacing the bundled template.
    #[arg(long)]
    system_prompt: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ShellArg {
    Bash,
    Fake,
}

fn parse_variant(s: &str) -> Result<VariantName, String> {
    s.parse().map_err(|e: coursecorrect::prm::PrmError| e.to_string())
}

fn prices(path: Option<&PathBuf>) -> Result<PriceTable, HarnessError> {
    match path {
        Some(p) => Ok(PriceTable::load(p)?),
        None => Ok(PriceTable::default()),
    }
}

fn run(args: RunArgs) -> Result<ExitCode, HarnessError> {
    let mut config = RunConfig::new(args.manifest, args.out, args.policy_model);
    config.supervisor = match (args.prm_model, args.variant) {
        (Some(prm), Some(variant)) => {
            Some(SupervisorSpec { variant, interval: args.interval, window: args.window, prm })
        }
        _ => None,
    };
    config.agent.max_steps = args.max_steps;
    config.agent.temperature = args.temperature;
    config.agent.top_p = args.top_p;
    config.agent.bash_timeout_secs = args.bash_timeout;
    config.agent.shell = match args.shell {
        ShellArg::Bash => ShellMode::Bash,
        ShellArg::Fake => ShellMode::Fake,
    };
    if let Some(p) = &args.system_prompt {
        config.agent.system_prompt =
            Some(std::fs::read_to_string(p).map_err(|e| HarnessError::Usage(format!("{}: {e}", p.display())))?);
    }
    config.parallelism = args.parallel;
    config.seed = args.seed;
    config.resume = args.resume;
    config.api_base = args.api_base;
    config.api_key_env = args.api_key_env;
    config.taxonomy_path = args.taxonomy;
    let prices = prices(args.price_table.as_ref())?;

    let summary = harness::run(&config, &prices)?;
    eprintln!(
        "{} executed, {} skipped, {} failed; results in {}",
        summary.executed.len(),
        summary.skipped.len(),
        summary.failures(),
        summary.out_dir.join("results.jsonl").display()
    );
    match coursecorrect::metrics::aggregate(&summary.results, &prices) {
        Ok(m) => print!("{}", coursecorrect::metrics::render_report(&m, None)),
        Err(e) => eprintln!("no report: {e}"),
    }
    Ok(if summary.failures() > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Evaluate { run_dir } => harness::evaluate(&run_dir).map(|rows| {
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let resolved = rows.iter().filter(|r| r.resolved).count();
            eprintln!("{resolved}/{} resolved, {failed} failed", rows.len());
            if failed > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS }
        }),
        Command::Report { results, baseline, price_table, json } => prices(price_table.as_ref())
            .and_then(|p| harness::report(&results, baseline.as_deref(), &p))
            .map(|(text, metrics)| {
                if json {
                    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
                } else {
                    print!("{text}");
                }
                ExitCode::SUCCESS
            }),
        Command::Analyze { paths, interval, window, json } => harness::analyze(&paths, interval, window).map(|r| {
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            } else {
                print!("{}", r.render());
            }
            ExitCode::SUCCESS
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
