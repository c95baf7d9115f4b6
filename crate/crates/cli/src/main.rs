use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smq_cli::plan::parse_seeds;
use smq_cli::preset::{preset_plan, PRESETS};
use smq_cli::{emit_plots, run_experiment, CliError, ExperimentPlan, PlotKind, Result, Sources, SweepAxis};
use smq_core::SystemConfig;

#[derive(Parser)]
#[command(name = "smq", version, about = "Multicast queue simulations and delay analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write summary.csv.
    Run(RunArgs),
    /// Render a figure from an existing summary CSV.
    Plot {
        /// Summary CSV written by `run`.
        input: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        plot: PlotKind,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a configuration file and list every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the default desk-scale configuration.
    DefaultConfig,
    /// List the paper-scale presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; defaults to the desk-scale scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep axis KEY=V1,V2,...; repeatable.
    #[arg(long, value_parser = parse_axis)]
    sweep: Vec<SweepAxis>,
    /// Seed list `1,2,3` or range `0..4`.
    #[arg(long)]
    seeds: Option<String>,
    /// Transmissions per replication.
    #[arg(long)]
    services: Option<usize>,
    /// Leading transmissions excluded from statistics (default 10%).
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, conflicts_with_all = ["sim", "both"])]
    theory: bool,
    #[arg(long, conflicts_with = "both")]
    sim: bool,
    #[arg(long)]
    both: bool,
    /// Also write per-request sojourn CSVs.
    #[arg(long)]
    samples: bool,
    /// Figures to render after the run; repeatable.
    #[arg(long, value_parser = parse_kind)]
    plot: Vec<PlotKind>,
    /// Named paper-scale profile.
    #[arg(long)]
    preset: Option<String>,
    /// Confirms that a long-running preset should run.
    #[arg(long)]
    full: bool,
    /// Concurrent sweep points; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Monte-Carlo samples per service-moment estimate.
    #[arg(long)]
    moment_samples: Option<usize>,
}

fn parse_kind(s: &str) -> Result<PlotKind, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn build_plan(args: &RunArgs) -> Result<ExperimentPlan> {
    let mut plan = match &args.preset {
        Some(name) => preset_plan(name, args.full, &args.out)?,
        None => ExperimentPlan::new(SystemConfig::default(), &args.out),
    };
    if let Some(path) = &args.config {
        plan.base = SystemConfig::from_path(path)?;
    }
    for axis in &args.sweep {
        plan.set_axis(axis.clone());
    }
    if let Some(seeds) = &args.seeds {
        plan.seeds = parse_seeds(seeds)?;
    }
    if let Some(n) = args.services {
        plan.n_services = n;
        plan.warmup = smq_core::simulator::default_warmup(n);
    }
    if let Some(w) = args.warmup {
        plan.warmup = w;
    }
    if let Some(m) = args.moment_samples {
        plan.theory.samples = m;
    }
    plan.sources = match (args.theory, args.both) {
        (true, _) => Sources::Theory,
        (_, true) => Sources::Both,
        _ => Sources::Sim,
    };
    plan.samples = args.samples;
    plan.workers = args.workers;
    Ok(plan)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let plan = build_plan(&args)?;
    let outcome = run_experiment(&plan)?;
    println!("{}", outcome.summary_path.display());
    for path in &outcome.sample_paths {
        println!("{}", path.display());
    }
    for kind in &args.plot {
        println!("{}", emit_plots(&outcome.summary_path, *kind, &plan.out_dir)?.display());
    }
    if outcome.is_ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} sweep points failed; see the error column", outcome.failed_points, outcome.points);
        Ok(ExitCode::from(2))
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Plot { input, plot, out } => {
            println!("{}", emit_plots(&input, plot, &out)?.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let config = SystemConfig::from_path(&config)?;
            let problems = smq_core::validate(&config);
            for p in &problems {
                eprintln!("{p}");
            }
            if problems.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::DefaultConfig => {
            println!("{}", SystemConfig::default().to_json_string());
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets => {
            for p in &PRESETS {
                println!("{:<14} {}", p.name, p.description);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
