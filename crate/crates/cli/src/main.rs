use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wassoed::acceptance;
use wassoed::config::{Config, Experiment};
use wassoed::error::{CliError, CliResult};
use wassoed::experiments::{
    run_convergence_study, run_utility_grid, write_convergence_outputs, write_grid_outputs,
};
use wassoed::ops::{run_distance, run_transport, write_distance_outputs, write_transport_outputs};

#[derive(Parser)]
#[command(name = "wassoed", version, about = "Wasserstein optimal experimental design experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate utility criteria on a design grid.
    Grid(Common),
    /// Empirical-prior convergence study.
    Converge(Common),
    /// Wasserstein distance between two measures.
    Distance(Common),
    /// Optimal transport map between two measures.
    Transport(Common),
    /// Run acceptance criteria; exit status 4 if any fails.
    Selfcheck(Selfcheck),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Selfcheck {
    /// Criteria to run; defaults to the fast ones (2, 3, 4, 5, 8, 9).
    #[arg(long, value_delimiter = ',')]
    criteria: Vec<usize>,
    /// Run all nine criteria.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    threads: Option<usize>,
}

fn init_threads(n: Option<usize>) -> CliResult<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load(args: &Common, allowed: &[Experiment]) -> CliResult<Config> {
    let mut config = Config::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    if !allowed.contains(&config.experiment) {
        return Err(CliError::Usage(format!("experiment {:?} does not belong to this subcommand", config.experiment)));
    }
    let config = config.resolved()?;
    init_threads(config.threads)?;
    Ok(config)
}

fn base_dir(args: &Common) -> &Path {
    args.config.parent().unwrap_or(Path::new("."))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Grid(args) => {
            let config = load(
                &args,
                &[Experiment::Linear1dUtility, Experiment::Example1Grid, Experiment::Example2Grid],
            )?;
            let run = run_utility_grid(&config)?;
            write_grid_outputs(&config.output_dir, &config, &run)?;
            for g in &run.grids {
                match g.argmax() {
                    Some(a) => println!("{}: argmax {:?} value {:.6e}", g.criterion.tag(), a.theta, a.value),
                    None => println!("{}: no finite cells", g.criterion.tag()),
                }
            }
            if let (Some(res), Some(limit)) = (run.surrogate_residual, run.surrogate_limit) {
                if res > limit {
                    eprintln!("warning: surrogate training residual {res:.3e} exceeds {limit:.1e}");
                }
            }
            run.check_failures()
        }
        Command::Converge(args) => {
            let config = load(&args, &[Experiment::Linear1dConvergence])?;
            let study = run_convergence_study(&config)?;
            write_convergence_outputs(&config.output_dir, &config, &study)?;
            for (t, s) in &study.slopes {
                println!("theta {t}: slope {s:.4}");
            }
            Ok(())
        }
        Command::Distance(args) => {
            let config = load(&args, &[Experiment::Distance])?;
            let r = run_distance(&config, base_dir(&args))?;
            write_distance_outputs(&config.output_dir, &config, &r)?;
            println!("{:.15e}", r.distance);
            Ok(())
        }
        Command::Transport(args) => {
            let config = load(&args, &[Experiment::Transport])?;
            let r = run_transport(&config, base_dir(&args))?;
            write_transport_outputs(&config.output_dir, &config, &r)?;
            println!("{}", r.summary);
            Ok(())
        }
        Command::Selfcheck(args) => {
            init_threads(args.threads)?;
            let ids: Vec<usize> = if args.full {
                (1..=9).collect()
            } else if args.criteria.is_empty() {
                vec![2, 3, 4, 5, 8, 9]
            } else {
                args.criteria.clone()
            };
            if let Some(bad) = ids.iter().find(|&&i| !(1..=9).contains(&i)) {
                return Err(CliError::Usage(format!("no criterion {bad}")));
            }
            let outcomes = acceptance::run(&ids, |o| println!("{o}"));
            let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Acceptance(format!("criteria {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
