use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use jssp_cli::{
    cmd_bench, cmd_compress, cmd_gen, cmd_solve, cmd_train, parse_train_config, read_instance, summary_path,
    BenchOptions, CliError, Method, SolveSettings,
};
use jssp_core::env::{EnvConfig, TimeRule};
use jssp_core::training::TrainConfig;
use jssp_core::Format;

#[derive(Parser)]
#[command(name = "jssp", version, about = "Job-shop scheduling with dispatching rules, learned policies and an expert solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct EnvArgs {
    /// Operations per job loaded into the model at once
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    /// Upcoming operations per job shown to policies
    #[arg(long, default_value_t = 3)]
    next_ops: usize,
    /// Decision-time rule: end (active schedules) or start (non-delay)
    #[arg(long, default_value = "end")]
    time_rule: TimeRule,
    /// Actors for ensemble methods
    #[arg(long, default_value_t = 8)]
    actors: usize,
    /// Wall-clock limit for the exact solver, in seconds
    #[arg(long, default_value_t = 60.0)]
    exact_budget: f64,
}

impl EnvArgs {
    fn settings(&self) -> Result<SolveSettings, CliError> {
        if self.horizon == 0 || self.actors == 0 || !(self.exact_budget >= 0.0) {
            return Err(CliError::Usage("horizon and actors must be positive, exact budget non-negative".into()));
        }
        Ok(SolveSettings {
            env: EnvConfig { horizon: self.horizon, next_ops: self.next_ops, rule: self.time_rule },
            actors: self.actors,
            exact_budget: Duration::from_secs_f64(self.exact_budget),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run methods over a directory of instances and report makespans
    Bench {
        dir: PathBuf,
        /// orlib or taillard; guessed per file when omitted
        #[arg(long)]
        format: Option<Format>,
        /// Comma-separated: fifo, spt, mtwr, exact, policy:<file>, ensemble:<file>
        #[arg(long, value_delimiter = ',', default_value = "fifo,spt,mtwr")]
        methods: Vec<Method>,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Per-run CSV; the summary goes next to it
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Solve one instance and write the schedule as JSON
    Solve {
        instance: PathBuf,
        #[arg(long)]
        format: Option<Format>,
        #[arg(long, default_value = "fifo")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Move every operation of a schedule to its earliest start
    Compress {
        instance: PathBuf,
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Train a policy from expert feedback
    Train {
        /// Instance files to train on
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        /// key=value settings file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the state saved in the output directory
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Generate a random instance
    Gen {
        jobs: usize,
        machines: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "orlib")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bench { dir, format, methods, seeds, out, env } => {
            let options = BenchOptions { dir, format, methods, seeds, settings: env.settings()?, out_csv: out.clone() };
            let report = cmd_bench(&options)?;
            if out.is_none() {
                println!("{}", jssp_cli::BenchRow::HEADER);
                for r in &report.rows {
                    println!("{},{},{},{},{},{:.6}", r.dataset, r.instance, r.method, r.seed, r.makespan, r.runtime_s);
                }
            }
            for s in &report.summaries {
                println!(
                    "{:<12} mean {:>10.2} ± {:>8.2} over {} instances, {:.4}s per run",
                    s.method, s.mean, s.std, s.instances, s.mean_runtime_s
                );
            }
            if let Some(path) = out {
                println!("rows written to {}, summary to {}", path.display(), summary_path(&path).display());
            }
        }
        Command::Solve { instance, format, method, seed, out, env } => {
            let inst = read_instance(&instance, format)?;
            let outcome = cmd_solve(&inst, &method, seed, &env.settings()?, out.as_deref())?;
            match outcome.certified {
                Some(true) => println!("makespan {} (optimal) in {:.3}s", outcome.makespan, outcome.wall_s),
                Some(false) => println!("makespan {} (budget exhausted) in {:.3}s", outcome.makespan, outcome.wall_s),
                None => println!("makespan {} in {:.3}s", outcome.makespan, outcome.wall_s),
            }
        }
        Command::Compress { instance, input, output, format } => {
            let inst = read_instance(&instance, format)?;
            let outcome = cmd_compress(&inst, &input, &output)?;
            println!(
                "start-time sum reduced by {}, makespan delta {}",
                outcome.start_sum_reduction, outcome.makespan_delta
            );
        }
        Command::Train { instances, config, seed, out, resume, format } => {
            let config = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    parse_train_config(&text)?
                }
                None => TrainConfig::default(),
            };
            let outcome = cmd_train(&instances, format, &config, seed, &out, resume)?;
            match outcome.best_epoch {
                Some(e) => println!("best greedy mean {:.2} at epoch {e} (untrained {:.2})", outcome.best_mean, outcome.initial_mean),
                None => println!("no epoch beat the untrained policy ({:.2})", outcome.initial_mean),
            }
        }
        Command::Gen { jobs, machines, seed, format, out } => {
            let inst = cmd_gen(jobs, machines, seed, format, &out)?;
            println!("wrote {} ({} jobs, {} machines) to {}", inst.name(), jobs, machines, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
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
