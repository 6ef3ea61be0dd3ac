//! Commands behind the `jssp` binary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use jssp_core::dispatch::{ensemble_solve, greedy_rollout, Rule};
use jssp_core::env::{EnvConfig, TimeRule};
use jssp_core::expert::solve_exact;
use jssp_core::model::{compress, validate};
use jssp_core::training::{train_loop, TrainConfig, TrainOutcome};
use jssp_core::{
    EnvError, Format, Instance, InstanceError, PolicyError, PolicyNet, Solution, SolutionError, Time, TrainError,
};
use log::info;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

fn data_at(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(_) | TrainError::Policy(PolicyError::Io(_) | PolicyError::Corrupt(_)) => {
                CliError::Data(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

/// How a schedule is produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Rule(Rule),
    /// Greedy rollout of a saved policy.
    Policy(PathBuf),
    /// Temperature ensemble of a saved policy.
    Ensemble(PathBuf),
    /// Branch and bound, optimal when it finishes.
    Exact,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("policy:") {
            return Ok(Method::Policy(PathBuf::from(path)));
        }
        if let Some(path) = s.strip_prefix("ensemble:") {
            return Ok(Method::Ensemble(PathBuf::from(path)));
        }
        if s == "exact" {
            return Ok(Method::Exact);
        }
        s.parse::<Rule>()
            .map(Method::Rule)
            .map_err(|_| format!("unknown method `{s}` (expected fifo|spt|mtwr|exact|policy:<file>|ensemble:<file>)"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Rule(r) => write!(f, "{r}"),
            Method::Policy(p) => write!(f, "policy:{}", p.display()),
            Method::Ensemble(p) => write!(f, "ensemble:{}", p.display()),
            Method::Exact => f.write_str("exact"),
        }
    }
}

/// Method with its checkpoint loaded.
enum Solver {
    Rule(Rule),
    Policy(PolicyNet),
    Ensemble(PolicyNet),
    Exact,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveSettings {
    pub env: EnvConfig,
    pub actors: usize,
    pub exact_budget: Duration,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings { env: EnvConfig::default(), actors: 8, exact_budget: Duration::from_secs(60) }
    }
}

impl Solver {
    fn load(method: &Method) -> Result<Solver, CliError> {
        let load = |p: &Path| PolicyNet::load(p).map_err(|e| data_at(p, e));
        Ok(match method {
            Method::Rule(r) => Solver::Rule(*r),
            Method::Policy(p) => Solver::Policy(load(p)?),
            Method::Ensemble(p) => Solver::Ensemble(load(p)?),
            Method::Exact => Solver::Exact,
        })
    }

    /// Solution plus the optimality flag of exact runs.
    fn solve(&self, instance: &Instance, seed: u64, settings: &SolveSettings) -> Result<(Solution, Option<bool>), CliError> {
        Ok(match self {
            Solver::Rule(r) => (greedy_rollout(instance, r, settings.env, true)?, None),
            Solver::Policy(net) => (greedy_rollout(instance, net, settings.env, false)?, None),
            Solver::Ensemble(net) => (ensemble_solve(instance, net, settings.env, settings.actors, seed)?.best, None),
            Solver::Exact => {
                let r = solve_exact(instance, settings.exact_budget);
                (r.solution, Some(r.certified))
            }
        })
    }
}

/// Guesses the text format: Taillard files carry label lines, OR-Library files do not.
pub fn detect_format(text: &str) -> Format {
    let labelled = text
        .lines()
        .map(str::trim)
        .any(|l| !l.is_empty() && !l.starts_with('#') && l.chars().any(|c| c.is_ascii_alphabetic()));
    if labelled {
        Format::Taillard
    } else {
        Format::OrLib
    }
}

pub fn read_instance(path: &Path, format: Option<Format>) -> Result<Instance, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data_at(path, e))?;
    let format = format.unwrap_or_else(|| detect_format(&text));
    let name = path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
    Instance::parse(&text, format, &name).map_err(|e: InstanceError| data_at(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dataset: String,
    pub instance: String,
    pub method: String,
    pub seed: u64,
    pub makespan: Time,
    pub runtime_s: f64,
}

impl BenchRow {
    pub const HEADER: &'static str = "dataset,instance,method,seed,makespan,runtime_s";
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub instances: usize,
    pub mean: f64,
    /// Sample deviation of per-instance makespans within each instance size, averaged
    /// over sizes.
    pub std: f64,
    pub mean_runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<Summary>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub dir: PathBuf,
    pub format: Option<Format>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub settings: SolveSettings,
    pub out_csv: Option<PathBuf>,
}

fn instance_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data_at(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no instance files", dir.display())));
    }
    Ok(files)
}

/// Mean over all rows of a method; deviation as documented on [`Summary::std`].
pub fn summarize(rows: &[BenchRow], sizes: &BTreeMap<String, (usize, usize)>) -> Vec<Summary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method).collect();
            let n = mine.len() as f64;
            let mut per_instance: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in &mine {
                per_instance.entry(&r.instance).or_default().push(r.makespan as f64);
            }
            let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            for (name, values) in &per_instance {
                let size = sizes.get(*name).copied().unwrap_or((0, 0));
                groups.entry(size).or_default().push(values.iter().sum::<f64>() / values.len() as f64);
            }
            let deviations: Vec<f64> = groups
                .values()
                .filter(|v| v.len() > 1)
                .map(|v| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                })
                .collect();
            Summary {
                method: method.to_string(),
                instances: per_instance.len(),
                mean: mine.iter().map(|r| r.makespan as f64).sum::<f64>() / n,
                std: if deviations.is_empty() { 0.0 } else { deviations.iter().sum::<f64>() / deviations.len() as f64 },
                mean_runtime_s: mine.iter().map(|r| r.runtime_s).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Runs every method on every instance of a directory for each seed. Rows are ordered
/// by instance, method and seed. With `out_csv` set, rows go there and the summary to
/// the sibling `<stem>.summary.csv`.
pub fn cmd_bench(options: &BenchOptions) -> Result<BenchReport, CliError> {
    if options.methods.is_empty() || options.seeds.is_empty() {
        return Err(CliError::Usage("bench needs at least one method and one seed".into()));
    }
    let files = instance_files(&options.dir)?;
    let instances: Vec<Instance> = files.iter().map(|p| read_instance(p, options.format)).collect::<Result<_, _>>()?;
    let solvers: Vec<Solver> = options.methods.iter().map(Solver::load).collect::<Result<_, _>>()?;
    let dataset = options.dir.file_name().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    let rows: Vec<Vec<BenchRow>> = instances
        .par_iter()
        .map(|instance| {
            let mut rows = Vec::new();
            for (method, solver) in options.methods.iter().zip(&solvers) {
                for &seed in &options.seeds {
                    let clock = Instant::now();
                    let (solution, _) = solver.solve(instance, seed, &options.settings)?;
                    let runtime_s = clock.elapsed().as_secs_f64();
                    validate(instance, &solution).map_err(|v| CliError::Internal(format!("{}: {v}", instance.name())))?;
                    rows.push(BenchRow {
                        dataset: dataset.clone(),
                        instance: instance.name().to_string(),
                        method: method.to_string(),
                        seed,
                        makespan: solution.makespan,
                        runtime_s,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, CliError>>()?;
    let rows: Vec<BenchRow> = rows.into_iter().flatten().collect();
    let sizes = instances.iter().map(|i| (i.name().to_string(), (i.job_count(), i.machine_count()))).collect();
    let summaries = summarize(&rows, &sizes);
    if let Some(path) = &options.out_csv {
        write_bench(path, &rows, &summaries)?;
    }
    Ok(BenchReport { rows, summaries })
}

pub fn summary_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map_or_else(|| "bench".into(), |s| s.to_string_lossy().into_owned());
    csv.with_file_name(format!("{stem}.summary.csv"))
}

fn write_bench(path: &Path, rows: &[BenchRow], summaries: &[Summary]) -> Result<(), CliError> {
    let io = |e: std::io::Error| data_at(path, e);
    let mut out = String::from(BenchRow::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{:.6}\n", r.dataset, r.instance, r.method, r.seed, r.makespan, r.runtime_s));
    }
    fs::write(path, out).map_err(io)?;
    let mut out = String::from("method,instances,mean,std,mean_runtime_s\n");
    for s in summaries {
        out.push_str(&format!("{},{},{:.2},{:.2},{:.6}\n", s.method, s.instances, s.mean, s.std, s.mean_runtime_s));
    }
    fs::write(summary_path(path), out).map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub makespan: Time,
    /// Present for exact runs: whether optimality was proven.
    pub certified: Option<bool>,
    pub wall_s: f64,
}

/// Solves one instance and writes the compressed, validated schedule as JSON.
pub fn cmd_solve(
    instance: &Instance,
    method: &Method,
    seed: u64,
    settings: &SolveSettings,
    out: Option<&Path>,
) -> Result<SolveOutcome, CliError> {
    let solver = Solver::load(method)?;
    let clock = Instant::now();
    let (solution, certified) = solver.solve(instance, seed, settings)?;
    let wall_s = clock.elapsed().as_secs_f64();
    let solution = compress(instance, &solution).map_err(|e| CliError::Internal(e.to_string()))?;
    if let Some(path) = out {
        solution.write(path).map_err(|e| data_at(path, e))?;
    }
    Ok(SolveOutcome { makespan: solution.makespan, certified, wall_s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressOutcome {
    /// Sum of start times removed.
    pub start_sum_reduction: Time,
    /// New makespan minus old; never positive.
    pub makespan_delta: i64,
}

pub fn cmd_compress(instance: &Instance, input: &Path, output: &Path) -> Result<CompressOutcome, CliError> {
    let solution = Solution::read(input).map_err(|e| data_at(input, e))?;
    let compressed = compress(instance, &solution).map_err(|e: SolutionError| data_at(input, e))?;
    compressed.write(output).map_err(|e| data_at(output, e))?;
    Ok(CompressOutcome {
        start_sum_reduction: solution.start_sum() - compressed.start_sum(),
        makespan_delta: compressed.makespan as i64 - solution.makespan as i64,
    })
}

/// Parses `key = value` lines over the defaults. `#` starts a comment.
pub fn parse_train_config(text: &str) -> Result<TrainConfig, CliError> {
    let mut config = TrainConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| CliError::Usage(format!("config key `{key}`: {what} `{value}`"));
        let int = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer, found"));
        let real = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("expected a number, found"));
        match key {
            "epochs" => config.epochs = int()?,
            "actors" => config.actors = int()?,
            "horizon" => config.env.horizon = int()?,
            "next_ops" => config.env.next_ops = int()?,
            "time_rule" => config.env.rule = value.parse::<TimeRule>().map_err(|_| bad("expected end|start, found"))?,
            "eps" => config.eps = real()?,
            "beta" => config.beta = real()?,
            "K" | "k" => config.k = int()?,
            "minibatches" => config.minibatches = int()?,
            "lr" => config.lr = real()?,
            "expert_budget_start" => config.expert_budget_start = real()?,
            "expert_budget_step" => config.expert_budget_step = real()?,
            "expert_iterations" => config.expert_iterations = int()?,
            "expert_stall" => config.expert_stall = int()?,
            other => return Err(CliError::Usage(format!("unknown config key `{other}`"))),
        }
    }
    let check = |ok: bool, key: &str| if ok { Ok(()) } else { Err(CliError::Usage(format!("config key `{key}` is out of range"))) };
    check(config.actors >= 1, "actors")?;
    check(config.env.horizon >= 1, "horizon")?;
    check(config.eps > 0.0 && config.eps < 1.0, "eps")?;
    check(config.beta > 0.0, "beta")?;
    check(config.k >= 1, "K")?;
    check(config.minibatches >= 1, "minibatches")?;
    check(config.lr > 0.0, "lr")?;
    check(config.expert_budget_start > 0.0, "expert_budget_start")?;
    check(config.expert_budget_step >= 0.0, "expert_budget_step")?;
    Ok(config)
}

/// Trains on the given instance files; checkpoints and `metrics.csv` land in `out_dir`.
pub fn cmd_train(
    instances: &[PathBuf],
    format: Option<Format>,
    config: &TrainConfig,
    seed: u64,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome, CliError> {
    if instances.is_empty() {
        return Err(CliError::Usage("train needs at least one instance".into()));
    }
    let loaded: Vec<Instance> = instances.iter().map(|p| read_instance(p, format)).collect::<Result<_, _>>()?;
    let outcome = train_loop(&loaded, config, seed, Some(out_dir), resume)?;
    info!("best greedy mean {:.2} (initial {:.2})", outcome.best_mean, outcome.initial_mean);
    Ok(outcome)
}

/// Writes a random instance with every job visiting every machine once.
pub fn cmd_gen(jobs: usize, machines: usize, seed: u64, format: Format, out: &Path) -> Result<Instance, CliError> {
    if jobs == 0 || machines == 0 {
        return Err(CliError::Usage("gen needs at least one job and one machine".into()));
    }
    let instance = Instance::generate(jobs, machines, seed);
    let text = instance.to_text(format).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut file = fs::File::create(out).map_err(|e| data_at(out, e))?;
    file.write_all(text.as_bytes()).map_err(|e| data_at(out, e))?;
    Ok(instance)
}
