//! Training from expert feedback.
//!
//! Every epoch each instance is attacked by several sampling actors. A prefix length `j`
//! is drawn per instance; the expert rewrites each actor's schedule after its first `j`
//! steps. Two clipped-surrogate updates follow: one over the suffixes, rewarding expert
//! steps and penalizing actor steps in proportion to the expert's gain, and one over
//! the prefixes, weighted by how good each prefix turned out after expert completion.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dispatch::{greedy_rollout, masked_softmax, sample_episode};
use crate::env::{Action, Env, EnvConfig, Observation};
use crate::error::{PolicyError, TrainError};
use crate::expert::{follow_solution, improve, Budget};
use crate::instance::{Instance, Solution, Time};
use crate::policy::{Adam, PolicyNet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub actors: usize,
    pub env: EnvConfig,
    /// Surrogate clip range.
    pub eps: f64,
    /// KL threshold that ends an update phase.
    pub beta: f64,
    /// Passes over the samples per update phase.
    pub k: usize,
    pub minibatches: usize,
    pub lr: f64,
    /// Expert wall-clock budget in seconds at epoch 0, and its growth per epoch.
    pub expert_budget_start: f64,
    pub expert_budget_step: f64,
    pub expert_iterations: usize,
    pub expert_stall: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            actors: 8,
            env: EnvConfig::default(),
            eps: 0.2,
            beta: 0.03,
            k: 20,
            minibatches: 20,
            lr: 3e-4,
            expert_budget_start: 1.0,
            expert_budget_step: 0.1,
            expert_iterations: 500,
            expert_stall: 100,
        }
    }
}

impl TrainConfig {
    pub fn expert_budget(&self, epoch: usize) -> Budget {
        Budget::seconds(self.expert_budget_start + self.expert_budget_step * epoch as f64)
            .with_iterations(self.expert_iterations, self.expert_stall)
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub observation: Observation,
    /// Index into the logits: a job, or the job count for No-Op.
    pub action: usize,
    /// Logits of the policy that generated (or scored) the step.
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub makespan: Time,
}

/// One actor's contribution to a wave.
#[derive(Debug, Clone)]
pub struct Demo {
    pub instance: usize,
    pub actor_index: usize,
    /// Number of leading actor steps shared with the expert schedule.
    pub prefix_len: usize,
    pub actor: Trajectory,
    /// Expert steps after the prefix.
    pub expert: Trajectory,
    /// Expert makespan over actor makespan.
    pub improvement: f64,
}

impl Demo {
    pub fn prefix(&self) -> &[Step] {
        &self.actor.steps[..self.prefix_len]
    }

    pub fn actor_suffix(&self) -> &[Step] {
        &self.actor.steps[self.prefix_len..]
    }
}

/// Samples one episode per actor on every instance and asks the expert to improve each
/// after a shared random prefix length.
pub fn generate_demos(
    instances: &[Instance],
    net: &PolicyNet,
    config: &TrainConfig,
    budget: &Budget,
    seed: u64,
) -> Result<Vec<Demo>, TrainError> {
    let mut demos = Vec::with_capacity(instances.len() * config.actors);
    for (index, instance) in instances.iter().enumerate() {
        let mut group_rng = ChaCha8Rng::seed_from_u64(seed);
        group_rng.set_stream(index as u64);
        let actor_seeds: Vec<u64> = (0..config.actors).map(|_| group_rng.gen()).collect();
        let rollouts: Vec<(Trajectory, Vec<Action>, Solution)> = actor_seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut steps = Vec::new();
                let rollout = sample_episode(instance, net, config.env, 1.0, &mut rng, |obs, logits, action| {
                    steps.push(Step {
                        observation: obs.clone(),
                        action: action.index(instance.job_count()),
                        logits: logits.to_vec(),
                    })
                })?;
                let makespan = rollout.makespan();
                Ok((Trajectory { steps, makespan }, rollout.actions, rollout.solution))
            })
            .collect::<Result<_, TrainError>>()?;
        let min_len = rollouts.iter().map(|r| r.0.steps.len()).min().unwrap_or(0);
        let prefix_len = group_rng.gen_range(0..=min_len);
        let group: Vec<Demo> = rollouts
            .into_par_iter()
            .enumerate()
            .map(|(actor, (trajectory, actions, solution))| {
                let wrap = |source| TrainError::Expert { actor, instance: instance.name().to_string(), source };
                let mut env = Env::replay(instance, config.env, &actions[..prefix_len]).map_err(|e| wrap(e.into()))?;
                let pinned = env.fixed_log().to_vec();
                let target = improve(instance, &solution, &pinned, budget).map_err(wrap)?;
                let mut steps = Vec::new();
                let mut failure = None;
                follow_solution(&mut env, &target, |state, action| {
                    let observation = state.observe();
                    match net.forward(&observation) {
                        Ok(logits) => steps.push(Step { action: action.index(instance.job_count()), observation, logits }),
                        Err(e) => failure = Some(e),
                    }
                })
                .map_err(wrap)?;
                if let Some(e) = failure {
                    return Err(e.into());
                }
                let improvement = target.makespan as f64 / trajectory.makespan as f64;
                Ok(Demo {
                    instance: index,
                    actor_index: actor,
                    prefix_len,
                    actor: trajectory,
                    expert: Trajectory { steps, makespan: target.makespan },
                    improvement,
                })
            })
            .collect::<Result<_, TrainError>>()?;
        demos.extend(group);
    }
    Ok(demos)
}

/// Affine map onto `[0, 1]`; constant input maps to zeros.
pub fn minmax_scale(values: &[f64]) -> Result<Vec<f64>, TrainError> {
    if values.is_empty() {
        return Err(TrainError::Empty);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Zero mean, unit population deviation; `None` when every value is equal.
pub fn standardize(values: &[f64]) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if values.is_empty() || std == 0.0 {
        return None;
    }
    Some(values.iter().map(|v| (v - mean) / std).collect())
}

/// Clipped surrogate loss of one sample.
pub fn surrogate(advantage: f64, ratio: f64, eps: f64) -> f64 {
    (-advantage * ratio).max(-advantage * ratio.clamp(1.0 - eps, 1.0 + eps))
}

/// `KL(p || q)` over the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.max(f64::MIN_POSITIVE).ln()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub samples: usize,
    /// Completed passes over the samples.
    pub applied_iterations: usize,
    /// Mean KL between the phase's starting policy and the final one.
    pub kl: f64,
    pub stopped_early: bool,
}

struct Sample<'a> {
    observation: &'a Observation,
    action: usize,
    old_probs: Vec<f64>,
    advantage: f64,
}

const GRAD_CHUNK: usize = 16;

fn minibatch_gradient(net: &PolicyNet, batch: &[&Sample<'_>], eps: f64) -> Result<(Vec<f64>, f64), PolicyError> {
    let n = net.params().len();
    let scale = 1.0 / batch.len() as f64;
    let partial: Vec<Result<(Vec<f64>, f64), PolicyError>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for s in chunk {
                let (logits, cache) = net.forward_cached(s.observation)?;
                let probs = masked_softmax(&logits, &s.observation.mask, 1.0);
                let ratio = probs[s.action] / s.old_probs[s.action];
                let plain = -s.advantage * ratio;
                let value = surrogate(s.advantage, ratio, eps);
                loss += value * scale;
                if plain >= value {
                    // d(-A * ratio) = -A * ratio * d log p(action)
                    let coef = -s.advantage * ratio * scale;
                    let dlogits: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| coef * (if i == s.action { 1.0 } else { 0.0 } - p))
                        .collect();
                    net.backward(&cache, &dlogits, &mut grad);
                }
            }
            Ok((grad, loss))
        })
        .collect();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for part in partial {
        let (g, l) = part?;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        loss += l;
    }
    Ok((grad, loss))
}

fn mean_kl(net: &PolicyNet, samples: &[Sample<'_>]) -> Result<f64, PolicyError> {
    let total: Result<Vec<f64>, PolicyError> = samples
        .par_iter()
        .map(|s| {
            let logits = net.forward(s.observation)?;
            Ok(kl_divergence(&s.old_probs, &masked_softmax(&logits, &s.observation.mask, 1.0)))
        })
        .collect();
    Ok(total?.iter().sum::<f64>() / samples.len().max(1) as f64)
}

fn update<R: Rng>(
    net: &mut PolicyNet,
    optimizer: &mut Adam,
    samples: &[Sample<'_>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    let mut stats = UpdateStats { samples: samples.len(), ..UpdateStats::default() };
    if samples.is_empty() {
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batches = config.minibatches.clamp(1, samples.len());
    for iteration in 0..config.k {
        order.shuffle(rng);
        for b in 0..batches {
            let lo = b * samples.len() / batches;
            let hi = (b + 1) * samples.len() / batches;
            let batch: Vec<&Sample<'_>> = order[lo..hi].iter().map(|&i| &samples[i]).collect();
            let (grad, loss) = minibatch_gradient(net, &batch, config.eps)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration,
                    detail: format!("loss {loss} on a batch of {}", batch.len()),
                });
            }
            optimizer.update(net.params_mut(), &grad);
        }
        stats.applied_iterations += 1;
        stats.kl = mean_kl(net, samples)?;
        debug!("iteration {iteration}: kl {:.5}", stats.kl);
        if stats.kl > config.beta {
            stats.stopped_early = true;
            break;
        }
    }
    Ok(stats)
}

/// Update on suffix steps. Actor steps are tagged `-(1 - i)` and expert steps `1 - i`
/// before min-max scaling, so a wave in which the expert never helped leaves the
/// parameters untouched.
pub fn train_feedback<R: Rng>(
    net: &mut PolicyNet,
    optimizer: &mut Adam,
    demos: &[Demo],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    if demos.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut steps = Vec::new();
    let mut tags = Vec::new();
    for demo in demos {
        let gain = 1.0 - demo.improvement;
        for step in demo.actor_suffix() {
            steps.push(step);
            tags.push(-gain);
        }
        for step in &demo.expert.steps {
            steps.push(step);
            tags.push(gain);
        }
    }
    if steps.is_empty() {
        return Ok(UpdateStats::default());
    }
    let advantages = minmax_scale(&tags)?;
    let samples: Vec<Sample<'_>> = steps
        .iter()
        .zip(advantages)
        .filter(|(_, a)| *a != 0.0)
        .map(|(step, advantage)| Sample {
            observation: &step.observation,
            action: step.action,
            old_probs: masked_softmax(&step.logits, &step.observation.mask, 1.0),
            advantage,
        })
        .filter(|s| s.old_probs[s.action] > 0.0)
        .collect();
    update(net, optimizer, &samples, config, rng)
}

/// Update on prefix steps, weighting each actor by its standardized, negated expert
/// makespan within its instance. Instances whose makespans are all equal are skipped.
pub fn train_initial<R: Rng>(
    net: &mut PolicyNet,
    optimizer: &mut Adam,
    demos: &[Demo],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    if demos.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut groups: Vec<usize> = demos.iter().map(|d| d.instance).collect();
    groups.dedup();
    let mut weighted = Vec::new();
    for group in groups {
        let members: Vec<&Demo> = demos.iter().filter(|d| d.instance == group).collect();
        let makespans: Vec<f64> = members.iter().map(|d| d.expert.makespan as f64).collect();
        let Some(z) = standardize(&makespans) else {
            warn!("instance {group}: every expert makespan equals {}, skipping", makespans[0]);
            continue;
        };
        for (demo, z) in members.into_iter().zip(z) {
            for step in demo.prefix() {
                weighted.push((step, -z));
            }
        }
    }
    // the ratio is taken against the policy at the start of this phase
    let old: Vec<Vec<f64>> = weighted
        .par_iter()
        .map(|(step, _)| net.forward(&step.observation).map(|l| masked_softmax(&l, &step.observation.mask, 1.0)))
        .collect::<Result<_, PolicyError>>()?;
    let samples: Vec<Sample<'_>> = weighted
        .iter()
        .zip(old)
        .map(|((step, advantage), old_probs)| Sample {
            observation: &step.observation,
            action: step.action,
            old_probs,
            advantage: *advantage,
        })
        .filter(|s| s.advantage != 0.0 && s.old_probs[s.action] > 0.0)
        .collect();
    update(net, optimizer, &samples, config, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub instance: String,
    pub greedy_makespan: Time,
    pub mean_expert_makespan: f64,
    pub mean_i: f64,
    pub applied_iters: usize,
    pub wall_s: f64,
}

impl MetricRow {
    pub const HEADER: &'static str = "epoch,instance,greedy_makespan,mean_expert_makespan,mean_i,applied_iters,wall_s";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.6},{},{:.3}",
            self.epoch,
            self.instance,
            self.greedy_makespan,
            self.mean_expert_makespan,
            self.mean_i,
            self.applied_iters,
            self.wall_s
        )
    }
}

/// Greedy makespan of `net` on every instance.
pub fn evaluate(net: &PolicyNet, instances: &[Instance], env: EnvConfig) -> Result<Vec<Time>, TrainError> {
    instances
        .par_iter()
        .map(|inst| Ok(greedy_rollout(inst, net, env, false)?.makespan))
        .collect()
}

fn mean(values: &[Time]) -> f64 {
    values.iter().sum::<Time>() as f64 / values.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    pub best: PolicyNet,
    /// Mean greedy makespan before training.
    pub initial_mean: f64,
    /// Lowest mean greedy makespan seen, at `best_epoch` (`None` for the initial policy).
    pub best_mean: f64,
    pub best_epoch: Option<usize>,
    pub metrics: Vec<MetricRow>,
}

const STATE_MAGIC: &[u8; 8] = b"JSSPTRN\0";

struct Resume {
    next_epoch: usize,
    optimizer: Adam,
    best_mean: f64,
    best_epoch: Option<usize>,
    initial_mean: f64,
}

fn save_state(path: &Path, next_epoch: usize, optimizer: &Adam, best_mean: f64, best_epoch: Option<usize>, initial_mean: f64) -> Result<(), TrainError> {
    let (step, m, v) = optimizer.state();
    let mut bytes = Vec::with_capacity(64 + 16 * m.len());
    bytes.extend_from_slice(STATE_MAGIC);
    for word in [next_epoch as u64, step, best_epoch.map_or(u64::MAX, |e| e as u64), m.len() as u64] {
        bytes.extend_from_slice(&word.to_le_bytes());
    }
    for x in [optimizer.lr, best_mean, initial_mean].iter().chain(m).chain(v) {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn load_state(path: &Path) -> Result<Resume, TrainError> {
    let bytes = fs::read(path)?;
    let corrupt = |what: &str| TrainError::Policy(PolicyError::Corrupt(format!("{}: {what}", path.display())));
    if bytes.len() < 64 || &bytes[..8] != STATE_MAGIC {
        return Err(corrupt("missing header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let float = |i: usize| f64::from_le_bytes(bytes[40 + 8 * i..48 + 8 * i].try_into().unwrap());
    let len = word(3) as usize;
    if bytes.len() != 64 + 16 * len {
        return Err(corrupt("truncated optimizer state"));
    }
    let m = (0..len).map(|i| float(3 + i)).collect();
    let v = (0..len).map(|i| float(3 + len + i)).collect();
    Ok(Resume {
        next_epoch: word(0) as usize,
        optimizer: Adam::from_state(float(0), word(1), m, v),
        best_epoch: (word(2) != u64::MAX).then(|| word(2) as usize),
        best_mean: float(1),
        initial_mean: float(2),
    })
}

fn write_metrics(path: &Path, rows: &[MetricRow], fresh: bool) -> Result<(), TrainError> {
    let mut file = fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path)?;
    if fresh {
        writeln!(file, "{}", MetricRow::HEADER)?;
    }
    for row in rows {
        writeln!(file, "{}", row.to_csv())?;
    }
    Ok(())
}

/// Full training run. With `out_dir` set, writes `init.net`, `latest.net`, `best.net`,
/// `state.bin` and `metrics.csv` there after every epoch; `resume` continues from the
/// files of an earlier run in `out_dir`.
pub fn train_loop(
    instances: &[Instance],
    config: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
    resume: bool,
) -> Result<TrainOutcome, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::Empty);
    }
    let ops: Vec<usize> = instances.iter().map(Instance::op_count).collect();
    let (lo, hi) = (ops.iter().min().unwrap(), ops.iter().max().unwrap());
    if hi > &(lo + lo / 5) {
        warn!("training instances differ in size ({lo} to {hi} operations)");
    }
    let mut net = PolicyNet::init(seed);
    let mut optimizer = Adam::new(net.params().len(), config.lr);
    let mut best = net.clone();
    let mut first_epoch = 0;
    let initial_mean;
    let mut best_mean;
    let mut best_epoch = None;
    if let (true, Some(dir)) = (resume, out_dir) {
        let state = load_state(&dir.join("state.bin"))?;
        net = PolicyNet::load(&dir.join("latest.net"))?;
        best = PolicyNet::load(&dir.join("best.net"))?;
        optimizer = state.optimizer;
        first_epoch = state.next_epoch;
        initial_mean = state.initial_mean;
        best_mean = state.best_mean;
        best_epoch = state.best_epoch;
        info!("resuming at epoch {first_epoch}");
    } else {
        initial_mean = mean(&evaluate(&net, instances, config.env)?);
        best_mean = initial_mean;
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
            net.save(&dir.join("init.net"))?;
            net.save(&dir.join("latest.net"))?;
            net.save(&dir.join("best.net"))?;
            write_metrics(&dir.join("metrics.csv"), &[], true)?;
            save_state(&dir.join("state.bin"), 0, &optimizer, best_mean, None, initial_mean)?;
        }
    }
    let mut metrics = Vec::new();
    for epoch in first_epoch..config.epochs {
        let clock = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let demo_seed = rng.gen();
        let demos = generate_demos(instances, &net, config, &config.expert_budget(epoch), demo_seed)?;
        let feedback = train_feedback(&mut net, &mut optimizer, &demos, config, &mut rng)?;
        let initial = train_initial(&mut net, &mut optimizer, &demos, config, &mut rng)?;
        let greedy = evaluate(&net, instances, config.env)?;
        let wall_s = clock.elapsed().as_secs_f64();
        let rows: Vec<MetricRow> = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let group: Vec<&Demo> = demos.iter().filter(|d| d.instance == i).collect();
                let n = group.len().max(1) as f64;
                MetricRow {
                    epoch,
                    instance: inst.name().to_string(),
                    greedy_makespan: greedy[i],
                    mean_expert_makespan: group.iter().map(|d| d.expert.makespan as f64).sum::<f64>() / n,
                    mean_i: group.iter().map(|d| d.improvement).sum::<f64>() / n,
                    applied_iters: feedback.applied_iterations + initial.applied_iterations,
                    wall_s,
                }
            })
            .collect();
        let epoch_mean = mean(&greedy);
        info!(
            "epoch {epoch}: greedy mean {epoch_mean:.1}, kl {:.4}/{:.4}, {:.1}s",
            feedback.kl, initial.kl, wall_s
        );
        if epoch_mean < best_mean {
            best_mean = epoch_mean;
            best_epoch = Some(epoch);
            best = net.clone();
        }
        if let Some(dir) = out_dir {
            net.save(&dir.join("latest.net"))?;
            if best_epoch == Some(epoch) {
                best.save(&dir.join("best.net"))?;
            }
            write_metrics(&dir.join("metrics.csv"), &rows, false)?;
            save_state(&dir.join("state.bin"), epoch + 1, &optimizer, best_mean, best_epoch, initial_mean)?;
        }
        metrics.extend(rows);
    }
    Ok(TrainOutcome { net, best, initial_mean, best_mean, best_epoch, metrics })
}
