//! Static dispatching rules, greedy rollouts and the temperature ensemble.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{Action, Env, EnvConfig, Observation, Slot};
use crate::error::EnvError;
use crate::instance::{Instance, Solution, Time};

/// Anything that scores an observation: one logit per job, then No-Op.
pub trait Policy: Sync {
    fn logits(&self, observation: &Observation) -> Vec<f64>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn logits(&self, observation: &Observation) -> Vec<f64> {
        (**self).logits(observation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Fifo,
    Spt,
    Mtwr,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Fifo, Rule::Spt, Rule::Mtwr];
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(Rule::Fifo),
            "spt" => Ok(Rule::Spt),
            "mtwr" => Ok(Rule::Mtwr),
            other => Err(format!("unknown rule `{other}`")),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Fifo => "fifo",
            Rule::Spt => "spt",
            Rule::Mtwr => "mtwr",
        })
    }
}

impl Policy for Rule {
    fn logits(&self, observation: &Observation) -> Vec<f64> {
        pdr_logits(*self, observation)
    }
}

/// Scores from the observation alone. MTWR counts the work visible in the window:
/// the current operation and the upcoming ones.
pub fn pdr_logits(rule: Rule, observation: &Observation) -> Vec<f64> {
    let mut logits: Vec<f64> = observation
        .jobs
        .iter()
        .enumerate()
        .map(|(j, row)| match observation.current(j) {
            None => f64::NEG_INFINITY,
            Some(cur) => match rule {
                Rule::Fifo => -(cur.lb as f64),
                Rule::Spt => -(cur.length as f64),
                Rule::Mtwr => row[1..]
                    .iter()
                    .map(|slot| match slot {
                        Slot::Interval(enc) if !enc.assigned => enc.length as f64,
                        _ => 0.0,
                    })
                    .sum(),
            },
        })
        .collect();
    logits.push(f64::NEG_INFINITY);
    logits
}

/// Index of the largest unmasked logit, lowest index on ties.
pub fn masked_argmax(logits: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&l, &ok)) in logits.iter().zip(mask).enumerate() {
        if ok && best.map_or(true, |b| l > logits[b]) {
            best = Some(i);
        }
    }
    best
}

/// Softmax of `logits / temperature` restricted to unmasked entries; masked entries get 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &ok)| if ok && l > f64::NEG_INFINITY { (l / temperature - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    if total > 0.0 && total.is_finite() {
        probs.iter_mut().for_each(|p| *p /= total);
    } else {
        // every unmasked logit is -inf: fall back to uniform over the mask
        let count = mask.iter().filter(|&&ok| ok).count().max(1) as f64;
        probs = mask.iter().map(|&ok| if ok { 1.0 / count } else { 0.0 }).collect();
    }
    probs
}

pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn priority_order(logits: &[f64], job_count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..job_count).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    order
}

/// Deterministic rollout. In vector mode each decision point submits every job sorted by
/// descending logit; otherwise one argmax action per step.
pub fn greedy_rollout<P: Policy + ?Sized>(
    instance: &Instance,
    policy: &P,
    config: EnvConfig,
    use_vector: bool,
) -> Result<Solution, EnvError> {
    let mut env = Env::new(instance, config);
    greedy_finish(&mut env, policy, use_vector)?;
    Ok(env.solution().expect("finished episode"))
}

/// Runs [`greedy_rollout`]'s loop from an arbitrary state until the episode ends.
pub fn greedy_finish<P: Policy + ?Sized>(env: &mut Env<'_>, policy: &P, use_vector: bool) -> Result<(), EnvError> {
    let jobs = env.instance().job_count();
    while !env.is_done() {
        let obs = env.observe();
        let logits = policy.logits(&obs);
        let best = masked_argmax(&logits, &obs.mask).expect("a live state always has an action");
        if best == jobs {
            env.apply(Action::NoOp)?;
        } else if use_vector {
            env.apply_vector(&priority_order(&logits, jobs))?;
        } else {
            env.apply(Action::Job(best))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub solution: Solution,
    pub actions: Vec<Action>,
}

impl Rollout {
    pub fn makespan(&self) -> Time {
        self.solution.makespan
    }
}

/// Samples one episode at `temperature`. `record` sees each observation with the raw
/// logits it was scored with and the chosen action.
pub fn sample_episode<P, R, F>(
    instance: &Instance,
    policy: &P,
    config: EnvConfig,
    temperature: f64,
    rng: &mut R,
    mut record: F,
) -> Result<Rollout, EnvError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&Observation, &[f64], Action),
{
    let jobs = instance.job_count();
    let mut env = Env::new(instance, config);
    while !env.is_done() {
        let obs = env.observe();
        let logits = policy.logits(&obs);
        let probs = masked_softmax(&logits, &obs.mask, temperature);
        let action = Action::from_index(sample_index(&probs, rng), jobs);
        record(&obs, &logits, action);
        env.apply(action)?;
    }
    Ok(Rollout { solution: env.solution().expect("finished episode"), actions: env.history().to_vec() })
}

/// Temperatures of an `actor_count`-actor ensemble, for actors 1..=actor_count.
pub fn ensemble_temperatures(actor_count: usize) -> Vec<f64> {
    (1..=actor_count).map(|a| 1.5 * a as f64 / actor_count as f64 + 0.5).collect()
}

#[derive(Debug, Clone)]
pub struct ActorOutcome {
    pub temperature: f64,
    pub seed: u64,
    pub makespan: Time,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub best: Solution,
    pub best_actor: usize,
    pub actors: Vec<ActorOutcome>,
}

/// Runs one sampling actor per temperature in parallel and keeps the shortest schedule.
/// Actor `a` (0-based) is seeded with `base_seed + a`.
pub fn ensemble_solve<P: Policy + ?Sized>(
    instance: &Instance,
    policy: &P,
    config: EnvConfig,
    actor_count: usize,
    base_seed: u64,
) -> Result<EnsembleResult, EnvError> {
    assert!(actor_count >= 1, "ensemble needs at least one actor");
    let temps = ensemble_temperatures(actor_count);
    let runs: Vec<(ActorOutcome, Solution)> = temps
        .par_iter()
        .enumerate()
        .map(|(a, &temperature)| {
            let seed = base_seed.wrapping_add(a as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rollout = sample_episode(instance, policy, config, temperature, &mut rng, |_, _, _| {})?;
            Ok((ActorOutcome { temperature, seed, makespan: rollout.makespan() }, rollout.solution))
        })
        .collect::<Result<_, EnvError>>()?;
    let best_actor = (0..runs.len()).min_by_key(|&a| (runs[a].0.makespan, a)).expect("non-empty");
    let best = runs[best_actor].1.clone();
    Ok(EnsembleResult { best, best_actor, actors: runs.into_iter().map(|(o, _)| o).collect() })
}
