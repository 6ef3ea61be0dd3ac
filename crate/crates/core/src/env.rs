//! Dispatching environment over the interval model.
//!
//! The state is the model plus a decision time `t`. A job is dispatchable when its
//! current operation can start before `t` ([`TimeRule::EarliestEnd`]) or no later than
//! `t` ([`TimeRule::EarliestStart`]). Dispatching fixes the operation at its start lower
//! bound. The clock only moves when nothing is dispatchable any more, or when the agent
//! takes the No-Op action; it then jumps to the next event value strictly above `t`:
//! the smallest end lower bound of a current operation under `EarliestEnd`, the
//! smallest start lower bound under `EarliestStart`.
//!
//! `EarliestEnd` is the Giffler-Thompson active-schedule rule; `EarliestStart` only
//! offers operations that can start at the earliest possible time, so No-Op-free
//! episodes produce non-delay schedules.

use std::fmt;
use std::str::FromStr;

use crate::error::EnvError;
use crate::instance::{Instance, OpId, Solution, Time};
use crate::model::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeRule {
    #[default]
    EarliestEnd,
    EarliestStart,
}

impl FromStr for TimeRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "end" | "earliest-end" => Ok(TimeRule::EarliestEnd),
            "start" | "earliest-start" => Ok(TimeRule::EarliestStart),
            other => Err(format!("unknown time rule `{other}` (expected end|start)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvConfig {
    /// Operations per job loaded into the model at once.
    pub horizon: usize,
    /// Upcoming operations per job exposed in observations, after the current one.
    pub next_ops: usize,
    pub rule: TimeRule,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { horizon: 10, next_ops: 3, rule: TimeRule::EarliestEnd }
    }
}

impl EnvConfig {
    /// Interval slots per job in an observation: previous, current and upcoming ops.
    pub fn slots(&self) -> usize {
        self.next_ops + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Job(usize),
    NoOp,
}

impl Action {
    /// Position in a logits or mask vector of length `job_count + 1`.
    pub fn index(self, job_count: usize) -> usize {
        match self {
            Action::Job(j) => j,
            Action::NoOp => job_count,
        }
    }

    pub fn from_index(index: usize, job_count: usize) -> Action {
        if index >= job_count {
            Action::NoOp
        } else {
            Action::Job(index)
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Job(j) => write!(f, "job {j}"),
            Action::NoOp => f.write_str("no-op"),
        }
    }
}

/// Quadruple describing one interval variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalEncoding {
    /// The start time has been fixed.
    pub assigned: bool,
    pub lb: Time,
    pub length: Time,
    /// `lb` equals the current decision time.
    pub at_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Before the first operation of a job.
    Source,
    /// After the last operation of a job, or beyond the loaded horizon.
    Sink,
    Interval(IntervalEncoding),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: Time,
    /// Normalizer for times fed to a network: the largest machine load of the instance.
    pub time_scale: f64,
    /// Per job: previous, current and `next_ops` upcoming interval slots.
    pub jobs: Vec<Vec<Slot>>,
    /// One entry per job, then No-Op.
    pub mask: Vec<bool>,
}

impl Observation {
    pub fn job_count(&self) -> usize {
        self.jobs.len()
    }

    pub fn noop_index(&self) -> usize {
        self.jobs.len()
    }

    /// Encoding of the current (first unfixed) operation of `job`.
    pub fn current(&self, job: usize) -> Option<&IntervalEncoding> {
        match &self.jobs[job][1] {
            Slot::Interval(enc) => Some(enc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub done: bool,
    /// Negated makespan on the terminal step.
    pub reward: Option<f64>,
    pub makespan: Option<Time>,
    /// Actions executed by this call, in order.
    pub applied: Vec<Action>,
}

#[derive(Debug, Clone)]
pub struct Env<'a> {
    model: ModelState<'a>,
    config: EnvConfig,
    time: Time,
    history: Vec<Action>,
    fixed_log: Vec<(OpId, Time)>,
}

impl<'a> Env<'a> {
    pub fn new(instance: &'a Instance, config: EnvConfig) -> Self {
        let mut env = Env {
            model: ModelState::new(instance, config.horizon),
            config,
            time: 0,
            history: Vec::new(),
            fixed_log: Vec::with_capacity(instance.op_count()),
        };
        env.settle();
        env
    }

    pub fn reset(instance: &'a Instance, config: EnvConfig) -> (Self, Observation) {
        let env = Env::new(instance, config);
        let obs = env.observe();
        (env, obs)
    }

    /// Fresh environment with `actions` applied in order.
    pub fn replay(instance: &'a Instance, config: EnvConfig, actions: &[Action]) -> Result<Self, EnvError> {
        let mut env = Env::new(instance, config);
        for &a in actions {
            env.apply(a)?;
        }
        Ok(env)
    }

    pub fn instance(&self) -> &'a Instance {
        self.model.instance()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelState<'a> {
        &self.model
    }

    pub fn is_done(&self) -> bool {
        self.model.is_complete()
    }

    pub fn current_time(&self) -> Result<Time, EnvError> {
        if self.is_done() {
            return Err(EnvError::Terminal);
        }
        Ok(self.time)
    }

    /// Every action applied since reset, No-Ops included.
    pub fn history(&self) -> &[Action] {
        &self.history
    }

    /// Fixed operations with their start times, in dispatch order.
    pub fn fixed_log(&self) -> &[(OpId, Time)] {
        &self.fixed_log
    }

    pub fn solution(&self) -> Option<Solution> {
        self.model.solution()
    }

    fn event_value(&self, op: OpId) -> Time {
        let var = self.model.interval(op);
        match self.config.rule {
            TimeRule::EarliestEnd => var.end_lb(),
            TimeRule::EarliestStart => var.start_lb,
        }
    }

    #[inline]
    pub fn is_dispatchable(&self, job: usize) -> bool {
        match self.model.current_op(job) {
            None => false,
            Some(op) => {
                let lb = self.model.interval(op).start_lb;
                match self.config.rule {
                    TimeRule::EarliestEnd => lb < self.time,
                    TimeRule::EarliestStart => lb <= self.time,
                }
            }
        }
    }

    fn any_dispatchable(&self) -> bool {
        (0..self.instance().job_count()).any(|j| self.is_dispatchable(j))
    }

    /// Smallest event value strictly above the current time.
    fn next_event(&self) -> Option<Time> {
        (0..self.instance().job_count())
            .filter_map(|j| self.model.current_op(j))
            .map(|op| self.event_value(op))
            .filter(|&v| v > self.time)
            .min()
    }

    fn noop_available(&self) -> bool {
        !self.is_done() && self.next_event().is_some()
    }

    /// Advances the clock until some job is dispatchable.
    fn settle(&mut self) {
        while !self.is_done() && !self.any_dispatchable() {
            self.time = self.next_event().expect("an unfinished job always has a next event");
        }
    }

    pub fn action_mask(&self) -> Result<Vec<bool>, EnvError> {
        if self.is_done() {
            return Err(EnvError::Terminal);
        }
        Ok(self.mask_unchecked())
    }

    fn mask_unchecked(&self) -> Vec<bool> {
        let jobs = self.instance().job_count();
        let mut mask: Vec<bool> = (0..jobs).map(|j| self.is_dispatchable(j)).collect();
        mask.push(self.noop_available());
        mask
    }

    pub fn observe(&self) -> Observation {
        let instance = self.instance();
        let slots = self.config.slots();
        let jobs = (0..instance.job_count())
            .map(|job| {
                let cursor = self.model.job_cursor()[job];
                let len = instance.job(job).len();
                let mut row = Vec::with_capacity(slots);
                row.push(if cursor == 0 { Slot::Source } else { self.encode(instance.op_id(job, cursor - 1)) });
                for k in 0..=self.config.next_ops {
                    let index = cursor + k;
                    let slot = if index < len {
                        let op = instance.op_id(job, index);
                        if self.model.interval(op).loaded {
                            self.encode(op)
                        } else {
                            Slot::Sink
                        }
                    } else {
                        Slot::Sink
                    };
                    row.push(slot);
                }
                row
            })
            .collect();
        let mask = if self.is_done() { vec![false; instance.job_count() + 1] } else { self.mask_unchecked() };
        Observation {
            time: self.time,
            time_scale: instance.max_machine_load().max(1) as f64,
            jobs,
            mask,
        }
    }

    fn encode(&self, op: OpId) -> Slot {
        let var = self.model.interval(op);
        Slot::Interval(IntervalEncoding {
            assigned: var.fixed,
            lb: var.start_lb,
            length: var.length,
            at_time: var.start_lb == self.time,
        })
    }

    /// Applies one action without building an observation.
    pub fn apply(&mut self, action: Action) -> Result<(), EnvError> {
        if self.is_done() {
            return Err(EnvError::Terminal);
        }
        let jobs = self.instance().job_count();
        match action {
            Action::Job(j) if j >= jobs => {
                return Err(EnvError::Masked { action: j, reason: format!("only {jobs} jobs exist") });
            }
            Action::Job(j) => {
                if !self.is_dispatchable(j) {
                    let reason = match self.model.current_op(j) {
                        None => "job is complete".to_string(),
                        Some(op) => format!(
                            "start lower bound {} is not before the decision time {}",
                            self.model.interval(op).start_lb,
                            self.time
                        ),
                    };
                    return Err(EnvError::Masked { action: j, reason });
                }
                let fixed = self.model.fix_start(j)?;
                self.fixed_log.push(fixed);
            }
            Action::NoOp => match self.next_event() {
                Some(t) => self.time = t,
                None => {
                    return Err(EnvError::Masked {
                        action: jobs,
                        reason: "no later decision point to skip to".into(),
                    })
                }
            },
        }
        self.history.push(action);
        self.settle();
        Ok(())
    }

    fn result(&self, applied: Vec<Action>) -> StepResult {
        let done = self.is_done();
        let makespan = done.then(|| self.model.solution().expect("complete model").makespan);
        StepResult {
            observation: self.observe(),
            done,
            reward: makespan.map(|m| -(m as f64)),
            makespan,
            applied,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        self.apply(action)?;
        Ok(self.result(vec![action]))
    }

    /// Dispatches jobs in `priority` order, sweeping repeatedly until nothing more can
    /// be dispatched at the current time. Falls back to No-Op when no listed job is
    /// dispatchable.
    pub fn apply_vector(&mut self, priority: &[usize]) -> Result<Vec<Action>, EnvError> {
        if self.is_done() {
            return Err(EnvError::Terminal);
        }
        let start_time = self.time;
        let mut applied = Vec::new();
        loop {
            let mut changed = false;
            for &job in priority {
                if self.time != start_time || self.is_done() {
                    break;
                }
                if job < self.instance().job_count() && self.is_dispatchable(job) {
                    self.apply(Action::Job(job))?;
                    applied.push(Action::Job(job));
                    changed = true;
                }
            }
            if !changed || self.time != start_time || self.is_done() {
                break;
            }
        }
        if applied.is_empty() {
            self.apply(Action::NoOp)?;
            applied.push(Action::NoOp);
        }
        Ok(applied)
    }

    pub fn step_vector(&mut self, priority: &[usize]) -> Result<StepResult, EnvError> {
        let applied = self.apply_vector(priority)?;
        Ok(self.result(applied))
    }
}
