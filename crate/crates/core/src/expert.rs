//! Solvers used as the expert: exact branch and bound for tiny instances and a tabu
//! search over machine sequences that can keep a dispatched prefix in place.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use crate::dispatch::{greedy_finish, greedy_rollout, Policy, Rule};
use crate::env::{Action, Env, EnvConfig};
use crate::error::ExpertError;
use crate::instance::{Instance, OpId, Solution, Time};
use crate::model::{compress, earliest_starts, machine_sequences, solution_from_flat, validate};

/// Search limits. Iteration limits make results independent of machine speed as long
/// as the wall-clock limit is not the one that binds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub time: Duration,
    pub max_iterations: usize,
    /// Stop after this many consecutive iterations without a new best.
    pub stall_iterations: usize,
}

impl Budget {
    pub fn seconds(seconds: f64) -> Budget {
        Budget {
            time: Duration::from_secs_f64(seconds.max(0.0)),
            max_iterations: usize::MAX,
            stall_iterations: usize::MAX,
        }
    }

    pub fn with_iterations(self, max_iterations: usize, stall_iterations: usize) -> Budget {
        Budget { max_iterations, stall_iterations, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct ExactResult {
    pub solution: Solution,
    /// The search finished, so the makespan is optimal.
    pub certified: bool,
    pub nodes: u64,
}

struct Search<'a> {
    instance: &'a Instance,
    deadline: Instant,
    aborted: bool,
    nodes: u64,
    best: Time,
    best_starts: Vec<Time>,
    next: Vec<usize>,
    job_ready: Vec<Time>,
    machine_ready: Vec<Time>,
    job_left: Vec<Time>,
    machine_left: Vec<Time>,
    starts: Vec<Time>,
    scheduled: usize,
}

impl Search<'_> {
    fn bound(&self) -> Time {
        let inst = self.instance;
        let m = inst.machine_count();
        let mut head = vec![Time::MAX; m];
        let mut tail = vec![Time::MAX; m];
        let mut lb = 0;
        for j in 0..inst.job_count() {
            lb = lb.max(self.job_ready[j] + self.job_left[j]);
            let mut h = self.job_ready[j];
            let mut rest = self.job_left[j];
            for op in &inst.job(j)[self.next[j]..] {
                rest -= op.processing_time;
                head[op.machine] = head[op.machine].min(h);
                tail[op.machine] = tail[op.machine].min(rest);
                h += op.processing_time;
            }
        }
        for k in 0..m {
            if self.machine_left[k] > 0 {
                lb = lb.max(self.machine_ready[k].max(head[k]) + self.machine_left[k] + tail[k]);
            }
        }
        lb
    }

    fn dfs(&mut self) {
        let inst = self.instance;
        if self.scheduled == inst.op_count() {
            let makespan = self.job_ready.iter().copied().max().unwrap_or(0);
            if makespan < self.best {
                self.best = makespan;
                self.best_starts.clone_from(&self.starts);
            }
            return;
        }
        self.nodes += 1;
        if self.nodes % 1024 == 0 && Instant::now() >= self.deadline {
            self.aborted = true;
        }
        if self.aborted || self.bound() >= self.best {
            return;
        }
        // Giffler-Thompson: branch on the conflict set of the earliest-completing operation
        let mut pivot: Option<(Time, usize, usize)> = None;
        for j in 0..inst.job_count() {
            if self.next[j] < inst.job(j).len() {
                let op = inst.job(j)[self.next[j]];
                let end = self.job_ready[j].max(self.machine_ready[op.machine]) + op.processing_time;
                if pivot.map_or(true, |(e, _, _)| end < e) {
                    pivot = Some((end, op.machine, j));
                }
            }
        }
        let (cutoff, machine, pivot_job) = pivot.expect("unscheduled operations remain");
        let mut conflict: Vec<(Time, usize)> = (0..inst.job_count())
            .filter(|&j| self.next[j] < inst.job(j).len() && inst.job(j)[self.next[j]].machine == machine)
            .map(|j| (self.job_ready[j].max(self.machine_ready[machine]), j))
            .filter(|&(start, j)| start < cutoff || j == pivot_job)
            .collect();
        conflict.sort();
        for (start, j) in conflict {
            let op = inst.job(j)[self.next[j]];
            let id = inst.op_id(j, self.next[j]);
            let saved = (self.job_ready[j], self.machine_ready[machine]);
            self.starts[id] = start;
            self.job_ready[j] = start + op.processing_time;
            self.machine_ready[machine] = start + op.processing_time;
            self.job_left[j] -= op.processing_time;
            self.machine_left[machine] -= op.processing_time;
            self.next[j] += 1;
            self.scheduled += 1;
            self.dfs();
            self.scheduled -= 1;
            self.next[j] -= 1;
            self.machine_left[machine] += op.processing_time;
            self.job_left[j] += op.processing_time;
            (self.job_ready[j], self.machine_ready[machine]) = saved;
            if self.aborted {
                return;
            }
        }
    }
}

/// Depth-first branch and bound over active schedules, seeded with the SPT schedule.
pub fn solve_exact(instance: &Instance, time: Duration) -> ExactResult {
    let seed = greedy_rollout(instance, &Rule::Spt, EnvConfig::default(), true).expect("rule rollouts cannot fail");
    let flat: Vec<Time> = (0..instance.op_count()).map(|op| seed.start(instance, op)).collect();
    let mut machine_left = vec![0; instance.machine_count()];
    for job in instance.jobs() {
        for op in job {
            machine_left[op.machine] += op.processing_time;
        }
    }
    let mut search = Search {
        instance,
        deadline: Instant::now() + time,
        aborted: false,
        nodes: 0,
        best: seed.makespan,
        best_starts: flat,
        next: vec![0; instance.job_count()],
        job_ready: vec![0; instance.job_count()],
        machine_ready: vec![0; instance.machine_count()],
        job_left: instance.jobs().iter().map(|j| j.iter().map(|o| o.processing_time).sum()).collect(),
        machine_left,
        starts: vec![0; instance.op_count()],
        scheduled: 0,
    };
    search.dfs();
    let mut solution = solution_from_flat(instance, &search.best_starts);
    solution.instance = instance.name().to_string();
    ExactResult { solution, certified: !search.aborted, nodes: search.nodes }
}

fn makespan_of(instance: &Instance, starts: &[Time]) -> Time {
    starts.iter().enumerate().map(|(op, &s)| s + instance.op(op).processing_time).max().unwrap_or(0)
}

/// One longest path through the schedule, from time 0 to the makespan.
fn critical_path(instance: &Instance, seqs: &[Vec<OpId>], starts: &[Time]) -> Vec<OpId> {
    let n = instance.op_count();
    let mut machine_prev = vec![usize::MAX; n];
    for seq in seqs {
        for pair in seq.windows(2) {
            machine_prev[pair[1]] = pair[0];
        }
    }
    let end = |op: OpId| starts[op] + instance.op(op).processing_time;
    let mut op = (0..n).max_by_key(|&op| (end(op), std::cmp::Reverse(op))).expect("non-empty instance");
    let mut path = vec![op];
    while starts[op] > 0 {
        let mp = machine_prev[op];
        let jp = (instance.op_position(op).1 > 0).then(|| op - 1);
        op = if mp != usize::MAX && end(mp) == starts[op] {
            mp
        } else {
            match jp {
                Some(p) if end(p) == starts[op] => p,
                _ => break,
            }
        };
        path.push(op);
    }
    path.reverse();
    path
}

const TABU_TENURE: usize = 8;

/// Tabu search over adjacent swaps of critical operations sharing a machine. Operations
/// in `prefix` keep their start times. The result is compressed and never longer than
/// `initial`.
pub fn improve(
    instance: &Instance,
    initial: &Solution,
    prefix: &[(OpId, Time)],
    budget: &Budget,
) -> Result<Solution, ExpertError> {
    let start_time = Instant::now();
    let compressed = compress(instance, initial)?;
    let mut pinned = vec![false; instance.op_count()];
    for &(op, at) in prefix {
        if op >= instance.op_count() || compressed.start(instance, op) != at {
            return Err(ExpertError::PrefixMismatch { op });
        }
        pinned[op] = true;
    }
    let mut seqs = machine_sequences(instance, &compressed);
    for seq in &seqs {
        if let Some(w) = seq.windows(2).find(|w| !pinned[w[0]] && pinned[w[1]]) {
            return Err(ExpertError::PrefixMismatch { op: w[1] });
        }
    }
    let mut starts: Vec<Time> = (0..instance.op_count()).map(|op| compressed.start(instance, op)).collect();
    let mut best_starts = starts.clone();
    let mut best = compressed.makespan;
    let mut position = vec![0; instance.op_count()];
    let mut tabu: HashMap<(OpId, OpId), usize> = HashMap::new();
    let mut stall = 0;
    let mut iteration = 0;
    while iteration < budget.max_iterations && stall < budget.stall_iterations && start_time.elapsed() < budget.time {
        for seq in &seqs {
            for (i, &op) in seq.iter().enumerate() {
                position[op] = i;
            }
        }
        let path = critical_path(instance, &seqs, &starts);
        let mut chosen: Option<(Time, OpId, OpId, Vec<Time>)> = None;
        for pair in path.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let machine = instance.op(a).machine;
            if machine != instance.op(b).machine || pinned[a] || pinned[b] {
                continue;
            }
            let (pa, pb) = (position[a], position[b]);
            if pb != pa + 1 {
                continue;
            }
            seqs[machine].swap(pa, pb);
            let candidate = earliest_starts(instance, &seqs);
            seqs[machine].swap(pa, pb);
            let Some(candidate) = candidate else { continue };
            let makespan = makespan_of(instance, &candidate);
            let is_tabu = tabu.get(&(b, a)).is_some_and(|&until| until > iteration);
            if is_tabu && makespan >= best {
                continue;
            }
            if chosen.as_ref().map_or(true, |c| makespan < c.0) {
                chosen = Some((makespan, a, b, candidate));
            }
        }
        let Some((makespan, a, b, candidate)) = chosen else { break };
        let machine = instance.op(a).machine;
        seqs[machine].swap(position[a], position[b]);
        // moving b back in front of a would undo the move
        tabu.insert((a, b), iteration + TABU_TENURE);
        starts = candidate;
        if makespan < best {
            best = makespan;
            best_starts.clone_from(&starts);
            stall = 0;
        } else {
            stall += 1;
        }
        iteration += 1;
    }
    let mut out = solution_from_flat(instance, &best_starts);
    out.instance = initial.instance.clone();
    debug_assert!(validate(instance, &out).is_ok());
    Ok(out)
}

/// Replays `prefix`, completes the episode greedily with `policy` and improves the
/// result with the prefix held in place.
pub fn complete_prefix<P: Policy + ?Sized>(
    instance: &Instance,
    config: EnvConfig,
    prefix: &[Action],
    policy: &P,
    budget: &Budget,
) -> Result<Solution, ExpertError> {
    let mut env = Env::replay(instance, config, prefix)?;
    let pinned = env.fixed_log().to_vec();
    greedy_finish(&mut env, policy, true)?;
    let solution = env.solution().expect("finished episode");
    improve(instance, &solution, &pinned, budget)
}

/// Drives `env` to the schedule `target`, which must extend the operations already fixed
/// in `env` and be compressed. Operations are dispatched in target order on every machine;
/// No-Op waits until the next one becomes dispatchable. `record` sees the state before
/// each action.
pub fn follow_solution<F>(env: &mut Env<'_>, target: &Solution, mut record: F) -> Result<Vec<Action>, ExpertError>
where
    F: FnMut(&Env<'_>, Action),
{
    let instance = env.instance();
    target.check_dimensions(instance)?;
    let seqs = machine_sequences(instance, target);
    let fixed: Vec<bool> = env.model().intervals().iter().map(|v| v.fixed).collect();
    let mut cursor: Vec<usize> = seqs.iter().map(|seq| seq.iter().take_while(|&&op| fixed[op]).count()).collect();
    let mut actions = Vec::new();
    while !env.is_done() {
        let ready = (0..instance.job_count())
            .filter_map(|j| env.model().current_op(j).map(|op| (j, op)))
            .filter(|&(_, op)| {
                let m = instance.op(op).machine;
                seqs[m].get(cursor[m]) == Some(&op)
            })
            .filter(|&(j, _)| env.is_dispatchable(j))
            .min_by_key(|&(j, op)| (target.start(instance, op), j));
        let action = match ready {
            Some((j, op)) => {
                if env.model().interval(op).start_lb != target.start(instance, op) {
                    return Err(ExpertError::Replay(format!("operation {op} is not compressed in the target")));
                }
                cursor[instance.op(op).machine] += 1;
                Action::Job(j)
            }
            None => Action::NoOp,
        };
        record(env, action);
        env.apply(action)?;
        actions.push(action);
    }
    if env.solution().expect("finished episode").starts != target.starts {
        return Err(ExpertError::Replay("dispatching did not reproduce the target starts".into()));
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Format;
    use crate::model::is_compressed;

    fn inst(text: &str) -> Instance {
        Instance::parse(text, Format::OrLib, "t").unwrap()
    }

    #[test]
    fn single_operation() {
        let r = solve_exact(&inst("1 1\n0 7"), Duration::from_secs(1));
        assert!(r.certified);
        assert_eq!(r.solution.makespan, 7);
    }

    #[test]
    fn two_by_two_optimum() {
        let r = solve_exact(&inst("2 2\n0 3 1 2\n1 4 0 1"), Duration::from_secs(1));
        assert!(r.certified);
        assert_eq!(r.solution.makespan, 6);
        validate(&inst("2 2\n0 3 1 2\n1 4 0 1"), &r.solution).unwrap();
    }

    #[test]
    fn zero_budget_returns_compressed_initial() {
        let i = Instance::generate(5, 4, 2);
        let fifo = greedy_rollout(&i, &Rule::Fifo, EnvConfig::default(), true).unwrap();
        let out = improve(&i, &fifo, &[], &Budget::seconds(0.0)).unwrap();
        assert_eq!(out, compress(&i, &fifo).unwrap());
    }

    #[test]
    fn improve_never_worsens_and_compresses() {
        for seed in 0..5 {
            let i = Instance::generate(6, 6, seed);
            let fifo = greedy_rollout(&i, &Rule::Fifo, EnvConfig::default(), true).unwrap();
            let out = improve(&i, &fifo, &[], &Budget::seconds(5.0).with_iterations(300, 100)).unwrap();
            validate(&i, &out).unwrap();
            assert!(is_compressed(&i, &out).unwrap());
            assert!(out.makespan <= fifo.makespan);
        }
    }

    #[test]
    fn improve_rejects_infeasible_initial() {
        let i = inst("2 1\n0 3\n0 4");
        let bad = Solution::from_starts(&i, vec![vec![0], vec![1]]);
        assert!(matches!(improve(&i, &bad, &[], &Budget::seconds(1.0)), Err(ExpertError::Solution(_))));
    }

    #[test]
    fn prefix_ops_stay_put() {
        let i = Instance::generate(6, 6, 9);
        let prefix: Vec<Action> = {
            let mut env = Env::new(&i, EnvConfig::default());
            let mut acts = Vec::new();
            while acts.len() < 12 {
                let mask = env.action_mask().unwrap();
                let a = Action::from_index(mask.iter().rposition(|&m| m).unwrap(), 6);
                env.apply(a).unwrap();
                acts.push(a);
            }
            acts
        };
        let env = Env::replay(&i, EnvConfig::default(), &prefix).unwrap();
        let budget = Budget::seconds(5.0).with_iterations(300, 100);
        let out = complete_prefix(&i, EnvConfig::default(), &prefix, &Rule::Spt, &budget).unwrap();
        for &(op, at) in env.fixed_log() {
            assert_eq!(out.start(&i, op), at);
        }
        let mut replay = env.clone();
        let actions = follow_solution(&mut replay, &out, |_, _| {}).unwrap();
        assert!(!actions.is_empty());
        assert_eq!(replay.solution().unwrap(), out);
    }

    #[test]
    fn follow_reproduces_delayed_schedules() {
        // an active but delayed schedule needs a No-Op: job1 waits for job0 on m0
        let i = inst("2 2\n0 2 1 5\n0 4 1 1");
        let target = Solution::from_starts(&i, vec![vec![0, 2], vec![2, 7]]);
        assert!(is_compressed(&i, &target).unwrap());
        let mut env = Env::new(&i, EnvConfig::default());
        follow_solution(&mut env, &target, |_, _| {}).unwrap();
        assert_eq!(env.solution().unwrap(), target);
    }
}
