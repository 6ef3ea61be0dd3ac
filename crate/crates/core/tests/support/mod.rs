//! Independent reference computations for the test suites.
#![allow(dead_code)]

use jssp_core::env::{Action, Env, EnvConfig};
use jssp_core::{Instance, OpId, Solution, Time};
use rand::Rng;

/// Earliest starts under fixed machine sequences by repeated relaxation of every arc
/// until nothing changes. `None` if it fails to settle (a cycle).
pub fn relaxation_starts(inst: &Instance, seqs: &[Vec<OpId>]) -> Option<Vec<Time>> {
    let n = inst.op_count();
    let mut arcs = Vec::new();
    for j in 0..inst.job_count() {
        for i in 1..inst.job(j).len() {
            arcs.push((inst.op_id(j, i - 1), inst.op_id(j, i)));
        }
    }
    for seq in seqs {
        for w in seq.windows(2) {
            arcs.push((w[0], w[1]));
        }
    }
    let mut start = vec![0; n];
    for _ in 0..=n {
        let mut changed = false;
        for &(a, b) in &arcs {
            let end = start[a] + inst.op(a).processing_time;
            if end > start[b] {
                start[b] = end;
                changed = true;
            }
        }
        if !changed {
            return Some(start);
        }
    }
    None
}

/// Machine sequences by sorting on start time, rebuilt here rather than borrowed.
pub fn sequences_of(inst: &Instance, sol: &Solution) -> Vec<Vec<OpId>> {
    let mut seqs = vec![Vec::new(); inst.machine_count()];
    let mut ops: Vec<(Time, OpId)> = Vec::new();
    for j in 0..inst.job_count() {
        for i in 0..inst.job(j).len() {
            ops.push((sol.starts[j][i], inst.op_id(j, i)));
        }
    }
    ops.sort();
    for (_, op) in ops {
        seqs[inst.op(op).machine].push(op);
    }
    seqs
}

pub fn flat_starts(inst: &Instance, sol: &Solution) -> Vec<Time> {
    let mut flat = vec![0; inst.op_count()];
    for j in 0..inst.job_count() {
        for i in 0..inst.job(j).len() {
            flat[inst.op_id(j, i)] = sol.starts[j][i];
        }
    }
    flat
}

/// Minimum makespan over every interleaving of job operations, each appended at its
/// earliest start after the previously appended operations.
pub fn enumerate_optimum(inst: &Instance) -> Time {
    fn go(inst: &Instance, next: &mut [usize], job_ready: &mut [Time], mach_ready: &mut [Time], left: usize, best: &mut Time) {
        if left == 0 {
            *best = (*best).min(job_ready.iter().copied().max().unwrap_or(0));
            return;
        }
        for j in 0..inst.job_count() {
            if next[j] == inst.job(j).len() {
                continue;
            }
            let op = inst.job(j)[next[j]];
            let saved = (job_ready[j], mach_ready[op.machine]);
            let end = job_ready[j].max(mach_ready[op.machine]) + op.processing_time;
            job_ready[j] = end;
            mach_ready[op.machine] = end;
            next[j] += 1;
            go(inst, next, job_ready, mach_ready, left - 1, best);
            next[j] -= 1;
            (job_ready[j], mach_ready[op.machine]) = saved;
        }
    }
    let mut best = Time::MAX;
    go(
        inst,
        &mut vec![0; inst.job_count()],
        &mut vec![0; inst.job_count()],
        &mut vec![0; inst.machine_count()],
        inst.op_count(),
        &mut best,
    );
    best
}

/// A feasible schedule with random machine orders and random idle gaps.
pub fn random_feasible<R: Rng>(inst: &Instance, rng: &mut R, max_gap: Time) -> Solution {
    let mut next = vec![0; inst.job_count()];
    let mut job_ready = vec![0; inst.job_count()];
    let mut mach_ready = vec![0; inst.machine_count()];
    let mut starts: Vec<Vec<Time>> = inst.jobs().iter().map(|j| vec![0; j.len()]).collect();
    for _ in 0..inst.op_count() {
        let open: Vec<usize> = (0..inst.job_count()).filter(|&j| next[j] < inst.job(j).len()).collect();
        let j = open[rng.gen_range(0..open.len())];
        let op = inst.job(j)[next[j]];
        let start = job_ready[j].max(mach_ready[op.machine]) + rng.gen_range(0..=max_gap);
        starts[j][next[j]] = start;
        job_ready[j] = start + op.processing_time;
        mach_ready[op.machine] = start + op.processing_time;
        next[j] += 1;
    }
    Solution::from_starts(inst, starts)
}

/// No machine stands idle while an operation that will later run on it is ready.
pub fn is_non_delay(inst: &Instance, sol: &Solution) -> bool {
    for j in 0..inst.job_count() {
        for i in 0..inst.job(j).len() {
            let op = inst.job(j)[i];
            let ready = if i == 0 { 0 } else { sol.starts[j][i - 1] + inst.job(j)[i - 1].processing_time };
            let start = sol.starts[j][i];
            let mut busy: Vec<(Time, Time)> = Vec::new();
            for k in 0..inst.job_count() {
                for (x, other) in inst.job(k).iter().enumerate() {
                    if other.machine == op.machine && (k, x) != (j, i) {
                        busy.push((sol.starts[k][x], sol.starts[k][x] + other.processing_time));
                    }
                }
            }
            busy.sort();
            let mut covered = ready;
            for (s, e) in busy {
                if s <= covered && e > covered {
                    covered = e;
                }
            }
            if covered < start {
                return false;
            }
        }
    }
    true
}

#[derive(Debug)]
pub struct RandomRollout {
    pub solution: Option<Solution>,
    pub actions: Vec<Action>,
    pub empty_mask_seen: bool,
}

/// Uniformly random legal actions; with `noop` false, No-Op is only taken when it is
/// the sole legal action.
pub fn random_rollout<R: Rng>(inst: &Instance, config: EnvConfig, rng: &mut R, noop: bool) -> RandomRollout {
    let mut env = Env::new(inst, config);
    let mut empty_mask_seen = false;
    while !env.is_done() {
        let mask = env.action_mask().unwrap();
        let jobs: Vec<usize> = (0..inst.job_count()).filter(|&j| mask[j]).collect();
        let mut choices = jobs.clone();
        if mask[inst.job_count()] && (noop || jobs.is_empty()) {
            choices.push(inst.job_count());
        }
        if choices.is_empty() {
            empty_mask_seen = true;
            break;
        }
        let pick = choices[rng.gen_range(0..choices.len())];
        env.step(Action::from_index(pick, inst.job_count())).unwrap();
    }
    RandomRollout { solution: env.solution(), actions: env.history().to_vec(), empty_mask_seen }
}
