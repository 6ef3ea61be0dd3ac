//! Interval-variable model of a job-shop instance.
//!
//! Every operation owns an [`IntervalVar`] whose length is its processing time. Job
//! precedence and per-machine no-overlap are enforced by bounds propagation: fixing an
//! operation raises the release time of its machine, which in turn raises the start
//! lower bound of every loaded, unfixed operation on that machine and, transitively,
//! of their job successors. Operations are fixed chronologically per machine, so the
//! release time is all the no-overlap constraint needs.
//!
//! Only a window of `horizon` operations per job is loaded at a time; the next
//! operation of a job is loaded when its earliest unfixed one gets fixed.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{ModelError, SolutionError};
use crate::instance::{Instance, OpId, Solution, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalVar {
    pub start_lb: Time,
    pub start_ub: Time,
    pub length: Time,
    pub fixed: bool,
    pub loaded: bool,
}

impl IntervalVar {
    #[inline]
    pub fn end_lb(&self) -> Time {
        self.start_lb + self.length
    }

    #[inline]
    pub fn end_ub(&self) -> Time {
        self.start_ub + self.length
    }
}

#[derive(Debug, Clone)]
pub struct ModelState<'a> {
    instance: &'a Instance,
    intervals: Vec<IntervalVar>,
    machine_release: Vec<Time>,
    job_cursor: Vec<usize>,
    horizon: usize,
    /// Loaded, unfixed operations per machine.
    pending: Vec<Vec<OpId>>,
    pending_slot: Vec<usize>,
    fixed_count: usize,
    /// Stand-in for an unbounded start: the total processing time of the instance.
    ub_sentinel: Time,
}

impl<'a> ModelState<'a> {
    pub fn new(instance: &'a Instance, horizon: usize) -> Self {
        assert!(horizon >= 1, "horizon must be at least 1");
        let ub_sentinel = instance.total_processing_time();
        let intervals = (0..instance.op_count())
            .map(|op| IntervalVar {
                start_lb: 0,
                start_ub: ub_sentinel,
                length: instance.op(op).processing_time,
                fixed: false,
                loaded: false,
            })
            .collect();
        let mut model = ModelState {
            instance,
            intervals,
            machine_release: vec![0; instance.machine_count()],
            job_cursor: vec![0; instance.job_count()],
            horizon,
            pending: vec![Vec::new(); instance.machine_count()],
            pending_slot: vec![usize::MAX; instance.op_count()],
            fixed_count: 0,
            ub_sentinel,
        };
        for job in 0..instance.job_count() {
            for index in 0..horizon.min(instance.job(job).len()) {
                model.load(job, index);
            }
        }
        model
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn intervals(&self) -> &[IntervalVar] {
        &self.intervals
    }

    #[inline]
    pub fn interval(&self, op: OpId) -> &IntervalVar {
        &self.intervals[op]
    }

    pub fn machine_release(&self) -> &[Time] {
        &self.machine_release
    }

    /// Index of the first unfixed operation of each job (job length once complete).
    pub fn job_cursor(&self) -> &[usize] {
        &self.job_cursor
    }

    /// Flat id of the first unfixed operation of `job`, if any.
    #[inline]
    pub fn current_op(&self, job: usize) -> Option<OpId> {
        let cursor = self.job_cursor[job];
        (cursor < self.instance.job(job).len()).then(|| self.instance.op_id(job, cursor))
    }

    pub fn is_complete(&self) -> bool {
        self.fixed_count == self.instance.op_count()
    }

    pub fn fixed_count(&self) -> usize {
        self.fixed_count
    }

    pub fn ub_sentinel(&self) -> Time {
        self.ub_sentinel
    }

    fn load(&mut self, job: usize, index: usize) {
        let op = self.instance.op_id(job, index);
        if self.intervals[op].loaded {
            return;
        }
        let machine = self.instance.job(job)[index].machine;
        let chain = if index == 0 { 0 } else { self.intervals[op - 1].end_lb() };
        let var = &mut self.intervals[op];
        var.loaded = true;
        var.start_lb = chain.max(self.machine_release[machine]);
        self.pending_slot[op] = self.pending[machine].len();
        self.pending[machine].push(op);
    }

    /// Raises the start lower bound of `op` to at least `value` and pushes the change
    /// down the loaded part of its job chain.
    fn raise(&mut self, mut op: OpId, mut value: Time) {
        loop {
            let var = &mut self.intervals[op];
            if value <= var.start_lb {
                return;
            }
            var.start_lb = value;
            let end = var.end_lb();
            let (job, index) = self.instance.op_position(op);
            if index + 1 >= self.instance.job(job).len() || !self.intervals[op + 1].loaded {
                return;
            }
            op += 1;
            value = end;
        }
    }

    /// Fixes the current operation of `job` at its start lower bound and propagates.
    /// Returns the fixed operation and its start time.
    pub fn fix_start(&mut self, job: usize) -> Result<(OpId, Time), ModelError> {
        if job >= self.instance.job_count() {
            return Err(ModelError::UnknownJob(job));
        }
        let op = self.current_op(job).ok_or(ModelError::JobComplete(job))?;
        let index = self.job_cursor[job];
        let machine = self.instance.job(job)[index].machine;
        debug_assert!(self.intervals[op].loaded);

        let var = &mut self.intervals[op];
        let start = var.start_lb;
        let end = var.end_lb();
        var.start_ub = start;
        var.fixed = true;
        debug_assert!(start >= self.machine_release[machine]);
        self.machine_release[machine] = end;
        self.fixed_count += 1;

        let slot = self.pending_slot[op];
        self.pending[machine].swap_remove(slot);
        if let Some(&moved) = self.pending[machine].get(slot) {
            self.pending_slot[moved] = slot;
        }
        self.pending_slot[op] = usize::MAX;

        self.job_cursor[job] += 1;
        let next_unloaded = index + self.horizon;
        if next_unloaded < self.instance.job(job).len() {
            self.load(job, next_unloaded);
        }
        if index + 1 < self.instance.job(job).len() {
            self.raise(op + 1, end);
        }
        // the pending list is not modified by `raise`, but it borrows self mutably
        for k in 0..self.pending[machine].len() {
            let other = self.pending[machine][k];
            self.raise(other, end);
        }
        Ok((op, start))
    }

    /// Start times of the fixed schedule, once every operation is fixed.
    pub fn solution(&self) -> Option<Solution> {
        if !self.is_complete() {
            return None;
        }
        let starts = self
            .instance
            .jobs()
            .iter()
            .enumerate()
            .map(|(j, job)| (0..job.len()).map(|i| self.intervals[self.instance.op_id(j, i)].start_lb).collect())
            .collect();
        Some(Solution::from_starts(self.instance, starts))
    }
}

/// First constraint violation found in a solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Dimension,
    Precedence { job: usize, index: usize },
    Overlap { machine: usize, first: (usize, usize), second: (usize, usize) },
    Makespan { reported: Time, actual: Time },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension => f.write_str("solution dimensions do not match the instance"),
            Violation::Precedence { job, index } => write!(
                f,
                "precedence: job {job} operation {} starts before operation {index} ends",
                index + 1
            ),
            Violation::Overlap { machine, first, second } => write!(
                f,
                "no-overlap on machine {machine}: job {} op {} overlaps job {} op {}",
                first.0, first.1, second.0, second.1
            ),
            Violation::Makespan { reported, actual } => {
                write!(f, "reported makespan {reported} differs from actual {actual}")
            }
        }
    }
}

/// Checks job precedence, machine no-overlap and the reported makespan.
pub fn validate(instance: &Instance, solution: &Solution) -> Result<(), Violation> {
    if solution.check_dimensions(instance).is_err() {
        return Err(Violation::Dimension);
    }
    for (j, job) in instance.jobs().iter().enumerate() {
        for i in 1..job.len() {
            if solution.starts[j][i - 1] + job[i - 1].processing_time > solution.starts[j][i] {
                return Err(Violation::Precedence { job: j, index: i - 1 });
            }
        }
    }
    for (machine, seq) in machine_sequences(instance, solution).iter().enumerate() {
        for pair in seq.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if solution.start(instance, a) + instance.op(a).processing_time > solution.start(instance, b) {
                return Err(Violation::Overlap {
                    machine,
                    first: instance.op_position(a),
                    second: instance.op_position(b),
                });
            }
        }
    }
    let actual = Solution::from_starts(instance, solution.starts.clone()).makespan;
    if actual != solution.makespan {
        return Err(Violation::Makespan { reported: solution.makespan, actual });
    }
    Ok(())
}

/// Operations of each machine ordered by start time (ties by op id).
pub fn machine_sequences(instance: &Instance, solution: &Solution) -> Vec<Vec<OpId>> {
    let mut seqs = vec![Vec::new(); instance.machine_count()];
    for op in 0..instance.op_count() {
        seqs[instance.op(op).machine].push(op);
    }
    for seq in &mut seqs {
        seq.sort_by_key(|&op| (solution.start(instance, op), op));
    }
    seqs
}

/// Earliest start times under fixed machine sequences (longest path from the source
/// in the precedence graph), or `None` when the sequences form a cycle.
pub fn earliest_starts(instance: &Instance, sequences: &[Vec<OpId>]) -> Option<Vec<Time>> {
    let n = instance.op_count();
    let mut machine_next = vec![usize::MAX; n];
    let mut indegree = vec![0u32; n];
    for seq in sequences {
        for pair in seq.windows(2) {
            machine_next[pair[0]] = pair[1];
            indegree[pair[1]] += 1;
        }
    }
    for op in 0..n {
        if instance.op_position(op).1 > 0 {
            indegree[op] += 1;
        }
    }
    let mut start = vec![0; n];
    let mut queue: VecDeque<OpId> = (0..n).filter(|&op| indegree[op] == 0).collect();
    let mut seen = 0;
    while let Some(op) = queue.pop_front() {
        seen += 1;
        let end = start[op] + instance.op(op).processing_time;
        let (job, index) = instance.op_position(op);
        let job_next = (index + 1 < instance.job(job).len()).then_some(op + 1);
        for next in job_next.into_iter().chain((machine_next[op] != usize::MAX).then_some(machine_next[op])) {
            start[next] = start[next].max(end);
            indegree[next] -= 1;
            if indegree[next] == 0 {
                queue.push_back(next);
            }
        }
    }
    (seen == n).then_some(start)
}

/// Solution built from flat per-operation start times.
pub fn solution_from_flat(instance: &Instance, flat: &[Time]) -> Solution {
    let starts = (0..instance.job_count())
        .map(|j| (0..instance.job(j).len()).map(|i| flat[instance.op_id(j, i)]).collect())
        .collect();
    Solution::from_starts(instance, starts)
}

/// Moves every operation to its earliest start while keeping the per-machine order of
/// `solution`. No start increases and neither does the makespan.
pub fn compress(instance: &Instance, solution: &Solution) -> Result<Solution, SolutionError> {
    solution.check_dimensions(instance)?;
    validate(instance, solution).map_err(SolutionError::Infeasible)?;
    let sequences = machine_sequences(instance, solution);
    let flat = earliest_starts(instance, &sequences).expect("a feasible schedule induces acyclic sequences");
    let mut out = solution_from_flat(instance, &flat);
    out.instance = solution.instance.clone();
    Ok(out)
}

pub fn is_compressed(instance: &Instance, solution: &Solution) -> Result<bool, SolutionError> {
    Ok(compress(instance, solution)?.starts == solution.starts)
}
