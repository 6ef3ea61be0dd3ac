//! Job-shop instances: parsing, generation and serialization.
//!
//! Two benchmark text formats are understood:
//!
//! * **OR-Library**: a `J M` header followed by `J` lines of `M` `(machine, time)`
//!   pairs, machines 0-indexed.
//! * **Taillard**: a `J M` header (extra header integers are ignored), a `J x M`
//!   processing-time matrix, then a `J x M` machine matrix with 1-indexed machines.
//!   Non-numeric label lines such as `Times` or `Machines` are skipped.
//!
//! Blank lines and lines starting with `#` are ignored in both formats.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{InstanceError, SolutionError};

/// Time in integer units.
pub type Time = u64;

/// Flat operation index, see [`Instance::op_id`].
pub type OpId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operation {
    pub machine: usize,
    pub processing_time: Time,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    name: String,
    machine_count: usize,
    jobs: Vec<Vec<Operation>>,
    offsets: Vec<usize>,
    op_job: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    OrLib,
    Taillard,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "orlib" | "or-library" => Ok(Format::OrLib),
            "taillard" => Ok(Format::Taillard),
            other => Err(format!("unknown instance format `{other}` (expected orlib|taillard)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Format::OrLib => f.write_str("orlib"),
            Format::Taillard => f.write_str("taillard"),
        }
    }
}

impl Instance {
    /// Builds an instance, checking that every time is positive and every machine in range.
    pub fn new(
        name: impl Into<String>,
        machine_count: usize,
        jobs: Vec<Vec<Operation>>,
    ) -> Result<Self, InstanceError> {
        let name = name.into();
        if jobs.is_empty() {
            return Err(InstanceError::Invalid("instance has no jobs".into()));
        }
        if machine_count == 0 {
            return Err(InstanceError::Invalid("instance has no machines".into()));
        }
        let mut offsets = Vec::with_capacity(jobs.len() + 1);
        let mut op_job = Vec::new();
        offsets.push(0);
        for (j, job) in jobs.iter().enumerate() {
            if job.is_empty() {
                return Err(InstanceError::Invalid(format!("job {j} has no operations")));
            }
            let mut seen = vec![false; machine_count];
            for (i, op) in job.iter().enumerate() {
                if op.machine >= machine_count {
                    return Err(InstanceError::Invalid(format!(
                        "job {j} operation {i}: machine {} out of range 0..{machine_count}",
                        op.machine
                    )));
                }
                if op.processing_time == 0 {
                    return Err(InstanceError::Invalid(format!(
                        "job {j} operation {i}: processing time must be positive"
                    )));
                }
                if std::mem::replace(&mut seen[op.machine], true) {
                    log::warn!("{name}: job {j} visits machine {} more than once", op.machine);
                }
                op_job.push(j);
            }
            offsets.push(offsets[j] + job.len());
        }
        Ok(Instance { name, machine_count, jobs, offsets, op_job })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn job_count(&self) -> usize {
        self.jobs.len()
    }

    pub fn machine_count(&self) -> usize {
        self.machine_count
    }

    pub fn jobs(&self) -> &[Vec<Operation>] {
        &self.jobs
    }

    pub fn job(&self, job: usize) -> &[Operation] {
        &self.jobs[job]
    }

    pub fn op_count(&self) -> usize {
        self.op_job.len()
    }

    /// Flat id of the `index`-th operation of `job`; ids are job-major.
    #[inline]
    pub fn op_id(&self, job: usize, index: usize) -> OpId {
        self.offsets[job] + index
    }

    /// Inverse of [`Instance::op_id`].
    #[inline]
    pub fn op_position(&self, op: OpId) -> (usize, usize) {
        let job = self.op_job[op];
        (job, op - self.offsets[job])
    }

    #[inline]
    pub fn op(&self, op: OpId) -> Operation {
        let (j, i) = self.op_position(op);
        self.jobs[j][i]
    }

    pub fn total_processing_time(&self) -> Time {
        self.jobs.iter().flatten().map(|o| o.processing_time).sum()
    }

    /// Largest total load of a single machine, a lower bound on any makespan.
    pub fn max_machine_load(&self) -> Time {
        let mut load = vec![0; self.machine_count];
        for op in self.jobs.iter().flatten() {
            load[op.machine] += op.processing_time;
        }
        load.into_iter().max().unwrap_or(0)
    }

    pub fn parse(text: &str, format: Format, name: &str) -> Result<Self, InstanceError> {
        let mut lines = NumericLines::new(text);
        let (line_no, header) = lines.next_numeric()?.ok_or(InstanceError::Parse {
            line: 0,
            message: "missing header".into(),
        })?;
        if header.len() < 2 {
            return Err(InstanceError::Parse {
                line: line_no,
                message: "header must hold the job and machine counts".into(),
            });
        }
        let (job_count, machine_count) = (header[0] as usize, header[1] as usize);
        if job_count == 0 || machine_count == 0 {
            return Err(InstanceError::Parse {
                line: line_no,
                message: "job and machine counts must be positive".into(),
            });
        }
        let jobs = match format {
            Format::OrLib => {
                let mut jobs = Vec::with_capacity(job_count);
                for _ in 0..job_count {
                    let (ln, row) = lines.expect_row(2 * machine_count)?;
                    let ops = row
                        .chunks(2)
                        .map(|pair| {
                            let machine = pair[0] as usize;
                            check_operation(ln, machine, pair[1], machine_count)
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    jobs.push(ops);
                }
                jobs
            }
            Format::Taillard => {
                let mut times = Vec::with_capacity(job_count);
                for _ in 0..job_count {
                    times.push(lines.expect_row(machine_count)?);
                }
                let mut jobs = Vec::with_capacity(job_count);
                for job_times in &times {
                    let (ln, machines) = lines.expect_row(machine_count)?;
                    let ops = machines
                        .iter()
                        .zip(&job_times.1)
                        .map(|(&m, &p)| {
                            if m == 0 {
                                return Err(InstanceError::Parse {
                                    line: ln,
                                    message: "taillard machines are 1-indexed, found 0".into(),
                                });
                            }
                            check_operation(ln, (m - 1) as usize, p, machine_count)
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    jobs.push(ops);
                }
                jobs
            }
        };
        Instance::new(name, machine_count, jobs)
    }

    pub fn from_file(path: &Path, format: Format) -> Result<Self, InstanceError> {
        let text = fs::read_to_string(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
        Instance::parse(&text, format, name)
    }

    /// Serializes in `format`. Only rectangular instances can be written as Taillard.
    pub fn to_text(&self, format: Format) -> Result<String, InstanceError> {
        let mut out = String::new();
        match format {
            Format::OrLib => {
                let width = self.jobs.iter().map(Vec::len).max().unwrap_or(0);
                if self.jobs.iter().any(|j| j.len() != width) {
                    return Err(InstanceError::Invalid(
                        "orlib format needs the same operation count in every job".into(),
                    ));
                }
                out.push_str(&format!("{} {}\n", self.job_count(), width));
                for job in &self.jobs {
                    let row: Vec<String> = job
                        .iter()
                        .map(|o| format!("{} {}", o.machine, o.processing_time))
                        .collect();
                    out.push_str(&row.join(" "));
                    out.push('\n');
                }
            }
            Format::Taillard => {
                if self.jobs.iter().any(|j| j.len() != self.machine_count) {
                    return Err(InstanceError::Invalid(
                        "taillard format needs exactly one operation per machine in every job".into(),
                    ));
                }
                out.push_str(&format!("{} {}\nTimes\n", self.job_count(), self.machine_count));
                for job in &self.jobs {
                    let row: Vec<String> = job.iter().map(|o| o.processing_time.to_string()).collect();
                    out.push_str(&row.join(" "));
                    out.push('\n');
                }
                out.push_str("Machines\n");
                for job in &self.jobs {
                    let row: Vec<String> = job.iter().map(|o| (o.machine + 1).to_string()).collect();
                    out.push_str(&row.join(" "));
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    /// Taillard-style random instance: every job visits every machine once in a random
    /// order with processing times uniform in `[1, 99]`.
    pub fn generate(job_count: usize, machine_count: usize, seed: u64) -> Instance {
        Instance::generate_bounded(job_count, machine_count, 99, seed)
    }

    /// As [`Instance::generate`] with processing times uniform in `[1, max_time]`.
    pub fn generate_bounded(job_count: usize, machine_count: usize, max_time: Time, seed: u64) -> Instance {
        assert!(max_time >= 1, "processing times need a positive upper bound");
        assert!(job_count >= 1 && machine_count >= 1, "generator needs at least one job and machine");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jobs = Vec::with_capacity(job_count);
        for _ in 0..job_count {
            let mut machines: Vec<usize> = (0..machine_count).collect();
            machines.shuffle(&mut rng);
            jobs.push(
                machines
                    .into_iter()
                    .map(|machine| Operation { machine, processing_time: rng.gen_range(1..=max_time) })
                    .collect(),
            );
        }
        Instance::new(format!("gen_{job_count}x{machine_count}_s{seed}"), machine_count, jobs)
            .expect("generated instance is valid")
    }
}

fn check_operation(
    line: usize,
    machine: usize,
    time: u64,
    machine_count: usize,
) -> Result<Operation, InstanceError> {
    if machine >= machine_count {
        return Err(InstanceError::Parse {
            line,
            message: format!("machine index {machine} out of range 0..{machine_count}"),
        });
    }
    if time == 0 {
        return Err(InstanceError::Parse { line, message: "processing time must be positive".into() });
    }
    Ok(Operation { machine, processing_time: time })
}

struct NumericLines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> NumericLines<'a> {
    fn new(text: &'a str) -> Self {
        NumericLines { lines: text.lines().enumerate() }
    }

    /// Next line that starts with an integer; label lines are skipped.
    fn next_numeric(&mut self) -> Result<Option<(usize, Vec<u64>)>, InstanceError> {
        for (idx, raw) in self.lines.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let first = line.split_whitespace().next().unwrap_or("");
            if !first.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+') {
                continue;
            }
            let values = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<u64>().map_err(|_| InstanceError::Parse {
                        line: idx + 1,
                        message: format!("expected a non-negative integer, found `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(Some((idx + 1, values)));
        }
        Ok(None)
    }

    fn expect_row(&mut self, len: usize) -> Result<(usize, Vec<u64>), InstanceError> {
        match self.next_numeric()? {
            None => Err(InstanceError::Parse { line: 0, message: "truncated file".into() }),
            Some((line, row)) if row.len() != len => Err(InstanceError::Parse {
                line,
                message: format!("expected {len} integers, found {}", row.len()),
            }),
            Some(row) => Ok(row),
        }
    }
}

/// A complete schedule: one start time per operation plus the makespan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub instance: String,
    pub makespan: Time,
    /// `starts[j][i]` is the start time of the `i`-th operation of job `j`.
    pub starts: Vec<Vec<Time>>,
}

impl Solution {
    /// Builds a solution from per-job start arrays, computing the makespan.
    pub fn from_starts(instance: &Instance, starts: Vec<Vec<Time>>) -> Solution {
        let makespan = starts
            .iter()
            .zip(instance.jobs())
            .flat_map(|(s, job)| s.iter().zip(job).map(|(s, o)| s + o.processing_time))
            .max()
            .unwrap_or(0);
        Solution { instance: instance.name().to_string(), makespan, starts }
    }

    pub fn start(&self, instance: &Instance, op: OpId) -> Time {
        let (j, i) = instance.op_position(op);
        self.starts[j][i]
    }

    /// Sum of all start times.
    pub fn start_sum(&self) -> Time {
        self.starts.iter().flatten().sum()
    }

    pub fn write(&self, path: &Path) -> Result<(), SolutionError> {
        if self.starts.is_empty() {
            return Err(SolutionError::Empty);
        }
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Solution, SolutionError> {
        let text = fs::read_to_string(path)?;
        let solution: Solution = serde_json::from_str(&text)?;
        if solution.starts.is_empty() || solution.starts.iter().any(Vec::is_empty) {
            return Err(SolutionError::Empty);
        }
        Ok(solution)
    }

    /// Checks that the solution has one start per operation of `instance`.
    pub fn check_dimensions(&self, instance: &Instance) -> Result<(), SolutionError> {
        if self.starts.len() != instance.job_count()
            || self.starts.iter().zip(instance.jobs()).any(|(s, j)| s.len() != j.len())
        {
            return Err(SolutionError::Dimension {
                expected_jobs: instance.job_count(),
                found_jobs: self.starts.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_orlib() {
        let inst = Instance::parse("1 1\n0 5", Format::OrLib, "t").unwrap();
        assert_eq!(inst.job_count(), 1);
        assert_eq!(inst.op_count(), 1);
        assert_eq!(inst.job(0), &[Operation { machine: 0, processing_time: 5 }]);
    }

    #[test]
    fn two_by_two_orlib() {
        let inst = Instance::parse("2 2\n0 3 1 2\n1 4 0 1", Format::OrLib, "t").unwrap();
        let op = |machine, processing_time| Operation { machine, processing_time };
        assert_eq!(inst.job(0), &[op(0, 3), op(1, 2)]);
        assert_eq!(inst.job(1), &[op(1, 4), op(0, 1)]);
        assert_eq!(inst.op_id(1, 1), 3);
        assert_eq!(inst.op_position(2), (1, 0));
    }

    #[test]
    fn taillard_is_one_indexed() {
        let text = "Nb of jobs, Nb of Machines\n2 2 123 456\nTimes\n3 2\n4 1\nMachines\n1 2\n2 1\n";
        let inst = Instance::parse(text, Format::Taillard, "t").unwrap();
        let orlib = Instance::parse("2 2\n0 3 1 2\n1 4 0 1", Format::OrLib, "t").unwrap();
        assert_eq!(inst, orlib);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Instance::parse("2 2\n0 3 1 2\n1 4 2 1", Format::OrLib, "t").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 3, .. }), "{err}");
        let err = Instance::parse("1 2\n0 x 1 2", Format::OrLib, "t").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 2, .. }), "{err}");
        let err = Instance::parse("2 2\n0 3 1 2", Format::OrLib, "t").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let err = Instance::parse("3\n", Format::OrLib, "t").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 1, .. }), "{err}");
        let err = Instance::parse("1 1\n0 0", Format::OrLib, "t").unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
        let err = Instance::parse("1 2\n3 4\n0 1\n", Format::Taillard, "t").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn repeated_machine_is_accepted() {
        let inst = Instance::parse("1 2\n0 3 0 2", Format::OrLib, "t").unwrap();
        assert_eq!(inst.op_count(), 2);
    }

    #[test]
    fn generator() {
        let one = Instance::generate(1, 1, 99);
        assert_eq!(one.job(0)[0].machine, 0);
        assert!((1..=99).contains(&one.job(0)[0].processing_time));
        assert_eq!(Instance::generate(3, 3, 7), Instance::generate(3, 3, 7));
        let big = Instance::generate(10, 10, 1);
        for job in big.jobs() {
            let mut machines: Vec<usize> = job.iter().map(|o| o.machine).collect();
            machines.sort_unstable();
            assert_eq!(machines, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn solution_round_trip() {
        let inst = Instance::parse("2 2\n0 3 1 2\n1 4 0 1", Format::OrLib, "tiny").unwrap();
        let sol = Solution::from_starts(&inst, vec![vec![0, 4], vec![0, 4]]);
        assert_eq!(sol.makespan, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        sol.write(&path).unwrap();
        assert_eq!(Solution::read(&path).unwrap(), sol);

        let empty = Solution { instance: "x".into(), makespan: 0, starts: vec![] };
        assert!(matches!(empty.write(&path), Err(SolutionError::Empty)));
        fs::write(&path, r#"{"instance":"x","makespan":0,"starts":[]}"#).unwrap();
        assert!(matches!(Solution::read(&path), Err(SolutionError::Empty)));
    }
}
