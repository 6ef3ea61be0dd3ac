use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use jssp_cli::{cmd_bench, cmd_compress, cmd_gen, read_instance, summarize, summary_path, BenchOptions, Method, SolveSettings};
use jssp_core::dispatch::Rule;
use jssp_core::{Format, Instance, Solution};

fn jssp(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_jssp")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn small_dataset(dir: &Path) {
    for (k, (j, m)) in [(4, 3), (4, 3), (5, 4), (5, 4), (5, 4)].into_iter().enumerate() {
        let format = if k % 2 == 0 { Format::OrLib } else { Format::Taillard };
        cmd_gen(j, m, k as u64, format, &dir.join(format!("g{k:02}.txt"))).unwrap();
    }
}

fn options(dir: &Path, out: Option<&Path>) -> BenchOptions {
    BenchOptions {
        dir: dir.to_path_buf(),
        format: None,
        methods: Rule::ALL.iter().map(|&r| Method::Rule(r)).collect(),
        seeds: vec![0, 1],
        settings: SolveSettings::default(),
        out_csv: out.map(Path::to_path_buf),
    }
}

#[test]
fn bench_writes_one_row_per_run_and_a_summary() {
    let data = tempfile::tempdir().unwrap();
    small_dataset(data.path());
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("runs.csv");
    let report = cmd_bench(&options(data.path(), Some(&csv))).unwrap();
    assert_eq!(report.rows.len(), 5 * 3 * 2);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 30);
    assert!(text.starts_with("dataset,instance,method,seed,makespan,runtime_s"));
    let summary = fs::read_to_string(summary_path(&csv)).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert_eq!(report.summaries.len(), 3);
}

#[test]
fn summary_is_recomputable_from_rows() {
    let data = tempfile::tempdir().unwrap();
    small_dataset(data.path());
    let report = cmd_bench(&options(data.path(), None)).unwrap();
    let sizes: BTreeMap<String, (usize, usize)> = fs::read_dir(data.path())
        .unwrap()
        .map(|e| {
            let i = read_instance(&e.unwrap().path(), None).unwrap();
            (i.name().to_string(), (i.job_count(), i.machine_count()))
        })
        .collect();
    let rows_for = |m: &str| report.rows.iter().filter(|r| r.method == m).collect::<Vec<_>>();
    for s in &report.summaries {
        let rows = rows_for(&s.method);
        let mean = rows.iter().map(|r| r.makespan as f64).sum::<f64>() / rows.len() as f64;
        assert!((mean - s.mean).abs() < 1e-9);
        assert_eq!(s.instances, 5);
        // rules are deterministic, so the seed does not matter
        for pair in rows.chunks(2) {
            assert_eq!(pair[0].makespan, pair[1].makespan);
        }
    }
    assert_eq!(sizes.values().collect::<std::collections::BTreeSet<_>>().len(), 2);
    let again = summarize(&report.rows, &sizes);
    for (a, b) in again.iter().zip(&report.summaries) {
        assert_eq!(a.method, b.method);
        assert!((a.std - b.std).abs() < 1e-9);
        assert!(a.std > 0.0);
    }
}

#[test]
fn bench_on_empty_directory_fails_without_output() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("runs.csv");
    let err = cmd_bench(&options(data.path(), Some(&csv))).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!csv.exists());
    let (code, _, stderr) = jssp(&["bench", data.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("no instance files"));
}

#[test]
fn compress_reports_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("i.txt");
    fs::write(&inst_path, "2 2\n0 3 1 2\n1 2 0 4\n").unwrap();
    let inst = Instance::from_file(&inst_path, Format::OrLib).unwrap();
    let loose = Solution::from_starts(&inst, vec![vec![1, 6], vec![0, 5]]);
    let input = dir.path().join("loose.json");
    loose.write(&input).unwrap();
    let output = dir.path().join("tight.json");
    let outcome = cmd_compress(&inst, &input, &output).unwrap();
    // tight: job 0 at 0 then 3; job 1 at 0 then 3
    let tight = Solution::read(&output).unwrap();
    assert_eq!(tight.starts, vec![vec![0, 3], vec![0, 3]]);
    assert_eq!(outcome.start_sum_reduction, 12 - 6);
    assert_eq!(outcome.makespan_delta, 7 - 9);

    let again = cmd_compress(&inst, &output, &dir.path().join("same.json")).unwrap();
    assert_eq!((again.start_sum_reduction, again.makespan_delta), (0, 0));

    let (code, stdout, _) = jssp(&[
        "compress",
        inst_path.to_str().unwrap(),
        input.to_str().unwrap(),
        dir.path().join("cli.json").to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("reduced by 6"));
}

#[test]
fn infeasible_schedule_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("i.txt");
    fs::write(&inst_path, "2 2\n0 3 1 2\n1 2 0 4\n").unwrap();
    let input = dir.path().join("bad.json");
    fs::write(&input, r#"{"instance":"i","makespan":4,"starts":[[0,1],[0,0]]}"#).unwrap();
    let (code, _, _) = jssp(&["compress", inst_path.to_str().unwrap(), input.to_str().unwrap(), "/dev/null"]);
    assert_eq!(code, 2);
}

#[test]
fn solve_writes_a_valid_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("i.txt");
    let out = dir.path().join("s.json");
    let (code, _, _) = jssp(&["gen", "4", "4", "--seed", "3", "--out", inst_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (code, stdout, _) =
        jssp(&["solve", inst_path.to_str().unwrap(), "--method", "exact", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("(optimal)"));
    let inst = Instance::from_file(&inst_path, Format::OrLib).unwrap();
    let sol = Solution::read(&out).unwrap();
    jssp_core::validate(&inst, &sol).unwrap();
}

#[test]
fn train_writes_checkpoints_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("i.txt");
    cmd_gen(4, 4, 1, Format::OrLib, &inst_path).unwrap();
    let config = dir.path().join("train.cfg");

    fs::write(&config, "epochs = 0\n").unwrap();
    let out0 = dir.path().join("run0");
    let (code, _, stderr) =
        jssp(&["train", inst_path.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", out0.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    assert!(out0.join("init.net").exists());

    fs::write(&config, "# short run\nepochs = 2\nactors = 3\nK = 2\nexpert_iterations = 50\n").unwrap();
    let out2 = dir.path().join("run2");
    let (code, _, stderr) =
        jssp(&["train", inst_path.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    let metrics = fs::read_to_string(out2.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2);
    for name in ["init.net", "latest.net", "best.net", "state.bin"] {
        assert!(out2.join(name).exists(), "{name}");
    }
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("i.txt");
    cmd_gen(3, 3, 1, Format::OrLib, &inst_path).unwrap();
    let config = dir.path().join("train.cfg");
    fs::write(&config, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let (code, _, stderr) = jssp(&[
        "train",
        inst_path.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_ne!(code, 0);
    assert!(stderr.contains("learning_rate"));
}

#[test]
fn exit_codes() {
    assert_eq!(jssp(&[]).0, 1);
    assert_eq!(jssp(&["solve"]).0, 1);
    assert_eq!(jssp(&["bench", "x", "--methods", "lifo"]).0, 1);
    assert_eq!(jssp(&["solve", "/nonexistent/instance.txt"]).0, 2);
    assert_eq!(jssp(&["--help"]).0, 0);
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("g.txt");
    fs::write(&garbage, "2 2\n0 1 1\n").unwrap();
    assert_eq!(jssp(&["solve", garbage.to_str().unwrap()]).0, 2);
    let (code, _, _) = jssp(&["solve", garbage.to_str().unwrap(), "--method", "policy:/nonexistent.net"]);
    assert_eq!(code, 2);
}
