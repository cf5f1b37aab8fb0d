//! End-to-end tests of the `byzgrad` binary: exit codes, CSV schemas,
//! determinism, and a real serve/worker session over local TCP.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_byzgrad"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// CSV text with the given columns blanked, for comparisons that must
/// ignore wall-clock (and, across transports, honest-mean knowledge).
fn mask_columns(text: &str, cols: &[usize]) -> String {
    text.lines()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            for &c in cols {
                if c < fields.len() {
                    fields[c] = "_";
                }
            }
            fields.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const MINIMAL: &str = "\
experiment = minimal
seed = 5
model.d = 2
model.n = 20
model.m = 4
train.rounds = 5
";

#[test]
fn simulate_writes_monotone_metrics_and_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "minimal.conf", MINIMAL);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");

    for out in [&out_a, &out_b] {
        let result = run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_success(&result);
    }

    let text = std::fs::read_to_string(&out_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,round,error,deviation,removals,flags,seconds"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    let errors: Vec<f64> = rows
        .iter()
        .map(|row| row.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    // Noise-free linear regression with the auto step size is a strict
    // contraction, so the error column must fall every round.
    for pair in errors.windows(2) {
        assert!(pair[1] < pair[0], "error column not decreasing: {errors:?}");
    }
    for row in &rows {
        assert!(row.starts_with("minimal,"), "missing experiment id: {row}");
    }

    // Same config, same master seed: identical bytes except wall-clock.
    let text_b = std::fs::read_to_string(&out_b).unwrap();
    assert_eq!(mask_columns(&text, &[6]), mask_columns(&text_b, &[6]));
}

#[test]
fn seed_flag_overrides_the_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "minimal.conf", MINIMAL);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    assert_success(&run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
        "--seed",
        "99",
    ]));
    assert_success(&run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]));
    let a = std::fs::read_to_string(&out_a).unwrap();
    let b = std::fs::read_to_string(&out_b).unwrap();
    assert_ne!(
        mask_columns(&a, &[6]),
        mask_columns(&b, &[6]),
        "--seed 99 must change the run relative to the config's seed = 5"
    );
}

#[test]
fn filter_domain_violations_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.conf",
        "\
seed = 1
model.d = 2
model.n = 40
model.m = 10
fault.q = 3
agg.method = iter_filter
train.rounds = 3
",
    );
    let out = dir.path().join("x.csv");
    let result = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("[0, 1/4)"), "stderr: {stderr}");
    assert!(!out.exists(), "no output on config failure");
}

#[test]
fn missing_config_file_exits_with_config_code() {
    let result = run(&["simulate", "--config", "/nonexistent/x.conf", "--out", "/tmp/y.csv"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bench_agg_pairs_aggregators_within_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bench.conf",
        "\
experiment = bench
seed = 21
model.d = 2
model.n = 40
model.m = 4
model.noise = 0.5
train.rounds = 12
bench.aggregators = mean,coord_median
bench.q = 0
bench.seeds = 2
",
    );
    let out = dir.path().join("bench.csv");
    assert_success(&run(&[
        "bench-agg",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "experiment,aggregator,q,seed,final_error");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4, "2 aggregators x 1 q x 2 seeds");

    // Rows within one (q, seed) cell share data and attack bytes, so at
    // q = 0 every aggregator must land within 2x of the mean aggregator.
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][1], "mean");
        assert_eq!(pair[1][1], "coord_median");
        assert_eq!(pair[0][3], pair[1][3], "cell seed must match across methods");
        let mean_err: f64 = pair[0][4].parse().unwrap();
        let med_err: f64 = pair[1][4].parse().unwrap();
        assert!(mean_err.is_finite() && med_err.is_finite());
        let ratio = med_err / mean_err;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "clean-data aggregators diverged: mean {mean_err}, median {med_err}"
        );
    }

    // No wall-clock column: reruns are bit-identical, even parallel ones.
    let out_b = dir.path().join("bench_b.csv");
    assert_success(&run(&[
        "bench-agg",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--parallel",
        "2",
    ]));
    assert_eq!(text, std::fs::read_to_string(&out_b).unwrap());
}

#[test]
fn conc_lab_writes_the_csv_family() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "conc.conf",
        "\
seed = 31
conc.dims = 4
conc.widths = 16,64
conc.trials = 30
conc.event_d = 1
conc.event_m = 10
conc.event_trials = 2000
",
    );
    let out = dir.path().join("conc.csv");
    assert_success(&run(&[
        "conc-lab",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));

    let trials = std::fs::read_to_string(&out).unwrap();
    let mut lines = trials.lines();
    assert_eq!(lines.next().unwrap(), "d,m,dist,trial,spectral_norm");
    assert_eq!(lines.count(), 2 * 30, "one row per (cell, trial)");

    let summary = std::fs::read_to_string(dir.path().join("conc.summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "d,m,dist,median,p90,p99");
    assert_eq!(lines.count(), 2);

    let fits = std::fs::read_to_string(dir.path().join("conc.fit.csv")).unwrap();
    let mut lines = fits.lines();
    assert_eq!(lines.next().unwrap(), "axis,fixed,slope,stderr,points");
    let fit_rows: Vec<&str> = lines.collect();
    assert_eq!(fit_rows.len(), 1, "one m-growth fit, no d-growth with a single d");
    assert!(fit_rows[0].starts_with("m_growth,4,"), "{}", fit_rows[0]);

    let event = std::fs::read_to_string(dir.path().join("conc.event.csv")).unwrap();
    let mut lines = event.lines();
    assert_eq!(
        lines.next().unwrap(),
        "d,m,trials,hits,frequency,ci_lo,ci_hi,floor,holds"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    assert_eq!(row[8], "true", "d = 1 rate sits far above the floor");
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        self.0.kill().ok();
        self.0.wait().ok();
    }
}

#[test]
fn serve_and_workers_reproduce_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "net.conf",
        "\
experiment = net
seed = 11
model.d = 2
model.n = 20
model.m = 2
train.eta = 0.05
train.rounds = 3
",
    );
    let sim_csv = dir.path().join("sim.csv");
    assert_success(&run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        sim_csv.to_str().unwrap(),
    ]));

    let net_csv = dir.path().join("net.csv");
    let mut serve = KillOnDrop(
        bin()
            .args([
                "serve",
                "--config",
                config.to_str().unwrap(),
                "--bind",
                "127.0.0.1:0",
                "--out",
                net_csv.to_str().unwrap(),
                "--timeout-ms",
                "5000",
            ])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap(),
    );

    // The server prints "listening on ADDR" once bound; without it within
    // 30 s something is wedged and the watchdog fails the test.
    let stdout = serve.0.stdout.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).ok();
        tx.send(line).ok();
    });
    let line = rx
        .recv_timeout(Duration::from_secs(30))
        .expect("server never announced its address");
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected announcement: {line:?}"))
        .to_string();

    let workers: Vec<Child> = (0..2)
        .map(|_| {
            bin()
                .args(["worker", "--config", config.to_str().unwrap(), "--connect", &addr])
                .stderr(Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    for worker in workers {
        let out = worker.wait_with_output().unwrap();
        assert!(
            out.status.success(),
            "worker failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let status = serve.0.wait().unwrap();
    assert!(status.success());

    // Networked and simulated runs agree byte-for-byte on round, error,
    // removals, and flags. Masked: deviation (the simulator knows the
    // honest mean, the wire learner cannot) and wall-clock seconds.
    let sim = std::fs::read_to_string(&sim_csv).unwrap();
    let net = std::fs::read_to_string(&net_csv).unwrap();
    assert_eq!(mask_columns(&sim, &[3, 6]), mask_columns(&net, &[3, 6]));
}

#[test]
fn worker_mode_refuses_stealth_shift() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "stealth.conf",
        "\
seed = 1
model.d = 2
model.n = 20
model.m = 4
fault.q = 1
fault.attack = stealth_shift
fault.delta = 0.5
train.rounds = 2
",
    );
    let result = run(&[
        "worker",
        "--config",
        config.to_str().unwrap(),
        "--connect",
        "127.0.0.1:1",
    ]);
    assert_eq!(result.status.code(), Some(2), "config-class rejection");
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("stealth_shift"), "stderr: {stderr}");
}
