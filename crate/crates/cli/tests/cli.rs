//! End-to-end behavior of the `stein` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn stein(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stein"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn ring_ksd(out: &str, iterations: usize, extra: &str) -> String {
    format!(
        r#"
method = "ksd-ns"
seeds = [3]
output_dir = "{out}"

[target]
kind = "ring8"

[network]
hidden = [16, 16]

[schedule]
iterations = {iterations}
batch_size = 20
{extra}

[eval]
samples = 150
reference_samples = 150
"#
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let o = stein(&["run", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here.toml"), "{}", stderr(&o));
}

#[test]
fn bad_field_exits_2_with_field_name() {
    let dir = TempDir::new().unwrap();
    let body = ring_ksd("out", 10, "lambda = 0.5");
    let cfg = write_config(dir.path(), "c.toml", &body);
    let o = stein(&["run", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule.lambda"), "{}", stderr(&o));
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(stein(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(stein(&["sample", "x.bin"]).status.code(), Some(2));
}

#[test]
fn ring_run_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &ring_ksd("out", 100, ""));
    let o = stein(&["run", arg(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let seed = out.join("seed-3");
    for f in ["checkpoint.bin", "trace.csv", "samples.csv", "metrics.csv", "scatter.svg"] {
        assert!(seed.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("report.csv").is_file());
    let resolved = fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    for key in ["learning_rate = 0.001", "decay = 0.9", "epsilon = ", "beta = -0.5", "batch_size = 20"] {
        assert!(resolved.contains(key), "resolved config lacks {key}:\n{resolved}");
    }
    let samples = fs::read_to_string(seed.join("samples.csv")).unwrap();
    let lines: Vec<&str> = samples.lines().collect();
    assert_eq!(lines[0], "x1,x2");
    assert_eq!(lines.len(), 151);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 2));
    let trace = fs::read_to_string(seed.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 101);
    assert!(trace.starts_with("iteration,ksd_u,ksd_v,bandwidth,wall_time_s\n"));
    let metrics = fs::read_to_string(seed.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,h1,h2,mmd,mode_coverage\n3,"), "{metrics}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = write_config(dir.path(), "a.toml", &ring_ksd("a", 40, ""));
    let b = write_config(dir.path(), "b.toml", &ring_ksd("b", 40, ""));
    assert!(stein(&["run", arg(&a)]).status.success());
    assert!(stein(&["run", arg(&b)]).status.success());
    for f in ["report.csv", "seed-3/samples.csv", "seed-3/metrics.csv", "seed-3/checkpoint.bin"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let full = write_config(dir.path(), "full.toml", &ring_ksd("full", 60, ""));
    assert!(stein(&["run", arg(&full)]).status.success());

    let first = write_config(dir.path(), "first.toml", &ring_ksd("part", 30, "checkpoint_every = 10"));
    assert!(stein(&["run", arg(&first)]).status.success());
    let rest = write_config(dir.path(), "rest.toml", &ring_ksd("part", 60, "checkpoint_every = 10"));
    let o = stein(&["run", arg(&rest), "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let trace = fs::read_to_string(dir.path().join("part/seed-3/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 61);
    let iters: Vec<u64> = trace.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, (1..=60).collect::<Vec<_>>());
    for f in ["seed-3/samples.csv", "seed-3/checkpoint.bin", "report.csv"] {
        assert_eq!(
            fs::read(dir.path().join("full").join(f)).unwrap(),
            fs::read(dir.path().join("part").join(f)).unwrap(),
            "{f} differs after resume"
        );
    }
}

#[test]
fn fisher_resume_matches_uninterrupted_run() {
    let body = |out: &str, it: usize| {
        format!(
            r#"
method = "fisher-ns"
seeds = [1]
output_dir = "{out}"
[target]
kind = "cross-mixture"
[network]
hidden = [8]
[schedule]
iterations = {it}
batch_size = 10
disc_steps = 2
[eval]
samples = 50
reference_samples = 50
"#
        )
    };
    let dir = TempDir::new().unwrap();
    let full = write_config(dir.path(), "full.toml", &body("full", 12));
    assert!(stein(&["run", arg(&full)]).status.success());
    let first = write_config(dir.path(), "first.toml", &body("part", 5));
    assert!(stein(&["run", arg(&first)]).status.success());
    let rest = write_config(dir.path(), "rest.toml", &body("part", 12));
    assert!(stein(&["run", arg(&rest), "--resume"]).status.success());
    for f in ["seed-1/samples.csv", "seed-1/discriminator.bin"] {
        assert_eq!(
            fs::read(dir.path().join("full").join(f)).unwrap(),
            fs::read(dir.path().join("part").join(f)).unwrap(),
            "{f} differs after resume"
        );
    }
}

#[test]
fn divergence_exits_1_and_keeps_trace() {
    let dir = TempDir::new().unwrap();
    let body = ring_ksd("out", 50, "") + "\n[optimizer]\nlearning_rate = 1e306\n";
    let cfg = write_config(dir.path(), "c.toml", &body);
    let o = stein(&["run", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("out/seed-3/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,"));
    assert!(trace.lines().count() < 51);
}

#[test]
fn sample_subcommand_is_deterministic_and_read_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &ring_ksd("out", 5, ""));
    assert!(stein(&["run", arg(&cfg)]).status.success());
    let ck = dir.path().join("out/seed-3/checkpoint.bin");
    let before = fs::read(&ck).unwrap();

    let empty = dir.path().join("empty.csv");
    assert!(stein(&["sample", arg(&ck), "--count", "0", "--out", arg(&empty)]).status.success());
    assert_eq!(fs::read_to_string(&empty).unwrap(), "x1,x2\n");

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (out, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        let o = stein(&["sample", arg(&ck), "--count", "500", "--seed", seed, "--out", arg(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 501);
    assert_eq!(fs::read(&ck).unwrap(), before);
}

#[test]
fn corrupted_checkpoint_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let ck = dir.path().join("bad.bin");
    fs::write(&ck, b"STEINNS\0garbage").unwrap();
    let out = dir.path().join("s.csv");
    let o = stein(&["sample", arg(&ck), "--count", "3", "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn plot_renders_one_circle_per_sample() {
    let dir = TempDir::new().unwrap();
    let samples = dir.path().join("s.csv");
    fs::write(&samples, "x1,x2\n0,0\n1,-1\n-2,0.5\n").unwrap();
    let out = dir.path().join("p.svg");
    let o = stein(&["plot", arg(&samples), "--out", arg(&out), "--limits", "-4,4,-4,4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
    assert_eq!(circles.len(), 3);

    let three_d = dir.path().join("t.csv");
    fs::write(&three_d, "x1,x2,x3\n0,0,0\n").unwrap();
    assert_eq!(stein(&["plot", arg(&three_d), "--out", arg(&out)]).status.code(), Some(1));
}

#[test]
fn eval_scores_a_samples_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &ring_ksd("out", 5, ""));
    let samples = dir.path().join("s.csv");
    let mut text = String::from("x1,x2\n");
    for i in 0..40 {
        let a = i as f64 * std::f64::consts::PI / 4.0;
        text.push_str(&format!("{},{}\n", 15.0 * a.cos(), 15.0 * a.sin()));
    }
    fs::write(&samples, text).unwrap();
    let o = stein(&["eval", arg(&samples), arg(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("metric,value\n"), "{out}");
    assert!(out.contains("mode_coverage,8\n"), "{out}");
}

#[test]
fn logistic_run_reads_dataset_file() {
    let dir = TempDir::new().unwrap();
    let mut data = String::new();
    for i in 0..60 {
        let x = (i as f64 / 6.0).sin();
        let y = if x + 0.1 * (i % 3) as f64 > 0.0 { 1 } else { 0 };
        data.push_str(&format!("{y},{x},{}\n", i % 4));
    }
    fs::write(dir.path().join("data.csv"), data).unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        r#"
method = "sgld"
seeds = [0]
output_dir = "out"
[target]
kind = "logistic"
dataset = "data.csv"
[schedule]
burn_in = 50
thin = 2
minibatch = 10
[eval]
samples = 20
"#,
    );
    let o = stein(&["run", arg(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let samples = fs::read_to_string(dir.path().join("out/seed-0/samples.csv")).unwrap();
    // Two features plus the log-precision coordinate.
    assert!(samples.starts_with("x1,x2,x3\n"));
    assert_eq!(samples.lines().count(), 21);
    let metrics = fs::read_to_string(dir.path().join("out/seed-0/metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,accuracy\n0,"));
}
