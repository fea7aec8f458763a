use std::fs;
use std::path::Path;
use std::process::Command;

use coop_rl_cli::{sweep, verify, RunConfig, SweepAxis, SweepSpec, VerifyOptions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coop-rl"));
    c.env("COOP_RL_THREADS", "2");
    c
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "hidden = 8\nprobe_count = 8\n";

#[test]
fn train_writes_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = bin()
        .args(["train", "--episodes", "5", "--seed", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("coop_seed3.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(
        lines[0].starts_with("# config_hash=") && lines[0].len() == "# config_hash=".len() + 64
    );
    assert_eq!(
        lines[1],
        "episode,reward,mean_reward_100,td_loss,q_gap,s_scale,wall_ms"
    );
    assert_eq!(lines.len(), 2 + 5);
    assert!(lines[6].starts_with("5,"));
    assert!(dir.path().join("coop_seed3_q1.weights").exists());
    assert!(dir.path().join("coop_seed3_q2.weights").exists());

    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout
        .lines()
        .find(|l| l.starts_with("coop: "))
        .expect("summary line");
    let cell = last.trim_start_matches("coop: ");
    let (mean, rest) = cell.split_once('(').unwrap();
    assert!(mean.parse::<f64>().is_ok() && rest.ends_with(')'), "{last}");
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for sub in ["a", "b"] {
        let out = bin()
            .args([
                "train",
                "--episodes",
                "6",
                "--seed",
                "11",
                "--variant",
                "edql",
                "--config",
            ])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    for f in [
        "edql_seed11.csv",
        "edql_seed11_q1.weights",
        "edql_seed11_q2.weights",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}episodes = 4\nseeds = 2\nvariant = g-coop\n"),
    );
    let run = |cfg: &Path, out: &Path| {
        assert!(bin()
            .arg("train")
            .arg("--config")
            .arg(cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
            .status
            .success());
        fs::read(out.join("g-coop_seed2.csv")).unwrap()
    };
    let first = run(&cfg, &dir.path().join("first"));
    let second = run(
        &dir.path().join("first/config.resolved"),
        &dir.path().join("second"),
    );
    assert_eq!(first, second);
}

#[test]
fn invalid_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "buffer = 10\n");
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown configuration key `buffer`"));

    let out = bin()
        .args(["train", "--set", "gamma=1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["train", "--obs", "rgb"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin()
        .args(["train", "--episodes", "1"])
        .env("COOP_RL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn buffer_sweep_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = RunConfig::from_str_config(SMALL).unwrap();
    base.set("episodes", "3").unwrap();
    base.set("seeds", "1,2").unwrap();
    base.out_dir = dir.path().to_path_buf();
    let spec = SweepSpec::new(SweepAxis::BufferSize, vec!["500".into(), "5000".into()]).unwrap();
    let report = sweep(&base, &spec).unwrap();
    assert_eq!(report.runs.len(), 4);
    assert_eq!(report.rows.len(), 2);
    assert!(report
        .rows
        .iter()
        .all(|r| r.runs == 2 && r.failures.is_empty()));
    let agg = fs::read_to_string(&report.aggregate_path).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(
        lines[1],
        "axis_value,label,mean_reward,std_reward,runs,failures"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("500,coop,") && lines[3].starts_with("5000,coop,"));
    for (value, seed) in [("500", 1), ("500", 2), ("5000", 1), ("5000", 2)] {
        let p = dir
            .path()
            .join(format!("sweep_buffer_size/{value}_seed{seed}.csv"));
        assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 2 + 3);
    }
}

#[test]
fn exploration_sweep_labels_zero_as_gradient_coop() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "sweep",
            "--axis",
            "exploration_rate",
            "--values",
            "0,0.1",
            "--episodes",
            "2",
            "--seed",
            "1",
        ])
        .args(["--set", "hidden=4", "--set", "probe_count=4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let agg = fs::read_to_string(dir.path().join("sweep_exploration_rate.csv")).unwrap();
    assert!(
        agg.lines().any(|l| l.starts_with("0,g-coop-equivalent,")),
        "{agg}"
    );
    assert!(agg.lines().any(|l| l.starts_with("0.1,coop,")), "{agg}");
}

#[test]
fn verify_single_unperturbed_trial_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let report = verify(&VerifyOptions {
        trials: 1,
        s: Some(0.0),
        out_dir: dir.path().to_path_buf(),
        ..VerifyOptions::default()
    })
    .unwrap();
    assert!(report.max_gap() <= 1e-8);
    assert!(report.pass());

    let out = bin()
        .args(["verify", "--trials", "1", "--s", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let max_gap: f64 = stdout
        .split("max_gap=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(max_gap <= 1e-8);
    let csv = fs::read_to_string(dir.path().join("verify_report.csv")).unwrap();
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("check,trial,s,eps,gap,bound"));
}

#[test]
fn verify_default_trials_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("verify")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("overall=PASS"));
}

#[test]
fn corrupted_feedback_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["verify", "--trials", "100", "--corrupt-feedback", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spectrum_ok=false"));
    let help = bin().args(["verify", "--help"]).output().unwrap();
    assert!(!String::from_utf8_lossy(&help.stdout).contains("corrupt"));
}

#[test]
fn eval_replays_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(bin()
        .args([
            "train",
            "--episodes",
            "3",
            "--seed",
            "1",
            "--variant",
            "dql",
            "--config"
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status
        .success());
    let traj = dir.path().join("traj.csv");
    let out = bin()
        .args(["eval", "--episodes", "4", "--checkpoint"])
        .arg(dir.path().join("dql_seed1_q1.weights"))
        .arg("--trajectory")
        .arg(&traj)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("episode ")).count(),
        4
    );
    let first: f64 = stdout
        .lines()
        .next()
        .unwrap()
        .rsplit(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let traj = fs::read_to_string(traj).unwrap();
    assert_eq!(traj.lines().count() as f64, 1.0 + first);

    let out = bin()
        .args(["eval", "--obs", "pixels", "--checkpoint"])
        .arg(dir.path().join("dql_seed1_q1.weights"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
