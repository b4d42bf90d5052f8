use std::path::{Path, PathBuf};
use std::process::Command;

use hjb::checkpoint::Checkpoint;
use hjb::commands;
use hjb::config::PolicyName;
use hjb::ExperimentConfig;

const TINY_2D: &str = r#"{
  "problem": {"name": "trajectory2d", "N": 5},
  "model": {"kind": "resnet", "width": 4, "depth": 1},
  "loss": {"beta": [1, 1, 1, 0.1, 0.1]},
  "train": {"iterations": 6, "batch_size": 8, "lr_schedule": [[0, 0.01], [3, 0.001]], "seed": 3, "eval_every": 3, "checkpoint_every": 2},
  "eval": {"n_rollouts": 16, "n_traj": 0}
}"#;

const TINY_BENCH: &str = r#"{
  "problem": {"name": "benchmark", "d": 2, "N": 4},
  "model": {"kind": "mlp", "width": 5, "depth": 2, "activation": "tanh"},
  "loss": {"beta": [1, 0, 20, 1, 1]},
  "train": {"iterations": 4, "batch_size": 8, "seed": 11, "eval_every": 2},
  "eval": {"n_rollouts": 16, "n_traj": 2, "oracle_samples": 300}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hjb"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Train log with the wallclock column removed.
fn loss_columns(dir: &Path) -> String {
    read(&dir.join("train_log.csv")).lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect()
}

#[test]
fn train_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY_2D);
    let out = tmp.path().join("run");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out));

    let resolved = ExperimentConfig::from_json(&read(&out.join("resolved_config.json"))).unwrap();
    assert_eq!(resolved, ExperimentConfig::from_json(TINY_2D).unwrap().resolve().unwrap());

    let log = read(&out.join("train_log.csv"));
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iteration,lr,loss_total,loss_bsde,loss_hjb,loss_obj,loss_term_val,loss_term_grad,wallclock_s");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,0.01,"));
    assert!(lines[4].starts_with("3,0.001,"));

    let metrics = read(&out.join("metrics.csv"));
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("3,") && rows[1].starts_with("6,"));
    for k in [2, 4, 6] {
        assert!(out.join(format!("checkpoint_{k}.json")).exists());
    }
    let ck = Checkpoint::load(&out.join("checkpoint_6.json")).unwrap();
    assert_eq!(ck.rng_state.next_iteration, 6);
    assert_eq!(ck.param_count, ck.theta.len());
}

#[test]
fn skipped_loss_terms_are_empty_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let c = ExperimentConfig::from_json(TINY_BENCH).unwrap().resolve().unwrap();
    commands::train_into(&c, &out, None).unwrap();
    let log = read(&out.join("train_log.csv"));
    let row: Vec<&str> = log.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "");
    assert!(row[3].parse::<f64>().is_ok() && row[5].parse::<f64>().is_ok());
    let metrics = read(&out.join("metrics.csv"));
    let last: Vec<&str> = metrics.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "4");
    assert!(last[3].parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn seed_override_changes_only_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY_2D);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&a));
    run_ok(bin().args(["train", "--seed", "99", "--config"]).arg(&cfg).arg("--out").arg(&b));
    let ra = ExperimentConfig::from_json(&read(&a.join("resolved_config.json"))).unwrap();
    let mut rb = ExperimentConfig::from_json(&read(&b.join("resolved_config.json"))).unwrap();
    assert_eq!(rb.train.seed, 99);
    rb.train.seed = ra.train.seed;
    assert_eq!(ra, rb);
    assert_ne!(loss_columns(&a), loss_columns(&b));
}

#[test]
fn repeated_runs_are_byte_identical_apart_from_wallclock() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY_2D);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(bin().env("HJB_THREADS", "1").args(["train", "--config"]).arg(&cfg).arg("--out").arg(&a));
    run_ok(bin().env("HJB_THREADS", "4").args(["train", "--config"]).arg(&cfg).arg("--out").arg(&b));
    assert_eq!(loss_columns(&a), loss_columns(&b));
    for f in ["metrics.csv", "checkpoint_6.json", "resolved_config.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = ExperimentConfig::from_json(TINY_2D).unwrap().resolve().unwrap();
    let mut half = full.clone();
    half.train.iterations = 2;
    commands::train_into(&full, &tmp.path().join("full"), None).unwrap();
    commands::train_into(&half, &tmp.path().join("half"), None).unwrap();
    commands::train_into(&full, &tmp.path().join("resumed"), Some(&tmp.path().join("half/checkpoint_2.json"))).unwrap();
    assert_eq!(read(&tmp.path().join("full/checkpoint_6.json")), read(&tmp.path().join("resumed/checkpoint_6.json")));
}

#[test]
fn invalid_configs_fail_with_field_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"problem": {"name": "benchmark"}, "train": {"batch_size": 0}}"#, "train.batch_size"),
        (r#"{"problem": {"name": "benchmark"}, "model": {"widht": 3}}"#, "widht"),
        (r#"{"problem": {"name": "nope"}}"#, "nope"),
        (r#"{"problem": {"name": "benchmark", "sigma": -1}}"#, "problem.sigma"),
    ];
    for (k, (text, needle)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{k}.json"), text);
        let out = bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join(format!("o{k}"))).output().unwrap();
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
    }
    let out = bin().args(["train", "--config", "/nonexistent.json", "--out"]).arg(tmp.path().join("x")).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn eval_reports_metrics_and_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY_BENCH);
    let run = tmp.path().join("run");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&run));
    let out = tmp.path().join("eval");
    run_ok(bin().args(["eval", "--dump-trajectories", "--checkpoint"]).arg(run.join("checkpoint_4.json")).arg("--config").arg(&cfg).arg("--out").arg(&out));
    let m = read(&out.join("metrics.csv"));
    assert_eq!(m.lines().count(), 2);
    // Evaluation at the final iteration reproduces the training run's last row.
    assert_eq!(m.lines().nth(1), read(&run.join("metrics.csv")).lines().last());
    let t = read(&out.join("trajectories.csv"));
    assert_eq!(t.lines().next().unwrap(), "trajectory,step,s,z0,z1,u0,u1");
    assert_eq!(t.lines().count(), 1 + 16 * 5);
    assert!(out.join("resolved_config.json").exists());
}

#[test]
fn oracle_command_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY_BENCH);
    let pts = write_config(tmp.path(), "pts.csv", "0.5, 0.1, -0.2\n1.0, 1.0, 1.0\n");
    let out = tmp.path().join("o");
    run_ok(bin().args(["oracle", "--samples", "2000", "--config"]).arg(&cfg).arg("--out").arg(&out).arg("--points").arg(&pts));
    let text = read(&out.join("oracle.csv"));
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["s", "z_hash", "value", "stderr", "n_samples"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][4], "2000");
    assert_eq!(rows[2][1], commands::z_hash(&[1.0, 1.0]));
    // Terminal time returns G: ln((1 + 2) / 2).
    assert!((rows[2][2].parse::<f64>().unwrap() - 1.5f64.ln()).abs() < 1e-15);
    assert_eq!(rows[2][3], "0");

    let out2 = tmp.path().join("o2");
    run_ok(bin().env("HJB_THREADS", "3").args(["oracle", "--samples", "2000", "--config"]).arg(&cfg).arg("--out").arg(&out2).arg("--points").arg(&pts));
    assert_eq!(text, read(&out2.join("oracle.csv")));

    let t2d = write_config(tmp.path(), "t.json", TINY_2D);
    let out = bin().args(["oracle", "--config"]).arg(&t2d).arg("--out").arg(tmp.path().join("o3")).output().unwrap();
    assert!(!out.status.success());
    assert!(tmp.path().join("o3/resolved_config.json").exists());
}

#[test]
fn histogram_grids_conserve_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY_2D);
    let run = tmp.path().join("run");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&run));
    let out = tmp.path().join("h");
    run_ok(
        bin()
            .args(["histogram", "--axes", "1", "0", "--slices", "0,0.5,1", "--bins", "6", "--range", "-4", "4", "--checkpoint"])
            .arg(run.join("checkpoint_6.json"))
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out),
    );
    for k in 0..3 {
        let g = read(&out.join(format!("hist_slice_{k}.csv")));
        let rows: Vec<Vec<u64>> = g.lines().map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.len() == 6));
        assert_eq!(rows.iter().flatten().sum::<u64>(), 16);
    }
    let meta: serde_json::Value = serde_json::from_str(&read(&out.join("hist_meta.json"))).unwrap();
    assert_eq!(meta["axes"], serde_json::json!([1, 0]));
    assert_eq!(meta["slices"][1]["step"], 3);
    assert_eq!(meta["policy"], "pmp_feedback");
}

#[test]
fn compare_sampling_equals_paired_train_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "c.json", TINY_2D);
    let out = tmp.path().join("cmp");
    run_ok(bin().args(["compare-sampling", "--repeats", "2", "--config"]).arg(&cfg_path).arg("--out").arg(&out));

    let base = ExperimentConfig::from_json(TINY_2D).unwrap().resolve().unwrap();
    for (arm, policy) in [("pmp_feedback", PolicyName::PmpFeedback), ("zero_drift", PolicyName::ZeroDrift)] {
        let mut c = base.clone();
        c.train.drift_policy = policy;
        let solo = tmp.path().join(arm);
        commands::train_into(&c, &solo, None).unwrap();
        let paired = out.join(arm).join("repeat_0");
        assert_eq!(read(&solo.join("checkpoint_6.json")), read(&paired.join("checkpoint_6.json")));
        assert_eq!(loss_columns(&solo), loss_columns(&paired));
        let second = ExperimentConfig::from_json(&read(&out.join(arm).join("repeat_1/resolved_config.json"))).unwrap();
        assert_eq!(second.train.seed, base.train.seed + 1);
    }
    let curves = read(&out.join("compare_j_curves.csv"));
    let lines: Vec<&str> = curves.lines().collect();
    assert_eq!(lines[0], "iteration,pmp_feedback_j_mean,zero_drift_j_mean");
    assert_eq!(lines.len(), 3);
    assert_eq!(read(&out.join("compare_summary.csv")).lines().count(), 5);
}

#[test]
fn scaling_stops_at_first_width_within_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{
      "problem": {"name": "benchmark_shifted", "d": 2, "N": 4, "target": [3, 3]},
      "model": {"kind": "resnet", "depth": 1},
      "loss": {"beta": [1, 0, 20, 1, 1]},
      "train": {"iterations": 3, "batch_size": 8, "seed": 2},
      "eval": {"n_rollouts": 8, "n_traj": 0},
      "scaling": {"start_width": 2, "max_width": 8, "tolerance": 1000}
    }"#;
    let cfg = write_config(tmp.path(), "c.json", text);
    let out = tmp.path().join("s");
    run_ok(bin().args(["scaling", "--dims", "2,3", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let table = read(&out.join("scaling_table.csv"));
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1], rows[0][4]), ("2", "2", "true"));
    assert_eq!((rows[1][0], rows[1][1]), ("3", "2"));
    assert!(out.join("d3_w2/checkpoint_3.json").exists());

    // An unreachable tolerance walks the whole doubling schedule.
    let strict = text.replace("\"tolerance\": 1000", "\"tolerance\": 1e-12");
    let cfg = write_config(tmp.path(), "strict.json", &strict);
    let out = tmp.path().join("strict");
    run_ok(bin().args(["scaling", "--dims", "2", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let widths: Vec<String> =
        read(&out.join("scaling_table.csv")).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(widths, ["2", "4", "8"]);
}

#[test]
fn bundled_recipes_encode_their_settings() {
    for name in hjb::recipes::NAMES {
        ExperimentConfig::from_json(hjb::recipes::get(name).unwrap()).unwrap().resolve().unwrap();
    }
    let t = ExperimentConfig::from_json(hjb::recipes::TRAJECTORY2D).unwrap().resolve().unwrap();
    assert_eq!(t.loss.beta, [1.0, 1.0, 1.0, 0.1, 0.1]);
    assert_eq!((t.train.iterations, t.train.batch_size), (3000, 64));
    assert_eq!(t.train.lr_schedule, vec![(0, 0.01), (1500, 0.001)]);
    assert_eq!(hjb_core::model::param_count(&t.architecture(), 2), 1229);

    let b = ExperimentConfig::from_json(hjb::recipes::BENCHMARK100).unwrap().resolve().unwrap();
    assert_eq!((b.d(), b.problem.steps, b.train.batch_size, b.train.iterations), (100, 50, 64, 50_000));
    assert_eq!(b.loss.beta, [1.0, 0.0, 20.0, 1.0, 1.0]);
    assert_eq!(b.problem.sigma, Some(std::f64::consts::SQRT_2));

    let b = ExperimentConfig::from_json(hjb::recipes::BENCHMARK10).unwrap().resolve().unwrap();
    assert_eq!((b.d(), b.model.width, b.model.depth, b.train.iterations), (10, 64, 3, 5000));
    assert_eq!(b.train.lr_schedule, vec![(0, 0.001)]);
    assert_eq!(b.loss.beta, [1.0, 0.0, 20.0, 1.0, 1.0]);

    let out = bin().args(["recipe", "trajectory2d"]).output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), hjb::recipes::TRAJECTORY2D);
}
