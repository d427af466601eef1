use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn mixsup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixsup"))
        .args(args)
        .output()
        .expect("failed to spawn mixsup")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process was killed by a signal")
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("train.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const TINY_CONFIG: &str = "iterations = 6\nbatch_size = 2\nsize_set = 32\n\
                           val_interval = 3\ncheckpoint_interval = 6\nseed = 1\n";

#[test]
fn synth_generates_each_annotation_kind() {
    let tmp = tempdir().unwrap();
    for (kind, dir, ext) in [
        ("pixel", "masks", "png"),
        ("polygon", "masks", "png"),
        ("box", "boxes", "json"),
        ("scribble", "scribbles", "png"),
        ("point", "points", "json"),
    ] {
        let out_dir = tmp.path().join(kind);
        let out = mixsup(&[
            "synth",
            "--generate",
            "6",
            "--kind",
            kind,
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        assert_eq!(exit_code(&out), 0, "{kind}: {}", stderr(&out));
        assert_eq!(count_files(&out_dir.join("images")), 6, "{kind} images");
        let labels: Vec<_> = std::fs::read_dir(out_dir.join(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        assert_eq!(labels.len(), 6, "{kind} labels");
        assert!(labels.iter().all(|p| p.extension().unwrap() == ext));
    }
}

#[test]
fn synth_derives_weak_labels_from_a_dense_folder() {
    let tmp = tempdir().unwrap();
    let dense = tmp.path().join("dense");
    let out = mixsup(&[
        "synth", "--generate", "4", "--kind", "pixel",
        "--out", dense.to_str().unwrap(), "--seed", "2",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let boxes = tmp.path().join("boxes");
    let out = mixsup(&[
        "synth", "--in", dense.to_str().unwrap(), "--kind", "box",
        "--out", boxes.to_str().unwrap(), "--seed", "2",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert_eq!(count_files(&boxes.join("boxes")), 4);
}

#[test]
fn synth_rejects_missing_kind_with_usage_error() {
    let tmp = tempdir().unwrap();
    let out = mixsup(&[
        "synth", "--generate", "2",
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn synth_rejects_unknown_kind_with_config_error() {
    let tmp = tempdir().unwrap();
    let out = mixsup(&[
        "synth", "--generate", "2", "--kind", "voxel",
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("voxel"));
}

#[test]
fn synth_reports_unreadable_input_as_runtime_error() {
    let tmp = tempdir().unwrap();
    let missing = tmp.path().join("no-such-corpus");
    let out = mixsup(&[
        "synth", "--in", missing.to_str().unwrap(), "--kind", "box",
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("no-such-corpus"));
}

#[test]
fn train_writes_checkpoint_history_and_curve() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), TINY_CONFIG);
    let run = tmp.path().join("run");
    let out = mixsup(&[
        "train", "--config", &config,
        "--synth-train", "10", "--synth-test", "4",
        "--out", run.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert!(run.join("checkpoint.ckpt").exists());
    assert!(run.join("training_curve.png").exists());

    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<_> = history.lines().collect();
    assert_eq!(lines[0], "step,kind,l_pixel,l_polygon,l_box,l_scribble,l_points,l_total,val_dice");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("6,"));
}

#[test]
fn resumed_training_extends_the_same_history() {
    let tmp = tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = write_config(tmp.path(), TINY_CONFIG);
    let out = mixsup(&[
        "train", "--config", &config,
        "--synth-train", "10", "--synth-test", "4",
        "--out", run.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let longer = write_config(&run, &TINY_CONFIG.replace("iterations = 6", "iterations = 12"));
    let ckpt = run.join("checkpoint.ckpt");
    let out = mixsup(&[
        "train", "--config", &longer,
        "--synth-train", "10", "--synth-test", "4",
        "--out", run.to_str().unwrap(),
        "--resume", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let steps: Vec<u64> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, (1..=12).collect::<Vec<_>>());
}

#[test]
fn train_rejects_nonpositive_learning_rate() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "learning_rate = 0\niterations = 2\n");
    let out = mixsup(&[
        "train", "--config", &config,
        "--out", tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn eval_reports_the_requested_threshold() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), TINY_CONFIG);
    let run = tmp.path().join("run");
    let out = mixsup(&[
        "train", "--config", &config,
        "--synth-train", "10", "--synth-test", "4",
        "--out", run.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let report_dir = tmp.path().join("report");
    let out = mixsup(&[
        "eval",
        "--checkpoint", run.join("checkpoint.ckpt").to_str().unwrap(),
        "--synth-test", "4", "--seed", "1", "--threshold", "0.4",
        "--out", report_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("wavg dice"));

    let json = std::fs::read_to_string(report_dir.join("report.json")).unwrap();
    assert!(json.contains("\"threshold\": 0.4"));
    assert!(report_dir.join("report.csv").exists());
    assert!(report_dir.join("scores.png").exists());
}

#[test]
fn eval_rejects_out_of_range_threshold() {
    let tmp = tempdir().unwrap();
    let out = mixsup(&[
        "eval", "--checkpoint", "whatever.ckpt", "--threshold", "1.5",
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn eval_reports_missing_checkpoint_as_runtime_error() {
    let tmp = tempdir().unwrap();
    let missing = tmp.path().join("gone.ckpt");
    let out = mixsup(&[
        "eval", "--checkpoint", missing.to_str().unwrap(),
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("gone.ckpt"));
}

#[test]
fn ablate_emits_the_summary_table() {
    let tmp = tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "iterations = 4\nbatch_size = 1\nsize_set = 32\n\
         val_interval = 4\ncheckpoint_interval = 4\n",
    );
    let out_dir = tmp.path().join("ablation");
    let out = mixsup(&[
        "ablate", "--config", &config, "--seeds", "2",
        "--synth-train", "10", "--synth-test", "4",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let summary = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines[0], "BCE,Uncertain,Consistency,Dice,IoU");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("yes,no,no,"));
    assert!(lines[2].starts_with("yes,yes,no,"));
    assert!(lines[3].starts_with("yes,yes,yes,"));
    assert!(lines.iter().skip(1).all(|l| l.contains('±')));

    let runs = std::fs::read_to_string(out_dir.join("ablation_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3 * 2);
}

#[test]
fn loss_check_passes_on_healthy_gradients() {
    let out = mixsup(&["loss-check", "--trials", "2"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("PASS grad/bce"));
    assert!(table.contains("PASS projection/idempotent"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn loss_check_fails_and_names_an_injected_fault() {
    let out = mixsup(&["loss-check", "--trials", "2", "--inject-fault", "dice"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stdout(&out).contains("FAIL grad/dice"));
    assert!(stderr(&out).contains("grad/dice"));
}

#[test]
fn loss_check_rejects_unknown_fault_targets() {
    let out = mixsup(&["loss-check", "--trials", "2", "--inject-fault", "entropy"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("entropy"));
}

#[test]
fn seed_changes_synthesized_content_but_not_outcome() {
    let tmp = tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let out = mixsup(&[
            "synth", "--generate", "3", "--kind", "pixel",
            "--out", dir.to_str().unwrap(), "--seed", seed,
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    }
    let read = |d: &Path| std::fs::read(d.join("images").join("blob0000.png")).unwrap();
    assert_ne!(read(&a), read(&b));
}
