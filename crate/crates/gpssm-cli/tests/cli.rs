//! Black-box tests of the command-line interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gpssm")
}

fn run_in(results: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .env("GPSSM_RESULTS_DIR", results)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn fit_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let text = format!(
        r#"
name = "{name}"
seed = 7

[data]
source = "kink"
t_len = 30
process_sd = 0.05
obs_sd = 0.3
train_fraction = 0.8

[model]
latent_dim = 1
n_inducing = 5

[posterior]
variant = "vcdt"

[training]
iterations = 3
mc_samples = 2
{extra}

[prediction]
horizon = 4
samples = 6
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn artifact_dir(output: &Output) -> PathBuf {
    let line = stdout(output)
        .lines()
        .find(|l| l.starts_with("artifacts: "))
        .expect("fit prints the artifact directory")
        .to_string();
    PathBuf::from(line.trim_start_matches("artifacts: "))
}

fn mask_last_column(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(idx) => &line[..idx],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn generate_kink_is_deterministic_and_latent_column_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let with_x = dir.path().join("x.csv");
    for out in [&a, &b] {
        let output = run_in(dir.path(), &[
            "generate-kink",
            "--t-len",
            "25",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let output = run_in(dir.path(), &[
        "generate-kink",
        "--t-len",
        "25",
        "--seed",
        "3",
        "--with-latent",
        "--out",
        with_x.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(&with_x).unwrap();
    assert!(text.starts_with("y0,x0"));
    assert_eq!(text.lines().count(), 26);

    // observations agree with the plain file; the latent column is extra
    let plain = std::fs::read_to_string(&a).unwrap();
    for (full, bare) in text.lines().skip(1).zip(plain.lines().skip(1)) {
        assert_eq!(full.split(',').next(), Some(bare));
    }
}

#[test]
fn fit_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = fit_config(dir.path(), "round-trip", "");

    let fit = run_in(dir.path(), &["fit", "--config", config.to_str().unwrap()]);
    assert!(fit.status.success(), "fit failed: {}", String::from_utf8_lossy(&fit.stderr));
    let artifacts = artifact_dir(&fit);
    assert!(artifacts.join("checkpoint.json").is_file());
    assert!(artifacts.join("trace.csv").is_file());

    let preds = dir.path().join("preds.csv");
    let predict = run_in(dir.path(), &[
        "predict",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        artifacts.join("checkpoint.json").to_str().unwrap(),
        "--horizon",
        "4",
        "--samples",
        "8",
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert!(predict.status.success(), "{}", String::from_utf8_lossy(&predict.stderr));
    let pred_text = std::fs::read_to_string(&preds).unwrap();
    assert!(pred_text.contains("pred-mean"));
    assert!(pred_text.contains("pred-sd"));

    // truth: the same simulation the fit consumed, full length
    let truth = dir.path().join("truth.csv");
    let gen = run_in(dir.path(), &[
        "generate-kink",
        "--t-len",
        "30",
        "--obs-sd",
        "0.3",
        "--seed",
        "7",
        "--out",
        truth.to_str().unwrap(),
    ]);
    assert!(gen.status.success());

    let scores = dir.path().join("scores.csv");
    let eval = run_in(dir.path(), &[
        "evaluate",
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--obs-sd",
        "0.3",
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = stdout(&eval);
    assert!(text.contains("mean gaussian-nlpp"));
    assert!(text.contains("coverage"));
    let score_text = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(score_text.lines().next(), Some("t,gaussian_nlpp,rmse"));
    assert_eq!(score_text.lines().count(), 5);
}

#[test]
fn fit_reruns_byte_identically_apart_from_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let config = fit_config(dir.path(), "determinism", "");

    let first = run_in(dir.path(), &["fit", "--config", config.to_str().unwrap()]);
    assert!(first.status.success());
    let artifacts = artifact_dir(&first);
    let trace_1 = std::fs::read_to_string(artifacts.join("trace.csv")).unwrap();
    let checkpoint_1 = std::fs::read(artifacts.join("checkpoint.json")).unwrap();

    let second = run_in(dir.path(), &["fit", "--config", config.to_str().unwrap()]);
    assert!(second.status.success());
    let trace_2 = std::fs::read_to_string(artifacts.join("trace.csv")).unwrap();
    let checkpoint_2 = std::fs::read(artifacts.join("checkpoint.json")).unwrap();

    assert_eq!(mask_last_column(&trace_1), mask_last_column(&trace_2));
    assert_eq!(checkpoint_1, checkpoint_2);
}

#[test]
fn config_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();

    let missing = run_in(dir.path(), &["fit", "--config", "/no/such/file.toml"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "name = \"bad\"\n[data]\nsource = \"kink\"\nnormalize = true\n",
    )
    .unwrap();
    let typo = run_in(dir.path(), &["fit", "--config", bad.to_str().unwrap()]);
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("error:"));
}

#[test]
fn non_finite_data_aborts_training_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("holes.csv");
    let mut text = String::from("y0\nNaN\n");
    for t in 1..20 {
        text.push_str(&format!("{}\n", (t as f64 * 0.4).sin()));
    }
    std::fs::write(&data, text).unwrap();

    let config = dir.path().join("holes.toml");
    std::fs::write(
        &config,
        format!(
            r#"
name = "holes"

[data]
source = "csv"
path = "{}"
observation_columns = ["y0"]

[model]
latent_dim = 1
n_inducing = 4

[posterior]
variant = "vcdt"

[training]
iterations = 6
mc_samples = 2
"#,
            data.display()
        ),
    )
    .unwrap();

    let fit = run_in(dir.path(), &["fit", "--config", config.to_str().unwrap()]);
    assert_eq!(fit.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&fit.stderr));
}

#[test]
fn evaluate_rejects_degenerate_observation_noise() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.csv");
    let truth = dir.path().join("t.csv");
    std::fs::write(&preds, "kind,t,dim,value\npred-mean,0,0,0.0\npred-sd,0,0,1.0\n").unwrap();
    std::fs::write(&truth, "y0\n0.5\n").unwrap();
    let eval = run_in(dir.path(), &[
        "evaluate",
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--obs-sd",
        "0.0",
    ]);
    assert_eq!(eval.status.code(), Some(2));
}

#[test]
fn study_commands_run_and_write_tables() {
    let dir = tempfile::tempdir().unwrap();

    let bias_out = dir.path().join("bias.csv");
    let bias = run_in(dir.path(), &[
        "bias-study",
        "--t-len",
        "6",
        "--trajectories",
        "120",
        "--out",
        bias_out.to_str().unwrap(),
    ]);
    assert!(bias.status.success(), "{}", String::from_utf8_lossy(&bias.stderr));
    assert!(stdout(&bias).contains("rejections:"));
    let table = std::fs::read_to_string(&bias_out).unwrap();
    assert!(table.lines().next().unwrap().starts_with("comparison,"));
    assert!(table.contains("corrected-vs-independent"));
    assert!(table.contains("corrected-vs-corrected"));

    let timing_out = dir.path().join("timing.csv");
    let timing = run_in(dir.path(), &[
        "timing-study",
        "--base-t",
        "8",
        "--factor",
        "2",
        "--repeats",
        "2",
        "--out",
        timing_out.to_str().unwrap(),
    ]);
    assert!(timing.status.success(), "{}", String::from_utf8_lossy(&timing.stderr));
    assert!(stdout(&timing).contains("ratio"));
    let table = std::fs::read_to_string(&timing_out).unwrap();
    assert_eq!(table.lines().next(), Some("kind,t_len,median_seconds"));
    assert_eq!(table.lines().count(), 5);
}
