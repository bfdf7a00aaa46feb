use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prosub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prosub"))
        .args(args)
        .env("PROSUB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_spec(dir: &Path) -> String {
    let path = dir.join("spec.json");
    fs::write(
        &path,
        r#"{"n_samples": 300, "n_measurements": 8, "latent_dim": 3, "noise_std": 0.01, "seed": 5}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: [&str; 14] = [
    "--m-schedule", "4,3", "--epochs", "5", "--anneal-window", "2", "--batch", "50", "--first-stage", "2,3",
    "--later-stages", "1,2", "--units", "4,8",
];

#[test]
fn run_compare_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let data = dir.path().join("data.bin");
    let data_s = data.to_str().unwrap();
    let text = ok(&prosub(&["generate", "--synthetic", &spec, "--out", data_s]));
    assert!(text.contains("300 samples x 8 measurements"), "{text}");

    let runs: Vec<_> = ["prosub-no-nas", "sardu"]
        .iter()
        .map(|method| {
            let out = dir.path().join(method);
            let out_s = out.to_str().unwrap().to_owned();
            let mut args = vec!["run", "--method", method, "--data", data_s, "--folds", "5", "--out", &out_s];
            args.extend(SMALL);
            let stdout = ok(&prosub(&args));
            assert!(stdout.contains("reports written"), "{stdout}");
            assert!(out.join("config.json").is_file());
            assert!(out.join("summary.csv").is_file());
            assert!(out.join("seed0/M3/report.json").is_file());
            out
        })
        .collect();

    let cmp = ok(&prosub(&[
        "compare",
        "--a",
        runs[0].to_str().unwrap(),
        "--b",
        runs[1].to_str().unwrap(),
        "--json",
    ]));
    let parsed: serde_json::Value = serde_json::from_str(&cmp).unwrap();
    assert_eq!(parsed["rows"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["rows"][0]["pairs"], 5);
    let table = ok(&prosub(&["compare", "--a", runs[0].to_str().unwrap(), "--b", runs[1].to_str().unwrap()]));
    assert!(table.contains("prosub-no-nas"), "{table}");

    let ckpt = runs[0].join("seed0/M3/fold0");
    let eval = ok(&prosub(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", data_s]));
    let parsed: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(parsed["mse"].as_f64().unwrap().is_finite());
    assert_eq!(parsed["samples"], 300);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"epochs": 9, "seeds": [1, 2], "unit_choices": [4, 8], "nas_trials": 2}"#).unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "run",
        "--config",
        config.to_str().unwrap(),
        "--method",
        "prosub",
        "--synthetic",
        &spec,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(SMALL);
    ok(&prosub(&args));
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["epochs"], 5);
    assert_eq!(written["seeds"], serde_json::json!([1, 2]));
    assert!(out.join("seed2/M4/trials_fold0.jsonl").is_file());
}

#[test]
fn rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();

    let missing = prosub(&["run", "--out", out_s]);
    assert!(!missing.status.success());

    let ascending = prosub(&["run", "--method", "sardu", "--synthetic", &spec, "--m-schedule", "2,4", "--out", out_s]);
    assert!(!ascending.status.success());
    assert!(String::from_utf8_lossy(&ascending.stderr).contains("descending"));

    let pair = prosub(&[
        "run", "--method", "prosub", "--synthetic", &spec, "--m-schedule", "4", "--first-stage", "2,3,4", "--out", out_s,
    ]);
    assert!(!pair.status.success());
    assert!(String::from_utf8_lossy(&pair.stderr).contains("first-stage"));

    let no_reports = prosub(&["compare", "--a", out_s, "--b", out_s]);
    assert!(!no_reports.status.success());

    let no_ckpt = prosub(&["evaluate", "--checkpoint", out_s, "--data", &spec]);
    assert!(!no_ckpt.status.success());
}
