use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qber_risk_cli::stages::{
    CATEGORIES_JSON, CLEAN_CSV, CV_COMPARE_JSON, CV_JSON, RISK_REPORT_JSON, RISK_WINDOWS_CSV, SERIES_CSV, SUMMARY_TXT,
};

const SMALL: &str = r#"
seed = 5
[input]
profile = "1km"
n = 3000
[learner]
k = 3
c_min = 1
c_max = 3
t_training = 5
t_test = 10
[cv]
k = 2
train_subfolds = 2
"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qber-risk"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), config).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn stages_run_in_order_and_write_outputs() {
    let dir = setup(SMALL);
    let d = dir.path();
    for stage in ["simulate", "train", "test", "risk", "report"] {
        let o = bin(d, &[stage, "--config", "cfg.toml", "--out", "run"]);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let run = d.join("run");
    for name in [
        CLEAN_CSV,
        SERIES_CSV,
        CATEGORIES_JSON,
        CV_JSON,
        RISK_REPORT_JSON,
        RISK_WINDOWS_CSV,
        SUMMARY_TXT,
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let summary = fs::read_to_string(run.join(SUMMARY_TXT)).unwrap();
    assert!(summary.contains("trust verdict"));
    assert!(summary.contains("TP = "), "labelled runs report confusion counts");
    let windows = fs::read_to_string(run.join(RISK_WINDOWS_CSV)).unwrap();
    assert_eq!(windows.lines().next(), Some("window_index,category,eta,gamma,flag"));
    assert_eq!(windows.lines().count(), 1 + 30);
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = setup(SMALL);
    let d = dir.path();
    for out in ["a", "b"] {
        assert_eq!(code(&bin(d, &["simulate", "--config", "cfg.toml", "--out", out])), 0);
    }
    assert_eq!(
        code(&bin(
            d,
            &["simulate", "--config", "cfg.toml", "--seed", "6", "--out", "c"]
        )),
        0
    );
    let read = |p: &str| fs::read(d.join(p).join(SERIES_CSV)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn disabled_attack_labels_nothing() {
    let dir = setup(&format!("{SMALL}[attack]\nenabled = false\n"));
    let d = dir.path();
    assert_eq!(code(&bin(d, &["simulate", "--config", "cfg.toml", "--out", "run"])), 0);
    let text = fs::read_to_string(d.join("run").join(SERIES_CSV)).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn config_errors_exit_2() {
    let dir = setup("[learner]\nc_min = 5\nc_max = 2\n");
    let d = dir.path();
    assert_eq!(code(&bin(d, &["simulate", "--config", "cfg.toml"])), 2);
    assert_eq!(code(&bin(d, &["simulate", "--config", "missing.toml"])), 2);
    fs::write(d.join("bad.toml"), "not = [valid").unwrap();
    assert_eq!(code(&bin(d, &["train", "--config", "bad.toml"])), 2);
    fs::write(d.join("csv.toml"), "[input]\ncsv = \"x.csv\"\n").unwrap();
    assert_eq!(code(&bin(d, &["simulate", "--config", "csv.toml"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = setup(SMALL);
    let d = dir.path();
    fs::create_dir(d.join("empty")).unwrap();
    let o = bin(d, &["report", "--out", "empty"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing `risk` stage"));
    assert_eq!(code(&bin(d, &["train", "--config", "cfg.toml", "--out", "empty"])), 3);
    assert_eq!(code(&bin(d, &["risk", "--config", "cfg.toml", "--out", "empty"])), 3);

    fs::write(d.join("rows.csv"), "timestamp,qber\n1,0.5\n").unwrap();
    fs::write(d.join("csv.toml"), "[input]\ncsv = \"rows.csv\"\n").unwrap();
    assert_eq!(code(&bin(d, &["train", "--config", "csv.toml", "--out", "x"])), 3);
}

#[test]
fn stale_inputs_are_detected() {
    let dir = setup(SMALL);
    let d = dir.path();
    let run = |args: &[&str]| code(&bin(d, args));
    assert_eq!(run(&["simulate", "--config", "cfg.toml", "--out", "run"]), 0);
    assert_eq!(run(&["train", "--config", "cfg.toml", "--out", "run"]), 0);
    // A new baseline invalidates the trained categories.
    assert_eq!(
        run(&["simulate", "--config", "cfg.toml", "--seed", "99", "--out", "run"]),
        0
    );
    assert_eq!(run(&["risk", "--config", "cfg.toml", "--out", "run"]), 3);
    // Hand-edited outputs are rejected.
    let clean = d.join("run").join(CLEAN_CSV);
    let mut text = fs::read_to_string(&clean).unwrap();
    text.push_str("9999999999,0.01,,,0\n");
    fs::write(&clean, text).unwrap();
    assert_eq!(run(&["train", "--config", "cfg.toml", "--out", "run"]), 3);
}

#[test]
fn csv_input_and_run_comparison() {
    let dir = setup(SMALL);
    let d = dir.path();
    assert_eq!(code(&bin(d, &["simulate", "--config", "cfg.toml", "--out", "sim"])), 0);
    fs::copy(d.join("sim").join(CLEAN_CSV), d.join("clean.csv")).unwrap();
    fs::copy(d.join("sim").join(SERIES_CSV), d.join("eval.csv")).unwrap();
    let csv_cfg = SMALL.replace(
        "profile = \"1km\"\nn = 3000",
        "csv = \"clean.csv\"\neval_csv = \"eval.csv\"",
    );
    fs::write(d.join("csv.toml"), csv_cfg).unwrap();
    let o = bin(d, &["all", "--config", "csv.toml", "--out", "from_csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&bin(d, &["all", "--config", "cfg.toml", "--out", "from_sim"])), 0);
    // Same data, config and seed: identical report.
    assert_eq!(
        fs::read(d.join("from_csv").join(RISK_REPORT_JSON)).unwrap(),
        fs::read(d.join("from_sim").join(RISK_REPORT_JSON)).unwrap()
    );
    let o = bin(d, &["report", "--out", "from_csv", "--compare", "from_sim"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("run\tP(V)\tP(R)\tmean_gamma"));
    assert_eq!(text.lines().filter(|l| l.starts_with("from_")).count(), 2);
}

#[test]
fn comparison_range_emits_second_table() {
    let dir = setup(&SMALL.replace("[cv]\n", "[cv]\ncompare_c_range = [4, 5]\n"));
    let d = dir.path();
    assert_eq!(code(&bin(d, &["simulate", "--config", "cfg.toml", "--out", "run"])), 0);
    let o = bin(d, &["test", "--config", "cfg.toml", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("run").join(CV_COMPARE_JSON).is_file());
}

#[test]
fn config_command_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(dir.path(), &["config"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("t_training = 100"));
    assert!(text.contains("t_test = 10000"));
}
