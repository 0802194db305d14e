//! Pipeline stages. Stages talk to each other only through files in the run
//! directory, so each one can be rerun on its own.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qber_risk::data::{
    format_float as num, load_qber_csv, partition_indices, save_qber_csv, CsvSchema, FoldSet, QberSeries,
};
use qber_risk::learner::{
    algorithm2_train, cross_validate, fit_rows, fit_windows, CategorySet, ClusterRange, CvReport,
};
use qber_risk::risk::{
    calibrate_gates, evaluate_risk, simulated_sample_weights, write_windows_csv, RiskInputs, RiskReport,
};
use qber_risk::seed::derive_seed;
use qber_risk::sim::{inject_trojan_attacks, simulate_qber_series, AttackSpec, ChannelProfile};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{sha256_file, verify_output, Manifest};

pub const CLEAN_CSV: &str = "clean.csv";
pub const SERIES_CSV: &str = "series.csv";
pub const SIMULATE_JSON: &str = "simulate.json";
pub const CATEGORIES_JSON: &str = "categories.json";
pub const TRAIN_PVALUES_CSV: &str = "train_pvalues.csv";
pub const TRAIN_FITS_CSV: &str = "train_fits.csv";
pub const CV_JSON: &str = "cv.json";
pub const CV_PVALUES_CSV: &str = "cv_pvalues.csv";
pub const CV_COMPARE_JSON: &str = "cv_compare.json";
pub const CV_COMPARE_CSV: &str = "cv_compare_pvalues.csv";
pub const RISK_REPORT_JSON: &str = "risk_report.json";
pub const RISK_WINDOWS_CSV: &str = "risk_windows.csv";
pub const BETA_CSV: &str = "beta.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

// Labels for splitting the master seed between stages.
const SEED_CHANNEL: u64 = 1;
const SEED_ATTACK: u64 = 2;
const SEED_TRAIN: u64 = 3;
const SEED_CV: u64 = 4;
const SEED_WINDOWS: u64 = 5;
const SEED_WEIGHTS: u64 = 6;

/// Metadata written next to the simulated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub seed: u64,
    pub n: usize,
    pub profile: ChannelProfile,
    pub attack: Option<AttackSpec>,
    pub attack_events: usize,
    pub attacked_samples: usize,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("cannot parse {}: {e}", path.display())))
}

fn load_series(path: &Path) -> Result<QberSeries, CliError> {
    load_qber_csv(path, &CsvSchema::default()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Attack-free series used by `train` and `test`, with its hash.
fn baseline(cfg: &PipelineConfig, out: &Path) -> Result<(PathBuf, String), CliError> {
    match &cfg.input.csv {
        Some(path) => Ok((path.clone(), sha256_file(path)?)),
        None => Ok((out.join(CLEAN_CSV), verify_output(out, "simulate", CLEAN_CSV)?)),
    }
}

/// Series evaluated by `risk`, with its hash.
fn evaluated(cfg: &PipelineConfig, out: &Path) -> Result<(PathBuf, String), CliError> {
    match (&cfg.input.eval_csv, &cfg.input.csv) {
        (Some(path), _) | (None, Some(path)) => Ok((path.clone(), sha256_file(path)?)),
        (None, None) => Ok((out.join(SERIES_CSV), verify_output(out, "simulate", SERIES_CSV)?)),
    }
}

/// Simulates the configured channel and, when enabled, injects attacks.
/// Writes `clean.csv`, `series.csv` and `simulate.json`.
pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<SimulationMeta, CliError> {
    let profile = cfg
        .profile()
        .ok_or_else(|| CliError::Config("simulate needs input.profile".into()))?;
    ensure_dir(out)?;
    let clean = simulate_qber_series(&profile, cfg.input.n, derive_seed(cfg.seed, &[SEED_CHANNEL]))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (series, events) = if cfg.attack.enabled {
        let (s, onsets) = inject_trojan_attacks(&clean, &cfg.attack.spec(), derive_seed(cfg.seed, &[SEED_ATTACK]))
            .map_err(|e| CliError::Config(e.to_string()))?;
        (s, onsets.len())
    } else {
        (clean.clone(), 0)
    };
    save_qber_csv(&clean, out.join(CLEAN_CSV), true).map_err(CliError::data)?;
    save_qber_csv(&series, out.join(SERIES_CSV), true).map_err(CliError::data)?;
    let meta = SimulationMeta {
        seed: cfg.seed,
        n: cfg.input.n,
        profile,
        attack: cfg.attack.enabled.then(|| cfg.attack.spec()),
        attack_events: events,
        attacked_samples: series.samples().iter().filter(|s| s.attack_label == Some(true)).count(),
    };
    write_json(&out.join(SIMULATE_JSON), &meta)?;

    let mut m = Manifest::new("simulate", cfg.seed, &cfg.to_toml());
    for name in [CLEAN_CSV, SERIES_CSV, SIMULATE_JSON] {
        m.record_output(out, name)?;
    }
    m.write(out)?;
    Ok(meta)
}

/// Groups the baseline's training folds into categories. Writes
/// `categories.json`, the per-fold P-value table and the per-category fit
/// table.
pub fn train(cfg: &PipelineConfig, out: &Path) -> Result<CategorySet, CliError> {
    let (path, hash) = baseline(cfg, out)?;
    ensure_dir(out)?;
    let series = load_series(&path)?;
    let params = cfg.learner.params()?;
    let folds = partition_indices(series.n(), cfg.learner.k, cfg.learner.fold_mode).map_err(CliError::data)?;
    let values = series.qber_values();
    let set =
        algorithm2_train(&values, &folds, &params, derive_seed(cfg.seed, &[SEED_TRAIN])).map_err(CliError::data)?;

    write_json(&out.join(CATEGORIES_JSON), &set)?;
    let mut t = String::from("fold,category,founded,c,p_value\n");
    for o in &set.training_folds {
        for (c, p) in &o.scores {
            writeln!(t, "{},{},{},{},{}", o.fold, o.category, u8::from(o.founded), c, num(*p)).unwrap();
        }
    }
    write_text(&out.join(TRAIN_PVALUES_CSV), &t)?;
    let mut f = String::from("category,c,p_value,aic\n");
    for r in fit_rows(&set) {
        writeln!(f, "{},{},{},{}", r.category, r.c, num(r.p_value), num(r.aic)).unwrap();
    }
    write_text(&out.join(TRAIN_FITS_CSV), &f)?;

    let mut m = Manifest::new("train", cfg.seed, &cfg.to_toml());
    m.inputs.insert("baseline".into(), hash);
    for name in [CATEGORIES_JSON, TRAIN_PVALUES_CSV, TRAIN_FITS_CSV] {
        m.record_output(out, name)?;
    }
    m.write(out)?;
    Ok(set)
}

fn cv_table(reports: &[CvReport]) -> String {
    let mut t = String::from("fold,category,c,p_value,aic,is_best\n");
    for r in reports {
        for row in &r.rows {
            let best = row.p_value == r.best_p_value && row.c == r.best_c;
            let (p, aic) = (num(row.p_value), num(row.aic));
            writeln!(t, "{},{},{},{p},{aic},{}", r.fold, row.category, row.c, u8::from(best)).unwrap();
        }
    }
    t
}

/// Cross-validation results for the configured range and, when requested,
/// the comparison range.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub reports: Vec<CvReport>,
    pub compare: Option<Vec<CvReport>>,
}

/// k-fold cross-validation on the baseline: training then placement and
/// refinement of the held-out fold. Writes `cv.json` and `cv_pvalues.csv`.
pub fn test(cfg: &PipelineConfig, out: &Path) -> Result<CvOutcome, CliError> {
    let (path, hash) = baseline(cfg, out)?;
    ensure_dir(out)?;
    let values = load_series(&path)?.qber_values();
    let layout = cfg.cv.layout(cfg.learner.fold_mode);
    let params = cfg.learner.params()?;
    let seed = derive_seed(cfg.seed, &[SEED_CV]);
    let reports = cross_validate(&values, &layout, &params, seed).map_err(CliError::data)?;
    write_json(&out.join(CV_JSON), &reports)?;
    write_text(&out.join(CV_PVALUES_CSV), &cv_table(&reports))?;

    let mut m = Manifest::new("test", cfg.seed, &cfg.to_toml());
    m.inputs.insert("baseline".into(), hash);
    m.record_output(out, CV_JSON)?;
    m.record_output(out, CV_PVALUES_CSV)?;

    let compare = match cfg.cv.compare_c_range {
        Some([lo, hi]) => {
            let mut alt = params;
            alt.c_range = ClusterRange::new(lo, hi).map_err(|e| CliError::Config(e.to_string()))?;
            // Same seed, so both ranges see identical folds.
            let r = cross_validate(&values, &layout, &alt, seed).map_err(CliError::data)?;
            write_json(&out.join(CV_COMPARE_JSON), &r)?;
            write_text(&out.join(CV_COMPARE_CSV), &cv_table(&r))?;
            m.record_output(out, CV_COMPARE_JSON)?;
            m.record_output(out, CV_COMPARE_CSV)?;
            Some(r)
        }
        None => None,
    };
    m.write(out)?;
    Ok(CvOutcome { reports, compare })
}

/// Scores the evaluated series window by window against the trained
/// categories. Writes `risk_report.json` and `risk_windows.csv`.
pub fn risk(cfg: &PipelineConfig, out: &Path) -> Result<RiskReport, CliError> {
    let categories_hash = verify_output(out, "train", CATEGORIES_JSON)?;
    let (_, baseline_hash) = baseline(cfg, out)?;
    let train_manifest = Manifest::read(out, "train")?;
    if train_manifest.inputs.get("baseline") != Some(&baseline_hash) {
        return Err(CliError::Data(
            "categories.json was trained on a different baseline; rerun `train`".into(),
        ));
    }
    let trained: CategorySet = read_json(&out.join(CATEGORIES_JSON))?;
    let (eval_path, eval_hash) = evaluated(cfg, out)?;
    let series = load_series(&eval_path)?;
    let values = series.qber_values();
    let n = values.len();
    let labels: Option<Vec<bool>> = series.has_labels().then(|| {
        series
            .samples()
            .iter()
            .map(|s| s.attack_label.unwrap_or(false))
            .collect()
    });

    let params = cfg.learner.params()?;
    if n < params.c_range.max {
        return Err(CliError::Data(format!("series has {n} samples, fewer than c_max")));
    }
    let windows = if n >= cfg.learner.window {
        FoldSet::windows(n, cfg.learner.window)
    } else {
        FoldSet::whole(n)
    };
    let gates = calibrate_gates(&trained, &cfg.risk).map_err(CliError::data)?;
    let fits = fit_windows(
        &values,
        &windows,
        &trained,
        &params,
        derive_seed(cfg.seed, &[SEED_WINDOWS]),
    )
    .map_err(CliError::data)?;
    let weights = simulated_sample_weights(n, &cfg.risk.weighting, derive_seed(cfg.seed, &[SEED_WEIGHTS]));
    let inputs = RiskInputs {
        values: &values,
        labels: labels.as_deref(),
        windows: &fits,
        trained: &trained,
        gates: &gates,
        weights: &weights,
    };
    let report = evaluate_risk(&inputs, &cfg.risk).map_err(CliError::data)?;

    write_json(&out.join(RISK_REPORT_JSON), &report)?;
    let file = fs::File::create(out.join(RISK_WINDOWS_CSV)).map_err(CliError::data)?;
    let mut w = BufWriter::new(file);
    write_windows_csv(&report, &mut w)
        .and_then(|_| w.flush())
        .map_err(CliError::data)?;

    let mut m = Manifest::new("risk", cfg.seed, &cfg.to_toml());
    m.inputs.insert("categories".into(), categories_hash);
    m.inputs.insert("baseline".into(), baseline_hash);
    m.inputs.insert("series".into(), eval_hash);
    m.record_output(out, RISK_REPORT_JSON)?;
    m.record_output(out, RISK_WINDOWS_CSV)?;
    m.write(out)?;
    Ok(report)
}

/// Headline numbers of one run, as compared across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDigest {
    pub label: String,
    pub p_v: f64,
    pub p_r: f64,
    pub mean_gamma: f64,
    pub r_eps: f64,
    pub r_ref: f64,
    pub trusted: bool,
}

impl RunDigest {
    fn of(label: &str, r: &RiskReport) -> Self {
        RunDigest {
            label: label.to_string(),
            p_v: r.p_v,
            p_r: r.p_r,
            mean_gamma: r.mean_gamma,
            r_eps: r.r_eps,
            r_ref: r.r_ref,
            trusted: r.trusted,
        }
    }
}

fn load_report(dir: &Path) -> Result<RiskReport, CliError> {
    verify_output(dir, "risk", RISK_REPORT_JSON)?;
    read_json(&dir.join(RISK_REPORT_JSON))
}

/// Renders the human-readable summary of a run.
pub fn summarize(report: &RiskReport, categories: Option<&CategorySet>, sim: Option<&SimulationMeta>) -> String {
    let mut s = String::new();
    let verdict = if report.trusted { "TRUSTED" } else { "NOT TRUSTED" };
    writeln!(
        s,
        "trust verdict: {verdict} (R_eps = {:.6e}, R_ref = {:.6e})",
        report.r_eps, report.r_ref
    )
    .unwrap();
    writeln!(
        s,
        "P(V) = {:.6}  P(R) = {:.6}  P(fit) = {:.6}",
        report.p_v, report.p_r, report.fit_probability
    )
    .unwrap();
    writeln!(
        s,
        "mean gamma = {:.6e}  mean eta = {:.6e}",
        report.mean_gamma, report.mean_eta
    )
    .unwrap();
    writeln!(
        s,
        "detection bound: tau_upper = {:.6}  tau_empirical = {:.6}  Psi_lower = {:.6}",
        report.tau_upper, report.tau_empirical, report.psi_lower
    )
    .unwrap();
    let flagged = report.per_window.iter().filter(|w| w.flagged).count();
    writeln!(
        s,
        "windows: {} ({flagged} flagged), gate mode {:?}",
        report.per_window.len(),
        report.gate_mode
    )
    .unwrap();
    if let Some(c) = categories {
        writeln!(s, "categories: {}", c.h()).unwrap();
    }
    if let Some(m) = sim {
        writeln!(
            s,
            "simulation: profile {} n = {} seed = {} attack events = {}",
            m.profile.name, m.n, m.seed, m.attack_events
        )
        .unwrap();
    }
    if let Some(c) = &report.detection {
        writeln!(
            s,
            "flagged windows vs labelled attacks: TP = {} FP = {} FN = {} TN = {} (events = {})",
            c.true_positive, c.false_positive, c.false_negative, c.true_negative, c.attack_events
        )
        .unwrap();
        match c.recall() {
            Some(r) => writeln!(s, "window recall = {r:.4}").unwrap(),
            None => writeln!(s, "window recall = n/a (no attacked windows)").unwrap(),
        }
    }
    s
}

pub fn comparison_table(runs: &[RunDigest]) -> String {
    let mut s = String::from("run\tP(V)\tP(R)\tmean_gamma\tR_eps\tR_ref\ttrusted\n");
    for r in runs {
        writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6e}\t{:.6e}\t{:.6e}\t{}",
            r.label, r.p_v, r.p_r, r.mean_gamma, r.r_eps, r.r_ref, r.trusted
        )
        .unwrap();
    }
    s
}

/// Writes `summary.txt` and `beta.csv` for the run in `dir`, optionally
/// comparing against another run directory. Returns the summary text.
pub fn report(dir: &Path, compare: Option<&Path>) -> Result<String, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!(
            "run directory {} does not exist",
            dir.display()
        )));
    }
    let risk = load_report(dir)?;
    let categories: Option<CategorySet> = verify_output(dir, "train", CATEGORIES_JSON)
        .ok()
        .map(|_| read_json(&dir.join(CATEGORIES_JSON)))
        .transpose()?;
    let sim: Option<SimulationMeta> = verify_output(dir, "simulate", SIMULATE_JSON)
        .ok()
        .map(|_| read_json(&dir.join(SIMULATE_JSON)))
        .transpose()?;
    let mut text = summarize(&risk, categories.as_ref(), sim.as_ref());
    if let Some(other) = compare {
        let theirs = load_report(other)?;
        text.push('\n');
        text.push_str(&comparison_table(&[
            RunDigest::of(&dir.display().to_string(), &risk),
            RunDigest::of(&other.display().to_string(), &theirs),
        ]));
    }
    write_text(&dir.join(SUMMARY_TXT), &text)?;
    let mut b = String::from("window_index,start,end,beta,flag\n");
    for (w, beta) in risk.per_window.iter().zip(&risk.beta) {
        writeln!(
            b,
            "{},{},{},{},{}",
            w.window,
            w.start,
            w.end,
            num(*beta),
            u8::from(w.flagged)
        )
        .unwrap();
    }
    write_text(&dir.join(BETA_CSV), &b)?;
    Ok(text)
}

/// Runs every stage in order: `simulate` (for simulated input), `train`,
/// `test`, `risk` and `report`.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<RiskReport, CliError> {
    cfg.validate()?;
    if cfg.input.profile.is_some() {
        simulate(cfg, out)?;
    }
    train(cfg, out)?;
    test(cfg, out)?;
    let r = risk(cfg, out)?;
    report(out, None)?;
    Ok(r)
}
