//! Posterior eavesdropping probabilities, Bayes gates and the empirical risk
//! pipeline.
//!
//! Every window of an evaluated series carries its own mixture fit. From it
//! the window's posteriors are computed:
//!
//! - `δ_Eve = δ_var = P(ε̂ > ρ) · confidence`
//! - `η = P(ε̂ > ε_min) · confidence`
//!
//! where confidence is the fit's KS P-value. A window is flagged when
//! `η > α`. The flagged fractions under the eavesdropping gate `α` and the
//! time-variance gate `α_1m` give `P(V)` and `P(R)`, which combine with the
//! posteriors into the per-window loss `γ`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::format_float;
use crate::gmm::GmmModel;
use crate::learner::{Category, CategorySet, WindowFit};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("invalid risk configuration: {0}")]
    Config(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no windows to evaluate")]
    Empty,
    #[error("detection margin must be positive, got {0}")]
    NonPositiveMargin(f64),
    #[error("baseline has no categories")]
    EmptyBaseline,
    #[error("category {0} has no gate")]
    MissingGate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// One gate for every category.
    #[default]
    Constant,
    /// Each category uses its own calibrated gate.
    PerCategory,
}

/// How the eavesdropping posterior integrates the fitted density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    /// Mass above `ε_min`.
    #[default]
    Threshold,
    /// Mass above an attack QBER drawn uniformly from `[ε_min, ε_max]`.
    UniformAttack,
    /// Per-sample mass above `max(ε_j, ε_min)`, averaged over the window.
    PerSample,
}

/// Key-consumption risk weighting: each epoch's weight is the average of
/// `m_draws` normal draws whose mean is uniform on `[mean_low, mean_high]`
/// and whose standard deviation equals that mean. Draws are clamped to
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskWeightSpec {
    pub mean_low: f64,
    pub mean_high: f64,
    pub m_draws: usize,
}

impl Default for RiskWeightSpec {
    fn default() -> Self {
        RiskWeightSpec {
            mean_low: 0.5,
            mean_high: 1.0,
            m_draws: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    /// QBER above which decoding fails before privacy amplification.
    pub rho: f64,
    pub varsigma: f64,
    pub gate_mode: GateMode,
    /// Fixed eavesdropping gate; calibrated from the baseline when absent.
    pub alpha_const: Option<f64>,
    /// Time-variance gate.
    pub alpha_1m: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Detection margin for the Markov bound.
    pub varphi: f64,
    pub weighting: RiskWeightSpec,
    #[serde(default)]
    pub eta_mode: EtaMode,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            rho: 0.05,
            varsigma: 0.95,
            gate_mode: GateMode::Constant,
            alpha_const: Some(0.002),
            alpha_1m: 0.00001,
            eps_min: 0.05,
            eps_max: 0.055,
            varphi: 0.01,
            weighting: RiskWeightSpec::default(),
            eta_mode: EtaMode::Threshold,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |m: &str| Err(RiskError::Config(m.to_string()));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(0.0 <= self.eps_min && self.eps_min <= self.eps_max && self.eps_max <= 1.0) {
            return bad("need 0 <= eps_min <= eps_max <= 1");
        }
        if !(self.varsigma > 0.0 && self.varsigma < 1.0) {
            return bad("varsigma must lie in (0, 1)");
        }
        if !(self.alpha_1m >= 0.0 && self.alpha_1m <= 1.0)
            || self.alpha_const.is_some_and(|a| !(0.0..=1.0).contains(&a))
        {
            return bad("gates must lie in [0, 1]");
        }
        if !(self.varphi > 0.0) {
            return bad("varphi must be positive");
        }
        let w = &self.weighting;
        if !(0.0 <= w.mean_low && w.mean_low <= w.mean_high) || w.m_draws == 0 {
            return bad("weighting needs 0 <= mean_low <= mean_high and m_draws >= 1");
        }
        Ok(())
    }
}

/// Fit-quality proxy for `P(ε = ε̂ | Q̂)`: the category's best KS P-value.
pub fn fit_confidence(category: &Category) -> f64 {
    category.best_p_value()
}

/// Share of samples held by each category, `N_i / N`.
pub fn category_weights(set: &CategorySet) -> Vec<f64> {
    let total: usize = set.categories.iter().map(|c| c.n_samples).sum();
    set.categories
        .iter()
        .map(|c| c.n_samples as f64 / total as f64)
        .collect()
}

/// Posterior of eavesdropping: tail mass above `rho` times fit confidence.
pub fn delta_eve(model: &GmmModel, confidence: f64, rho: f64) -> f64 {
    model.tail(rho) * confidence
}

/// Posterior of time variation. Same form as [`delta_eve`]; the two differ
/// only through the gates that estimate `P(V)` and `P(R)`.
pub fn delta_var(model: &GmmModel, confidence: f64, rho: f64) -> f64 {
    model.tail(rho) * confidence
}

/// `η` of a fitted category at threshold `eps_min`.
pub fn eta_posterior(category: &Category, eps_min: f64) -> f64 {
    eta_threshold(&category.best().model, fit_confidence(category), eps_min)
}

pub fn eta_threshold(model: &GmmModel, confidence: f64, eps_min: f64) -> f64 {
    confidence * model.tail(eps_min)
}

/// `η` averaged over an attack QBER uniform on `[eps_min, eps_max]`
/// (composite Simpson rule).
pub fn eta_uniform_attack(model: &GmmModel, confidence: f64, eps_min: f64, eps_max: f64) -> f64 {
    if eps_max <= eps_min {
        return eta_threshold(model, confidence, eps_min);
    }
    const INTERVALS: usize = 64;
    let h = (eps_max - eps_min) / INTERVALS as f64;
    let mut acc = model.tail(eps_min) + model.tail(eps_max);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * model.tail(eps_min + i as f64 * h);
    }
    confidence * acc * h / 3.0 / (eps_max - eps_min)
}

/// Mean over the window of `confidence · P(ε̂ > max(ε_j, eps_min))`.
pub fn eta_per_sample(model: &GmmModel, confidence: f64, eps_min: f64, window: &[f64]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let s: f64 = window.iter().map(|&e| model.tail(e.max(eps_min))).sum();
    confidence * s / window.len() as f64
}

/// Calibrated defense gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSet {
    /// One gate per category, indexed by category id.
    pub alpha_per_category: Vec<f64>,
    pub alpha_const: f64,
    pub alpha_1m: f64,
}

impl GateSet {
    pub fn gate(&self, mode: GateMode, category: usize) -> Result<f64, RiskError> {
        match mode {
            GateMode::Constant => Ok(self.alpha_const),
            GateMode::PerCategory => self
                .alpha_per_category
                .get(category)
                .copied()
                .ok_or(RiskError::MissingGate(category)),
        }
    }
}

/// Gates from an attack-free baseline: each category's gate is its
/// time-variance posterior. The constant gate is `config.alpha_const` when
/// set, else the largest per-category gate.
pub fn calibrate_gates(baseline: &CategorySet, config: &RiskConfig) -> Result<GateSet, RiskError> {
    if baseline.categories.is_empty() {
        return Err(RiskError::EmptyBaseline);
    }
    let alpha_per_category: Vec<f64> = baseline
        .categories
        .iter()
        .map(|c| delta_var(&c.best().model, fit_confidence(c), config.rho).clamp(0.0, 1.0))
        .collect();
    let alpha_const = config
        .alpha_const
        .unwrap_or_else(|| alpha_per_category.iter().copied().fold(0.0, f64::max));
    Ok(GateSet {
        alpha_per_category,
        alpha_const,
        alpha_1m: config.alpha_1m,
    })
}

/// Bayes decision: raise an alarm iff `eta > gate`. Ties do not alarm.
pub fn bayes_classify(eta: f64, gate: f64) -> bool {
    eta > gate
}

/// A window ready for rate estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedWindow {
    pub eta: f64,
    /// Eavesdropping gate that applies to the window.
    pub gate: f64,
    /// Samples the window stands for.
    pub n_samples: usize,
}

/// Sample-weighted alarm fractions under the eavesdropping gate (`P(V)`) and
/// under the time-variance gate `alpha_1m` (`P(R)`).
pub fn estimate_pv_pr(windows: &[ClassifiedWindow], alpha_1m: f64) -> Result<(f64, f64), RiskError> {
    let total: usize = windows.iter().map(|w| w.n_samples).sum();
    if total == 0 {
        return Err(RiskError::Empty);
    }
    let (mut v, mut r) = (0usize, 0usize);
    for w in windows {
        if bayes_classify(w.eta, w.gate) {
            v += w.n_samples;
        }
        if bayes_classify(w.eta, alpha_1m) {
            r += w.n_samples;
        }
    }
    Ok((v as f64 / total as f64, r as f64 / total as f64))
}

/// `γ = [δ_Eve P(V) + δ_var P(R) − δ_Eve δ_var P(V)] · fit`.
pub fn risk_loss_gamma(delta_eve: f64, delta_var: f64, p_v: f64, p_r: f64, fit: f64) -> f64 {
    (delta_eve * p_v + delta_var * p_r - delta_eve * delta_var * p_v) * fit
}

/// Weighted empirical risk `(1/N) Σ H_j γ_j`.
pub fn risk_measure(gamma: &[f64], weights: &[f64]) -> Result<f64, RiskError> {
    if gamma.len() != weights.len() {
        return Err(RiskError::LengthMismatch(gamma.len(), weights.len()));
    }
    if gamma.is_empty() {
        return Err(RiskError::Empty);
    }
    let s: f64 = gamma.iter().zip(weights).map(|(g, h)| g * h).sum();
    Ok(s / gamma.len() as f64)
}

/// Risk reference `(1/N) Σ (1 − γ_j) γ_j`; at most 1/4.
pub fn risk_reference(gamma: &[f64]) -> f64 {
    if gamma.is_empty() {
        return 0.0;
    }
    gamma.iter().map(|g| (1.0 - g) * g).sum::<f64>() / gamma.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionRate {
    /// `γ × 100`, clamped to `[0, 100]`.
    pub percent: f64,
    /// `γ` was outside the open interval `(0, 1)`.
    pub boundary: bool,
}

pub fn risk_reduction_rate(gamma: f64) -> ReductionRate {
    ReductionRate {
        percent: (gamma * 100.0).clamp(0.0, 100.0),
        boundary: !(gamma > 0.0 && gamma < 1.0),
    }
}

/// Trust condition: the weighted risk does not exceed the reference.
pub fn trust_check(r_eps: f64, r_ref: f64) -> bool {
    r_eps <= r_ref
}

/// Markov-style bound on classifier ambiguity and the derived detection
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBound {
    /// Mean of `max(η − α, 0)`.
    pub e_plus: f64,
    /// Mean of `max(α − η, 0)`.
    pub e_minus: f64,
    /// `(e_plus + e_minus) / φ`, unclamped.
    pub tau_upper: f64,
    /// Fraction of windows with `|η − α| < φ`.
    pub tau_empirical: f64,
    /// `1 − min(τ_upper, 1) (1 − ς) / 2`.
    pub psi_lower: f64,
}

pub fn eve_detection_bound(
    etas: &[f64],
    gates: &[f64],
    varsigma: f64,
    varphi: f64,
) -> Result<DetectionBound, RiskError> {
    if !(varphi > 0.0) {
        return Err(RiskError::NonPositiveMargin(varphi));
    }
    if etas.len() != gates.len() {
        return Err(RiskError::LengthMismatch(etas.len(), gates.len()));
    }
    if etas.is_empty() {
        return Err(RiskError::Empty);
    }
    let n = etas.len() as f64;
    let (mut plus, mut minus, mut close) = (0.0, 0.0, 0usize);
    for (&eta, &alpha) in etas.iter().zip(gates) {
        plus += (eta - alpha).max(0.0);
        minus += (alpha - eta).max(0.0);
        if (eta - alpha).abs() < varphi {
            close += 1;
        }
    }
    let (e_plus, e_minus) = (plus / n, minus / n);
    let tau_upper = (e_plus + e_minus) / varphi;
    Ok(DetectionBound {
        e_plus,
        e_minus,
        tau_upper,
        tau_empirical: close as f64 / n,
        psi_lower: 1.0 - tau_upper.clamp(0.0, 1.0) * (1.0 - varsigma) / 2.0,
    })
}

/// One epoch weight: the mean of `m_draws` clamped `N(mean, mean²)` draws.
pub fn epoch_weight<R: Rng + ?Sized>(mean: f64, m_draws: usize, rng: &mut R) -> f64 {
    let m_draws = m_draws.max(1);
    if !(mean > 0.0) {
        return 0.0;
    }
    let normal = Normal::new(mean, mean).expect("positive standard deviation");
    let s: f64 = (0..m_draws).map(|_| normal.sample(rng).clamp(0.0, 1.0)).sum();
    s / m_draws as f64
}

/// Simulated per-epoch risk weights `H_Mj`.
pub fn sample_risk_weights(n_epochs: usize, spec: &RiskWeightSpec, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n_epochs)
        .map(|_| {
            let mean = if spec.mean_high > spec.mean_low {
                rng.random_range(spec.mean_low..=spec.mean_high)
            } else {
                spec.mean_low
            };
            epoch_weight(mean, spec.m_draws, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRisk {
    pub window: usize,
    pub start: usize,
    pub end: usize,
    pub category: usize,
    pub fit_p: f64,
    pub eta: f64,
    pub delta_eve: f64,
    pub delta_var: f64,
    pub gate: f64,
    pub gamma: f64,
    pub flagged: bool,
    /// Labelled attack samples in the window, when ground truth exists.
    pub attack_samples: Option<usize>,
}

/// Window-level agreement between alarms and labelled attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub attack_events: usize,
}

impl Confusion {
    pub fn recall(&self) -> Option<f64> {
        let p = self.true_positive + self.false_negative;
        (p > 0).then(|| self.true_positive as f64 / p as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub per_window: Vec<WindowRisk>,
    pub p_v: f64,
    pub p_r: f64,
    /// `P(Q̂ = λ)`: category confidences weighted by sample share.
    pub fit_probability: f64,
    pub r_eps: f64,
    pub r_ref: f64,
    /// Per-window risk reduction rate in percent.
    pub beta: Vec<f64>,
    pub mean_gamma: f64,
    pub mean_eta: f64,
    pub trusted: bool,
    pub tau_upper: f64,
    pub tau_empirical: f64,
    pub psi_lower: f64,
    pub gates: GateSet,
    pub gate_mode: GateMode,
    pub detection: Option<Confusion>,
}

/// Inputs of [`evaluate_risk`] besides the configuration.
pub struct RiskInputs<'a> {
    /// QBER values of the evaluated series.
    pub values: &'a [f64],
    /// Ground-truth attack labels, aligned with `values`.
    pub labels: Option<&'a [bool]>,
    pub windows: &'a [WindowFit],
    /// Categories the windows were placed into.
    pub trained: &'a CategorySet,
    pub gates: &'a GateSet,
    /// Per-sample risk weights, aligned with `values`.
    pub weights: &'a [f64],
}

/// Runs the risk pipeline over fitted windows.
pub fn evaluate_risk(inputs: &RiskInputs<'_>, config: &RiskConfig) -> Result<RiskReport, RiskError> {
    config.validate()?;
    let n = inputs.values.len();
    if inputs.windows.is_empty() || n == 0 {
        return Err(RiskError::Empty);
    }
    if inputs.weights.len() != n {
        return Err(RiskError::LengthMismatch(n, inputs.weights.len()));
    }
    if let Some(labels) = inputs.labels {
        if labels.len() != n {
            return Err(RiskError::LengthMismatch(n, labels.len()));
        }
    }

    let mut rows = Vec::with_capacity(inputs.windows.len());
    for w in inputs.windows {
        let model = &w.fit.model;
        let conf = w.fit.p_value;
        let eta = match config.eta_mode {
            EtaMode::Threshold => eta_threshold(model, conf, config.eps_min),
            EtaMode::UniformAttack => eta_uniform_attack(model, conf, config.eps_min, config.eps_max),
            EtaMode::PerSample => eta_per_sample(model, conf, config.eps_min, &inputs.values[w.start..w.end]),
        };
        let gate = inputs.gates.gate(config.gate_mode, w.category)?;
        rows.push(WindowRisk {
            window: w.window,
            start: w.start,
            end: w.end,
            category: w.category,
            fit_p: conf,
            eta,
            delta_eve: delta_eve(model, conf, config.rho),
            delta_var: delta_var(model, conf, config.rho),
            gate,
            gamma: 0.0,
            flagged: bayes_classify(eta, gate),
            attack_samples: inputs.labels.map(|l| l[w.start..w.end].iter().filter(|&&a| a).count()),
        });
    }

    let classified: Vec<ClassifiedWindow> = rows
        .iter()
        .map(|r| ClassifiedWindow {
            eta: r.eta,
            gate: r.gate,
            n_samples: r.end - r.start,
        })
        .collect();
    let (p_v, p_r) = estimate_pv_pr(&classified, inputs.gates.alpha_1m)?;

    // P(Q̂ = λ) = Σ_i P(Q̂ | λ_i) N_i / N over the evaluated windows.
    let covered: usize = rows.iter().map(|r| r.end - r.start).sum();
    let fit_probability = rows
        .iter()
        .map(|r| fit_confidence(&inputs.trained.categories[r.category]) * (r.end - r.start) as f64)
        .sum::<f64>()
        / covered as f64;

    for r in &mut rows {
        r.gamma = risk_loss_gamma(r.delta_eve, r.delta_var, p_v, p_r, fit_probability);
    }

    let mut gamma_samples = vec![0.0; n];
    for r in &rows {
        gamma_samples[r.start..r.end].fill(r.gamma);
    }
    let r_eps = risk_measure(&gamma_samples, inputs.weights)?;
    let r_ref = risk_reference(&gamma_samples);

    let etas: Vec<f64> = rows.iter().map(|r| r.eta).collect();
    let gates: Vec<f64> = rows.iter().map(|r| r.gate).collect();
    let bound = eve_detection_bound(&etas, &gates, config.varsigma, config.varphi)?;

    let detection = inputs.labels.map(|labels| confusion(&rows, labels));
    let nw = rows.len() as f64;
    Ok(RiskReport {
        beta: rows.iter().map(|r| risk_reduction_rate(r.gamma).percent).collect(),
        mean_gamma: rows.iter().map(|r| r.gamma).sum::<f64>() / nw,
        mean_eta: etas.iter().sum::<f64>() / nw,
        per_window: rows,
        p_v,
        p_r,
        fit_probability,
        r_eps,
        r_ref,
        trusted: trust_check(r_eps, r_ref),
        tau_upper: bound.tau_upper,
        tau_empirical: bound.tau_empirical,
        psi_lower: bound.psi_lower,
        gates: inputs.gates.clone(),
        gate_mode: config.gate_mode,
        detection,
    })
}

fn confusion(rows: &[WindowRisk], labels: &[bool]) -> Confusion {
    let mut c = Confusion {
        attack_events: labels
            .iter()
            .enumerate()
            .filter(|&(i, &a)| a && (i == 0 || !labels[i - 1]))
            .count(),
        ..Confusion::default()
    };
    for r in rows {
        let attacked = r.attack_samples.unwrap_or(0) > 0;
        match (r.flagged, attacked) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_positive += 1,
            (false, true) => c.false_negative += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    c
}

/// Per-window series as CSV: `window_index,category,eta,gamma,flag`.
pub fn write_windows_csv<W: Write>(report: &RiskReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "window_index,category,eta,gamma,flag")?;
    for r in &report.per_window {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.window,
            r.category,
            format_float(r.eta),
            format_float(r.gamma),
            u8::from(r.flagged)
        )?;
    }
    Ok(())
}

/// Weights for each sample of a series: one simulated weight per sample.
pub fn simulated_sample_weights(n: usize, spec: &RiskWeightSpec, seed: u64) -> Vec<f64> {
    sample_risk_weights(n, spec, derive_seed(seed, &[0x48]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gamma_cases() {
        assert_eq!(risk_loss_gamma(0.3, 0.2, 0.0, 0.0, 0.9), 0.0);
        assert_eq!(risk_loss_gamma(1.0, 1.0, 1.0, 1.0, 1.0), 1.0);
        // 0.95 · (0.15·0.02 + 0.01·0.5 − 0.15·0.01·0.02) = 0.95 · 0.00797
        assert_abs_diff_eq!(
            risk_loss_gamma(0.15, 0.01, 0.02, 0.5, 0.95),
            0.007_571_5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn measure_cases() {
        assert_abs_diff_eq!(risk_measure(&[0.1, 0.3], &[1.0, 1.0]).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(risk_measure(&[0.0, 0.0], &[0.7, 0.2]).unwrap(), 0.0);
        assert_abs_diff_eq!(risk_measure(&[0.1, 0.3], &[0.5, 1.0]).unwrap(), 0.175, epsilon = 1e-15);
        assert_eq!(risk_measure(&[0.1], &[0.5, 1.0]), Err(RiskError::LengthMismatch(1, 2)));
    }

    #[test]
    fn reference_cases() {
        assert_eq!(risk_reference(&[0.5; 7]), 0.25);
        assert_eq!(risk_reference(&[0.0, 1.0]), 0.0);
        assert_abs_diff_eq!(risk_reference(&[0.2, 0.4]), 0.20, epsilon = 1e-15);
    }

    #[test]
    fn reduction_rate_cases() {
        assert_eq!(risk_reduction_rate(0.5).percent, 50.0);
        assert_abs_diff_eq!(risk_reduction_rate(0.01).percent, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(risk_reduction_rate(0.999).percent, 99.9, epsilon = 1e-12);
        assert!(!risk_reduction_rate(0.5).boundary);
        let r = risk_reduction_rate(1.2);
        assert!(r.boundary);
        assert_eq!(r.percent, 100.0);
    }

    #[test]
    fn trust_cases() {
        assert!(trust_check(0.1, 0.1));
        let g = [0.6; 4];
        let r_eps = risk_measure(&g, &[1.0; 4]).unwrap();
        assert!(!trust_check(r_eps, risk_reference(&g)));
        let h: Vec<f64> = g.iter().map(|x| 1.0 - x).collect();
        assert!(trust_check(risk_measure(&g, &h).unwrap(), risk_reference(&g)));
    }

    #[test]
    fn classifier_cases() {
        assert!(bayes_classify(0.3, 0.2));
        assert!(!bayes_classify(0.1, 0.2));
        assert!(!bayes_classify(0.2, 0.2));
    }

    #[test]
    fn rates() {
        let w = |eta| ClassifiedWindow {
            eta,
            gate: 0.5,
            n_samples: 10,
        };
        assert_eq!(estimate_pv_pr(&[w(0.1), w(0.2)], 0.6).unwrap(), (0.0, 0.0));
        assert_eq!(estimate_pv_pr(&[w(0.1), w(0.2)], 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(estimate_pv_pr(&[], 0.0), Err(RiskError::Empty));
    }

    #[test]
    fn bound_cases() {
        let b = eve_detection_bound(&[0.002; 5], &[0.002; 5], 0.95, 0.01).unwrap();
        assert_eq!(b.tau_upper, 0.0);
        assert_eq!(b.psi_lower, 1.0);
        assert!(eve_detection_bound(&[0.1], &[0.1], 0.95, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RiskConfig::default().validate().is_ok());
        let bad = RiskConfig {
            rho: 1.0,
            ..RiskConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RiskConfig {
            eps_min: 0.06,
            ..RiskConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn weights_are_deterministic_and_bounded() {
        let spec = RiskWeightSpec::default();
        let a = sample_risk_weights(500, &spec, 3);
        assert_eq!(a, sample_risk_weights(500, &spec, 3));
        assert!(a.iter().all(|h| (0.0..=1.0).contains(h)));
    }
}
