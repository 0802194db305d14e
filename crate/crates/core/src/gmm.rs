//! One-dimensional Gaussian mixtures: density, tail mass, sampling, EM and AIC.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from_seed;

/// Lower bound applied to every variance in the M-step.
pub const VARIANCE_FLOOR: f64 = 1e-10;
/// EM stops once the log-likelihood gain drops below this.
pub const EM_TOLERANCE: f64 = 1e-8;
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("invalid mixture: {0}")]
    InvalidModel(String),
    #[error("need at least {c} points to fit {c} components, got {n}")]
    TooFewPoints { n: usize, c: usize },
    #[error("data contains a non-finite value")]
    NonFinite,
    #[error("all {n} points are identical; cannot fit {c} components")]
    Degenerate { n: usize, c: usize },
    #[error("initial model has {got} components, expected {expected}")]
    InitMismatch { expected: usize, got: usize },
}

#[derive(Deserialize)]
struct RawGmm {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl TryFrom<RawGmm> for GmmModel {
    type Error = GmmError;
    fn try_from(raw: RawGmm) -> Result<Self, GmmError> {
        GmmModel::new(raw.weights, raw.means, raw.variances)
    }
}

/// A validated 1-D Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGmm")]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self, GmmError> {
        let c = weights.len();
        if c == 0 {
            return Err(GmmError::InvalidModel("no components".into()));
        }
        if means.len() != c || variances.len() != c {
            return Err(GmmError::InvalidModel(format!(
                "length mismatch: {} weights, {} means, {} variances",
                c,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GmmError::InvalidModel("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(GmmError::InvalidModel("non-finite mean".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(GmmError::InvalidModel("variances must be positive".into()));
        }
        Ok(GmmModel {
            weights,
            means,
            variances,
        })
    }

    /// Single Gaussian component.
    pub fn normal(mean: f64, variance: f64) -> Result<Self, GmmError> {
        GmmModel::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn c(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, &m), &v)| (w, m, v))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components().map(|(w, m, v)| w * normal_pdf(x, m, v)).sum()
    }

    /// Mass above `t`, i.e. `P(X > t)`, over the whole real line.
    pub fn tail(&self, t: f64) -> f64 {
        let p: f64 = self
            .components()
            .map(|(w, m, v)| w * normal_sf((t - m) / v.sqrt()))
            .sum();
        p.clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (1.0 - self.tail(x)).clamp(0.0, 1.0)
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        let terms = ComponentTerms::new(self);
        let mut buf = vec![0.0; self.c()];
        data.iter().map(|&x| terms.log_density(x, &mut buf)).sum()
    }

    /// Draws `n` values: a component by weight, then a normal draw.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut cumulative = Vec::with_capacity(self.c());
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let last = self.c() - 1;
        let sds: Vec<f64> = self.variances.iter().map(|v| v.sqrt()).collect();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cumulative.iter().position(|&cw| u < cw).unwrap_or(last);
                let z: f64 = StandardNormal.sample(rng);
                self.means[k] + sds[k] * z
            })
            .collect()
    }
}

/// Density of `N(mean, variance)` at `x`.
pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-d * d / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else if z == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(z / SQRT_2)
    }
}

pub fn gmm_pdf(model: &GmmModel, x: f64) -> f64 {
    model.pdf(x)
}

pub fn gmm_tail(model: &GmmModel, t: f64) -> f64 {
    model.tail(t)
}

pub fn gmm_sample(model: &GmmModel, n: usize, seed: u64) -> Vec<f64> {
    model.sample(n, seed)
}

/// Free parameters of a `c`-component mixture: `c` means, `c` variances and
/// `c - 1` independent weights.
pub fn free_parameters(c: usize) -> usize {
    3 * c - 1
}

/// Akaike information criterion, `2p - 2 log L`.
pub fn aic(model: &GmmModel, data: &[f64]) -> f64 {
    2.0 * free_parameters(model.c()) as f64 - 2.0 * model.log_likelihood(data)
}

/// Per-component constants of the log density.
struct ComponentTerms {
    log_norm: Vec<f64>,
    inv_two_var: Vec<f64>,
    means: Vec<f64>,
}

impl ComponentTerms {
    fn new(model: &GmmModel) -> Self {
        let log_norm = model
            .components()
            .map(|(w, _, v)| {
                if w > 0.0 {
                    w.ln() - 0.5 * (2.0 * PI * v).ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        ComponentTerms {
            log_norm,
            inv_two_var: model.variances.iter().map(|v| 0.5 / v).collect(),
            means: model.means.clone(),
        }
    }

    /// Writes `log(w_k N(x; μ_k, σ_k²))` into `out` and returns the log of
    /// their sum.
    fn log_density(&self, x: f64, out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for k in 0..out.len() {
            let d = x - self.means[k];
            let t = self.log_norm[k] - d * d * self.inv_two_var[k];
            out[k] = t;
            if t > max {
                max = t;
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let s: f64 = out.iter().map(|t| (t - max).exp()).sum();
        max + s.ln()
    }
}

/// Per-iteration EM bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Log-likelihood of the model entering each iteration, plus the final
    /// model's value.
    pub log_likelihoods: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl EmTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("trace is never empty")
    }

    /// Largest decrease between consecutive iterations (0 if monotone).
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihoods.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    /// k-means++ seeded means, uniform weights, pooled variance.
    Seed(u64),
    /// Start from an existing model with the target component count.
    Model(GmmModel),
}

fn validate_data(data: &[f64], c: usize) -> Result<(), GmmError> {
    if c == 0 {
        return Err(GmmError::InvalidModel("no components".into()));
    }
    if data.len() < c {
        return Err(GmmError::TooFewPoints { n: data.len(), c });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(GmmError::NonFinite);
    }
    if c > 1 && data.iter().all(|&x| x == data[0]) {
        return Err(GmmError::Degenerate { n: data.len(), c });
    }
    Ok(())
}

/// k-means++ seeding of `c` means from the data.
fn seeded_init(data: &[f64], c: usize, seed: u64) -> GmmModel {
    let mut rng = rng_from_seed(seed);
    let n = data.len();
    let mut centers = Vec::with_capacity(c);
    centers.push(data[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = data.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            data[pick]
        } else {
            data[rng.random_range(0..n)]
        };
        centers.push(next);
        for (d, &x) in d2.iter_mut().zip(data) {
            *d = d.min((x - next).powi(2));
        }
    }
    let pooled = (d2.iter().sum::<f64>() / n as f64).max(VARIANCE_FLOOR);
    GmmModel {
        weights: vec![1.0 / c as f64; c],
        means: centers,
        variances: vec![pooled; c],
    }
}

/// Fits a `c`-component mixture by expectation maximisation.
///
/// Iterates until `max_iter` M-steps have run or the log-likelihood gain
/// falls below [`EM_TOLERANCE`]. Variances are floored at [`VARIANCE_FLOOR`];
/// a component that loses all responsibility keeps its mean and variance
/// with zero weight.
pub fn em_fit(data: &[f64], c: usize, init: &EmInit, max_iter: usize) -> Result<(GmmModel, EmTrace), GmmError> {
    validate_data(data, c)?;
    let mut model = match init {
        EmInit::Seed(seed) => seeded_init(data, c, *seed),
        EmInit::Model(m) => {
            if m.c() != c {
                return Err(GmmError::InitMismatch {
                    expected: c,
                    got: m.c(),
                });
            }
            let mut m = m.clone();
            for v in &mut m.variances {
                *v = v.max(VARIANCE_FLOOR);
            }
            m
        }
    };

    let n = data.len();
    let mut resp = vec![0.0; n * c];
    let mut trace = EmTrace {
        log_likelihoods: Vec::with_capacity(max_iter + 1),
        iterations_run: 0,
        converged: false,
    };

    loop {
        let ll = e_step(&model, data, &mut resp);
        trace.log_likelihoods.push(ll);
        let len = trace.log_likelihoods.len();
        if len >= 2 && ll - trace.log_likelihoods[len - 2] < EM_TOLERANCE {
            trace.converged = true;
            break;
        }
        if trace.iterations_run == max_iter {
            break;
        }
        m_step(&mut model, data, &resp);
        trace.iterations_run += 1;
    }
    Ok((model, trace))
}

/// Fills `resp` (row-major, `n × c`) and returns the log-likelihood.
fn e_step(model: &GmmModel, data: &[f64], resp: &mut [f64]) -> f64 {
    let c = model.c();
    let terms = ComponentTerms::new(model);
    let mut ll = 0.0;
    for (x, row) in data.iter().zip(resp.chunks_exact_mut(c)) {
        let lse = terms.log_density(*x, row);
        ll += lse;
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
    }
    ll
}

fn m_step(model: &mut GmmModel, data: &[f64], resp: &[f64]) {
    let c = model.c();
    let n = data.len() as f64;
    let mut nk = vec![0.0; c];
    let mut sx = vec![0.0; c];
    for (x, row) in data.iter().zip(resp.chunks_exact(c)) {
        for k in 0..c {
            nk[k] += row[k];
            sx[k] += row[k] * x;
        }
    }
    for k in 0..c {
        if nk[k] > 0.0 {
            model.means[k] = sx[k] / nk[k];
        }
    }
    let mut sq = vec![0.0; c];
    for (x, row) in data.iter().zip(resp.chunks_exact(c)) {
        for k in 0..c {
            let d = x - model.means[k];
            sq[k] += row[k] * d * d;
        }
    }
    for k in 0..c {
        if nk[k] > 0.0 {
            model.variances[k] = (sq[k] / nk[k]).max(VARIANCE_FLOOR);
        }
        model.weights[k] = nk[k] / n;
    }
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_normal_peak() {
        let m = GmmModel::normal(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(m.pdf(0.0), 0.398_942_280_4, epsilon = 1e-10);
    }

    #[test]
    fn two_component_midpoint() {
        let m = GmmModel::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap();
        // exp(-1/2) / sqrt(2π)
        let oracle = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert_abs_diff_eq!(m.pdf(0.0), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(m.pdf(0.0), 0.241_970_724_5, epsilon = 1e-10);
    }

    #[test]
    fn tail_limits_and_symmetry() {
        let m = GmmModel::normal(0.02, 0.005f64.powi(2)).unwrap();
        assert_eq!(m.tail(f64::NEG_INFINITY), 1.0);
        assert_eq!(m.tail(f64::INFINITY), 0.0);
        assert_abs_diff_eq!(m.tail(-10.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.tail(0.02), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn model_validation() {
        assert!(GmmModel::new(vec![0.5, 0.4], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GmmModel::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(GmmModel::new(vec![], vec![], vec![]).is_err());
        assert!(GmmModel::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(GmmModel::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn degenerate_weights_sample_first_component() {
        let m = GmmModel::new(vec![1.0, 0.0], vec![0.01, 5.0], vec![1e-6, 1e-6]).unwrap();
        assert!(m.sample(2000, 3).iter().all(|&x| x < 1.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = GmmModel::new(vec![0.3, 0.7], vec![0.01, 0.04], vec![1e-6, 4e-6]).unwrap();
        assert_eq!(m.sample(100, 9), m.sample(100, 9));
        assert_ne!(m.sample(100, 9), m.sample(100, 10));
    }

    #[test]
    fn single_component_fit_is_moment_match() {
        let data = [0.011, 0.013, 0.02, 0.017, 0.009, 0.025, 0.018];
        let (m, trace) = em_fit(&data, 1, &EmInit::Seed(1), 100).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(m.means()[0], mean, epsilon = 1e-15);
        assert_abs_diff_eq!(m.variances()[0], var, epsilon = 1e-15);
        assert!(trace.converged);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            em_fit(&[0.1], 2, &EmInit::Seed(0), 10).unwrap_err(),
            GmmError::TooFewPoints { n: 1, c: 2 }
        );
        assert_eq!(
            em_fit(&[0.1; 5], 2, &EmInit::Seed(0), 10).unwrap_err(),
            GmmError::Degenerate { n: 5, c: 2 }
        );
        assert_eq!(
            em_fit(&[0.1, f64::NAN], 1, &EmInit::Seed(0), 10).unwrap_err(),
            GmmError::NonFinite
        );
        let init = EmInit::Model(GmmModel::normal(0.0, 1.0).unwrap());
        assert!(matches!(
            em_fit(&[0.1, 0.2, 0.3], 2, &init, 10),
            Err(GmmError::InitMismatch { .. })
        ));
    }

    #[test]
    fn identical_data_single_component_hits_floor() {
        let (m, _) = em_fit(&[0.02; 10], 1, &EmInit::Seed(0), 10).unwrap();
        assert_eq!(m.variances()[0], VARIANCE_FLOOR);
    }

    #[test]
    fn aic_parameter_count() {
        assert_eq!(free_parameters(3), 8);
        assert_eq!(free_parameters(1), 2);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = GmmModel::new(
            vec![0.1, 0.9],
            vec![0.012_345_678_901_234_5, 0.03],
            vec![1.234_567_890_123_456_7e-6, 2e-6],
        )
        .unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: GmmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"weights":[0.5],"means":[0.0],"variances":[1.0]}"#;
        assert!(serde_json::from_str::<GmmModel>(bad).is_err());
    }
}
