//! Time-variant channel simulation and Poisson attack injection.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{QberSample, QberSeries, ABORT_QBER};
use crate::seed::rng_from_seed;

/// Default spacing between simulated samples, in seconds.
pub const DEFAULT_CADENCE: i64 = 60;
/// First simulated timestamp (2023-01-01T00:00:00Z).
pub const DEFAULT_START: i64 = 1_672_531_200;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid channel profile `{name}`: {reason}")]
    Profile { name: String, reason: String },
    #[error("invalid attack spec: {0}")]
    Attack(String),
    #[error("need at least one sample")]
    Empty,
    #[error("unknown profile preset `{0}`")]
    UnknownPreset(String),
}

/// Regime-switching QBER channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: String,
    pub regime_means: Vec<f64>,
    pub regime_sigmas: Vec<f64>,
    /// Mean samples spent in a regime before switching.
    pub regime_dwell: f64,
    /// Minimal standard deviation applied to every regime.
    pub noise_floor: f64,
    /// Presets carry synthetic parameters, not measured ones.
    #[serde(default)]
    pub synthetic: bool,
}

impl ChannelProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: &str| {
            Err(SimError::Profile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.regime_means.is_empty() || self.regime_means.len() != self.regime_sigmas.len() {
            return fail("needs matching, non-empty regime means and sigmas");
        }
        if self.regime_means.iter().any(|&m| !(m > 0.0 && m < ABORT_QBER)) {
            return fail("regime means must lie in (0, 0.11)");
        }
        if self.regime_sigmas.iter().any(|&s| !(s > 0.0)) || !(self.noise_floor >= 0.0) {
            return fail("sigmas must be positive");
        }
        if !(self.regime_dwell >= 1.0) {
            return fail("regime dwell must be at least one sample");
        }
        Ok(())
    }
}

/// Trojan-horse attack model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    /// Mean inter-arrival time of attack onsets, in samples.
    pub upsilon_e: f64,
    pub qber_low: f64,
    pub qber_high: f64,
    /// Samples affected by each event.
    pub duration: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            upsilon_e: 500.0,
            qber_low: 0.05,
            qber_high: 0.055,
            duration: 1,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.upsilon_e >= 1.0) {
            return Err(SimError::Attack("upsilon_e must be at least 1".into()));
        }
        if !(0.0 <= self.qber_low && self.qber_low <= self.qber_high && self.qber_high <= 1.0) {
            return Err(SimError::Attack("need 0 <= qber_low <= qber_high <= 1".into()));
        }
        if self.duration == 0 {
            return Err(SimError::Attack("duration must be positive".into()));
        }
        Ok(())
    }
}

/// Simulates a series of `n` samples with Markov regime switching: at every
/// step the channel leaves its regime with probability `1 / regime_dwell`
/// for a uniformly chosen other regime. QBER is Gaussian within a regime and
/// clamped to `[0, 0.11]`.
pub fn simulate_qber_series(profile: &ChannelProfile, n: usize, seed: u64) -> Result<QberSeries, SimError> {
    simulate_with_regimes(profile, n, seed).map(|(series, _)| series)
}

/// As [`simulate_qber_series`], also returning the regime index of every
/// sample.
pub fn simulate_with_regimes(
    profile: &ChannelProfile,
    n: usize,
    seed: u64,
) -> Result<(QberSeries, Vec<usize>), SimError> {
    profile.validate()?;
    if n == 0 {
        return Err(SimError::Empty);
    }
    let mut rng = rng_from_seed(seed);
    let regimes: Vec<Normal<f64>> = profile
        .regime_means
        .iter()
        .zip(&profile.regime_sigmas)
        .map(|(&m, &s)| Normal::new(m, s.max(profile.noise_floor)).expect("validated sigma"))
        .collect();
    let switch_p = 1.0 / profile.regime_dwell;
    let mut regime = rng.random_range(0..regimes.len());
    let mut path = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && regimes.len() > 1 && rng.random::<f64>() < switch_p {
            let other = rng.random_range(0..regimes.len() - 1);
            regime = if other >= regime { other + 1 } else { other };
        }
        path.push(regime);
        let q = regimes[regime].sample(&mut rng).clamp(0.0, ABORT_QBER);
        samples.push(QberSample {
            timestamp: DEFAULT_START + DEFAULT_CADENCE * i as i64,
            qber: q,
            visibility: None,
            key_rate: None,
            attack_label: Some(false),
        });
    }
    let series = QberSeries::new(samples, profile.name.clone()).map_err(|e| SimError::Profile {
        name: profile.name.clone(),
        reason: e.to_string(),
    })?;
    Ok((series, path))
}

/// Attack onset indices below `n`: cumulative exponential inter-arrival
/// times with mean `upsilon_e`, floored to sample indices.
pub fn draw_attack_onsets<R: Rng + ?Sized>(n: usize, upsilon_e: f64, rng: &mut R) -> Vec<usize> {
    let exp = Exp::new(1.0 / upsilon_e).expect("positive rate");
    let mut t = 0.0;
    let mut onsets = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= n as f64 {
            break;
        }
        onsets.push(t as usize);
    }
    onsets
}

/// Returns a copy of `series` with Poisson-arriving attacks: each event
/// replaces `duration` consecutive samples with QBER drawn uniformly from
/// `[qber_low, qber_high]` and labels them as attacks. Unaffected samples
/// keep their values; their labels become `false` if absent.
pub fn inject_trojan_attacks(
    series: &QberSeries,
    spec: &AttackSpec,
    seed: u64,
) -> Result<(QberSeries, Vec<usize>), SimError> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let n = series.n();
    let onsets = draw_attack_onsets(n, spec.upsilon_e, &mut rng);
    let mut out = series.clone();
    let samples = out.samples_mut();
    for s in samples.iter_mut() {
        s.attack_label.get_or_insert(false);
    }
    for &onset in &onsets {
        for s in samples.iter_mut().skip(onset).take(spec.duration) {
            s.qber = if spec.qber_high > spec.qber_low {
                rng.random_range(spec.qber_low..=spec.qber_high)
            } else {
                spec.qber_low
            };
            s.attack_label = Some(true);
        }
    }
    Ok((out, onsets))
}

/// Synthetic presets for the 1 m, 1 km and 30 km links. Longer links have
/// higher and more variable QBER.
pub fn make_profile_presets() -> Vec<ChannelProfile> {
    vec![
        ChannelProfile {
            name: "1m".into(),
            regime_means: vec![0.008, 0.010],
            regime_sigmas: vec![0.0015, 0.0018],
            regime_dwell: 8000.0,
            noise_floor: 0.0005,
            synthetic: true,
        },
        ChannelProfile {
            name: "1km".into(),
            regime_means: vec![0.012, 0.015, 0.018],
            regime_sigmas: vec![0.002, 0.0025, 0.003],
            regime_dwell: 6000.0,
            noise_floor: 0.0005,
            synthetic: true,
        },
        ChannelProfile {
            name: "30km".into(),
            regime_means: vec![0.019, 0.024, 0.029],
            regime_sigmas: vec![0.003, 0.0035, 0.004],
            regime_dwell: 4000.0,
            noise_floor: 0.0005,
            synthetic: true,
        },
    ]
}

pub fn preset(name: &str) -> Result<ChannelProfile, SimError> {
    make_profile_presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| SimError::UnknownPreset(name.to_string()))
}
