//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file reproduces the reference operating point.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qber_risk::data::FoldMode;
use qber_risk::learner::{ClusterRange, CvLayout, LearnerParams};
use qber_risk::risk::RiskConfig;
use qber_risk::sim::{preset, AttackSpec, ChannelProfile};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_SAMPLES: usize = 47_768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "InputConfig::reference")]
    pub input: InputConfig,
    pub attack: AttackConfig,
    pub learner: LearnerConfig,
    pub cv: CvConfig,
    pub risk: RiskConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            input: InputConfig::reference(),
            attack: AttackConfig::default(),
            learner: LearnerConfig::default(),
            cv: CvConfig::default(),
            risk: RiskConfig::default(),
        }
    }
}

/// Where QBER data comes from: a simulator preset or CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Simulator preset (`1m`, `1km`, `30km`).
    #[serde(default)]
    pub profile: Option<String>,
    /// Attack-free series used for training and gate calibration.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Series to evaluate; defaults to `csv`.
    #[serde(default)]
    pub eval_csv: Option<PathBuf>,
    /// Samples to simulate.
    #[serde(default = "default_samples")]
    pub n: usize,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl InputConfig {
    fn reference() -> Self {
        InputConfig {
            profile: Some("30km".into()),
            csv: None,
            eval_csv: None,
            n: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub enabled: bool,
    pub upsilon_e: f64,
    pub qber_low: f64,
    pub qber_high: f64,
    pub duration: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let spec = AttackSpec::default();
        AttackConfig {
            enabled: true,
            upsilon_e: spec.upsilon_e,
            qber_low: spec.qber_low,
            qber_high: spec.qber_high,
            duration: spec.duration,
        }
    }
}

impl AttackConfig {
    pub fn spec(&self) -> AttackSpec {
        AttackSpec {
            upsilon_e: self.upsilon_e,
            qber_low: self.qber_low,
            qber_high: self.qber_high,
            duration: self.duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Training folds.
    pub k: usize,
    pub c_min: usize,
    pub c_max: usize,
    pub t_training: usize,
    pub t_test: usize,
    pub i_max: usize,
    pub varsigma: f64,
    /// Samples per evaluation window in the risk stage.
    pub window: usize,
    pub fold_mode: FoldMode,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let p = LearnerParams::default();
        LearnerConfig {
            k: 5,
            c_min: p.c_range.min,
            c_max: p.c_range.max,
            t_training: p.t_training,
            t_test: p.t_test,
            i_max: p.i_max,
            varsigma: p.varsigma,
            window: 100,
            fold_mode: FoldMode::Contiguous,
        }
    }
}

impl LearnerConfig {
    pub fn params(&self) -> Result<LearnerParams, CliError> {
        Ok(LearnerParams {
            c_range: ClusterRange::new(self.c_min, self.c_max).map_err(|e| CliError::Config(e.to_string()))?,
            t_training: self.t_training,
            t_test: self.t_test,
            i_max: self.i_max,
            varsigma: self.varsigma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    /// Outer folds; each is held out once.
    pub k: usize,
    pub train_subfolds: usize,
    pub test_subfolds: usize,
    /// Extra cluster range evaluated on the same folds for comparison.
    pub compare_c_range: Option<[usize; 2]>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 4,
            train_subfolds: 3,
            test_subfolds: 1,
            compare_c_range: None,
        }
    }
}

impl CvConfig {
    pub fn layout(&self, mode: FoldMode) -> CvLayout {
        CvLayout {
            k: self.k,
            train_subfolds: self.train_subfolds,
            test_subfolds: self.test_subfolds,
            mode,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.input.profile, &self.input.csv) {
            (Some(_), Some(_)) => return bad("set exactly one of input.profile and input.csv".into()),
            (None, None) => return bad("no input source: set input.profile or input.csv".into()),
            (Some(name), None) => {
                preset(name).map_err(|e| CliError::Config(e.to_string()))?;
                if self.input.n < 2 {
                    return bad("input.n must be at least 2".into());
                }
            }
            (None, Some(_)) => {}
        }
        if self.input.eval_csv.is_some() && self.input.csv.is_none() {
            return bad("input.eval_csv needs input.csv".into());
        }
        if self.attack.enabled {
            self.attack
                .spec()
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let l = &self.learner;
        let params = l.params()?;
        if l.k < 2 {
            return bad("learner.k must be at least 2".into());
        }
        if l.t_training == 0 || l.t_test == 0 || l.i_max == 0 {
            return bad("learner trial and iteration counts must be positive".into());
        }
        if !(l.varsigma > 0.0 && l.varsigma < 1.0) {
            return bad("learner.varsigma must lie in (0, 1)".into());
        }
        if l.window < params.c_range.max {
            return bad(format!(
                "learner.window must hold at least c_max = {} samples",
                params.c_range.max
            ));
        }
        if self.cv.k < 2 || self.cv.train_subfolds < 2 || self.cv.test_subfolds < 1 {
            return bad("cv needs k >= 2, train_subfolds >= 2 and test_subfolds >= 1".into());
        }
        if let Some([lo, hi]) = self.cv.compare_c_range {
            ClusterRange::new(lo, hi).map_err(|e| CliError::Config(format!("cv.compare_c_range: {e}")))?;
        }
        self.risk.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Simulator profile when the input is simulated.
    pub fn profile(&self) -> Option<ChannelProfile> {
        self.input.profile.as_deref().and_then(|p| preset(p).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_reference_point() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.learner.t_training, 100);
        assert_eq!(cfg.learner.t_test, 10_000);
        assert_eq!(cfg.risk.rho, 0.05);
        assert_eq!(cfg.risk.alpha_const, Some(0.002));
        assert_eq!(cfg.input.profile.as_deref(), Some("30km"));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = PipelineConfig::from_toml("[learner]\nc_max = 6\n[risk]\nrho = 0.04\n").unwrap();
        assert_eq!(cfg.learner.c_max, 6);
        assert_eq!(cfg.learner.c_min, 2);
        assert_eq!(cfg.risk.rho, 0.04);
        assert_eq!(cfg.risk.varsigma, 0.95);
    }

    #[test]
    fn csv_section_replaces_profile() {
        let cfg = PipelineConfig::from_toml("[input]\ncsv = \"a.csv\"\n").unwrap();
        assert!(cfg.input.profile.is_none());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[input]\nprofile = \"30km\"\ncsv = \"a.csv\"\n",
            "[input]\nprofile = \"mars\"\n",
            "[learner]\nc_min = 9\nc_max = 3\n",
            "[learner]\nk = 1\n",
            "[risk]\nrho = 2.0\n",
            "[attack]\nupsilon_e = 0.0\n",
            "unknown = 1\n",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }
}
