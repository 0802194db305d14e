//! Learning QBER distributions from QKD link logs and scoring the link's
//! empirical eavesdropping risk.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: samples, series, CSV ingestion and folds.
//! - [`gmm`]: 1-D Gaussian mixtures and EM.
//! - [`ks`]: two-sample Kolmogorov–Smirnov statistic and P-values.
//! - [`learner`]: KS-gated mixture fitting and category learning.
//! - [`risk`]: posteriors, Bayes gates, risk measure/reference and the
//!   detection bound.
//! - [`sim`]: time-variant channel simulation and attack injection.

pub mod data;
pub mod gmm;
pub mod ks;
pub mod learner;
pub mod risk;
pub mod seed;
pub mod sim;

pub use data::{FoldMode, FoldSet, QberSample, QberSeries};
pub use gmm::{EmInit, EmTrace, GmmModel};
pub use ks::KsResult;
pub use learner::{Category, CategorySet, FitRecord};
pub use risk::{GateSet, RiskConfig, RiskReport};
pub use sim::{AttackSpec, ChannelProfile};
