//! KS-gated mixture search and category learning.
//!
//! [`algorithm1_fit`] runs an exhaustive trial search per cluster count and
//! keeps the fit whose synthetic sample is most similar to the data under
//! the two-sample KS test. [`algorithm2_train`] groups training folds into
//! categories, [`algorithm3_test`] places test folds into the existing
//! categories and refines every category on its accumulated data, and
//! [`cross_validate`] drives both over a k-fold split.
//!
//! A fold is matched against a category by scoring the category's stored
//! mixtures against the fold (no refit on the fold): a refit converges to the
//! fold's own optimum and would accept any fold that is fittable at all.
//!
//! Seeds follow fixed label paths so a result never depends on scheduling:
//! trial `m` of cluster count `c` under seed `s` uses
//! `derive_seed(s, &[c, m])`; fold `f` of a training run uses
//! `derive_seed(s, &[f])`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{partition_indices, DataError, FoldMode, FoldSet};
use crate::gmm::{aic, em_fit, EmInit, GmmError, GmmModel};
use crate::ks::{ks_pvalue_asymptotic, ks_statistic_sorted};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Fit(#[from] GmmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cluster range [{min}, {max}] is invalid")]
    InvalidRange { min: usize, max: usize },
    #[error("{n} samples cannot support up to {c_max} clusters")]
    TooFewPoints { n: usize, c_max: usize },
    #[error("at least one trial is required")]
    NoTrials,
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("no trained categories")]
    EmptyCategorySet,
    #[error("initial models do not cover cluster count {0}")]
    MissingInit(usize),
}

/// Inclusive range of mixture component counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRange {
    pub min: usize,
    pub max: usize,
}

impl ClusterRange {
    pub fn new(min: usize, max: usize) -> Result<Self, LearnerError> {
        if min == 0 || min > max {
            return Err(LearnerError::InvalidRange { min, max });
        }
        Ok(ClusterRange { min, max })
    }

    pub fn counts(&self) -> impl Iterator<Item = usize> + Clone {
        self.min..=self.max
    }

    pub fn len(&self) -> usize {
        self.max - self.min + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Search settings shared by the learning phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub c_range: ClusterRange,
    /// Trials per cluster count while training (and when matching folds).
    pub t_training: usize,
    /// Trials per cluster count in the test-phase refinement.
    pub t_test: usize,
    /// EM iteration cap.
    pub i_max: usize,
    /// P-value a fold must exceed to join a category.
    pub varsigma: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams {
            c_range: ClusterRange { min: 2, max: 15 },
            t_training: 100,
            t_test: 10_000,
            i_max: 100,
            varsigma: 0.95,
        }
    }
}

/// Best fit found for one cluster count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub c: usize,
    pub model: GmmModel,
    /// Largest KS P-value over the trials.
    pub p_value: f64,
    pub d_statistic: f64,
    pub trials_used: usize,
    /// AIC of `model` on the data it was fitted to.
    pub aic: f64,
}

/// Index of the record with the largest P-value; ties go to the smaller `c`.
fn best_index(fits: &[FitRecord]) -> usize {
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        let b = &fits[best];
        if f.p_value > b.p_value || (f.p_value == b.p_value && f.c < b.c) {
            best = i;
        }
    }
    best
}

pub fn best_fit(fits: &[FitRecord]) -> Option<&FitRecord> {
    (!fits.is_empty()).then(|| &fits[best_index(fits)])
}

/// KS score of `model` against sorted data: a synthetic sample of the same
/// size is drawn from the model and compared.
fn score_model(model: &GmmModel, sorted: &[f64], seed: u64) -> (f64, f64) {
    let mut rng = rng_from_seed(seed);
    let mut synthetic = model.sample_with(sorted.len(), &mut rng);
    synthetic.sort_by(f64::total_cmp);
    let d = ks_statistic_sorted(sorted, &synthetic);
    (ks_pvalue_asymptotic(d, sorted.len(), sorted.len()), d)
}

fn sample_seed(trial_seed: u64) -> u64 {
    derive_seed(trial_seed, &[1])
}

fn em_seed(trial_seed: u64) -> u64 {
    derive_seed(trial_seed, &[0])
}

struct Best {
    p: f64,
    d: f64,
    model: Option<GmmModel>,
    trials: usize,
}

impl Best {
    fn new() -> Self {
        Best {
            p: f64::NEG_INFINITY,
            d: 1.0,
            model: None,
            trials: 0,
        }
    }

    /// Strict improvement only, so the earliest maximising trial is kept.
    fn offer(&mut self, p: f64, d: f64, model: impl FnOnce() -> GmmModel) {
        self.trials += 1;
        if p > self.p {
            self.p = p;
            self.d = d;
            self.model = Some(model());
        }
    }

    /// No later trial can beat a P-value of exactly one.
    fn saturated(&self) -> bool {
        self.p >= 1.0
    }
}

fn fit_one_count(
    data: &[f64],
    sorted: &[f64],
    c: usize,
    t_max: usize,
    i_max: usize,
    init: Option<&GmmModel>,
    seed: u64,
) -> Result<FitRecord, LearnerError> {
    let mut best = Best::new();
    match init {
        Some(start) => {
            // A warm start makes EM deterministic, so the trials differ only
            // in the synthetic sample.
            let (model, _) = em_fit(data, c, &EmInit::Model(start.clone()), i_max)?;
            for m in 0..t_max {
                let trial = derive_seed(seed, &[c as u64, m as u64]);
                let (p, d) = score_model(&model, sorted, sample_seed(trial));
                best.offer(p, d, || model.clone());
                if best.saturated() {
                    break;
                }
            }
        }
        None => {
            for m in 0..t_max {
                let trial = derive_seed(seed, &[c as u64, m as u64]);
                let (model, _) = em_fit(data, c, &EmInit::Seed(em_seed(trial)), i_max)?;
                let (p, d) = score_model(&model, sorted, sample_seed(trial));
                best.offer(p, d, || model);
                if best.saturated() {
                    break;
                }
            }
        }
    }
    let model = best.model.expect("t_max >= 1");
    Ok(FitRecord {
        c,
        aic: aic(&model, data),
        model,
        p_value: best.p,
        d_statistic: best.d,
        trials_used: best.trials,
    })
}

fn sorted(data: &[f64]) -> Vec<f64> {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exhaustive KS-gated EM search over every cluster count in `c_range`.
///
/// For each `c`, `t_max` trials each fit the data by EM (cold, k-means++
/// seeded; or warm from `init[c]`) and score the fit by the KS P-value
/// between the data and a same-size sample from the fitted mixture. The
/// highest-scoring trial is kept.
pub fn algorithm1_fit(
    data: &[f64],
    c_range: ClusterRange,
    t_max: usize,
    i_max: usize,
    init: Option<&[FitRecord]>,
    seed: u64,
) -> Result<Vec<FitRecord>, LearnerError> {
    if data.len() < c_range.max {
        return Err(LearnerError::TooFewPoints {
            n: data.len(),
            c_max: c_range.max,
        });
    }
    if t_max == 0 {
        return Err(LearnerError::NoTrials);
    }
    let sorted = sorted(data);
    let counts: Vec<usize> = c_range.counts().collect();
    counts
        .par_iter()
        .map(|&c| {
            let start = match init {
                Some(fits) => Some(
                    &fits
                        .iter()
                        .find(|f| f.c == c)
                        .ok_or(LearnerError::MissingInit(c))?
                        .model,
                ),
                None => None,
            };
            fit_one_count(data, &sorted, c, t_max, i_max, start, seed)
        })
        .collect()
}

/// Per-count P-values of a category's stored mixtures against `data`, each
/// the best of `t_max` synthetic samples.
pub fn match_scores(data: &[f64], fits: &[FitRecord], t_max: usize, seed: u64) -> Vec<(usize, f64)> {
    let sorted = sorted(data);
    fits.par_iter()
        .map(|fit| {
            let mut best = Best::new();
            for m in 0..t_max.max(1) {
                let trial = derive_seed(seed, &[fit.c as u64, m as u64]);
                let (p, d) = score_model(&fit.model, &sorted, sample_seed(trial));
                best.offer(p, d, || fit.model.clone());
                if best.saturated() {
                    break;
                }
            }
            (fit.c, best.p)
        })
        .collect()
}

fn max_score(scores: &[(usize, f64)]) -> f64 {
    scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: usize,
    /// Training folds in this category.
    pub member_folds: Vec<usize>,
    /// Test folds placed here by the test phase.
    #[serde(default)]
    pub test_folds: Vec<usize>,
    /// Number of samples the current fits were learned from.
    pub n_samples: usize,
    pub fits: Vec<FitRecord>,
    pub best_c: usize,
    /// Best P-value at the end of training, kept across the test phase.
    pub training_best_p: f64,
}

impl Category {
    fn new(id: usize, fold: usize, n_samples: usize, fits: Vec<FitRecord>) -> Self {
        let best = best_fit(&fits).expect("fits cover the cluster range");
        Category {
            id,
            member_folds: vec![fold],
            test_folds: Vec::new(),
            n_samples,
            best_c: best.c,
            training_best_p: best.p_value,
            fits,
        }
    }

    pub fn best(&self) -> &FitRecord {
        self.fits
            .iter()
            .find(|f| f.c == self.best_c)
            .expect("best_c is one of the fits")
    }

    pub fn best_p_value(&self) -> f64 {
        self.best().p_value
    }

    pub fn fit_for(&self, c: usize) -> Option<&FitRecord> {
        self.fits.iter().find(|f| f.c == c)
    }

    fn set_fits(&mut self, fits: Vec<FitRecord>) {
        self.best_c = best_fit(&fits).expect("non-empty").c;
        self.fits = fits;
    }
}

/// How one fold was placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub category: usize,
    /// `(c, p)` scores that decided the placement.
    pub scores: Vec<(usize, f64)>,
    /// P-value of the fold under the category it joined.
    pub p_value: f64,
    /// The fold opened a new category.
    pub founded: bool,
    /// The fold failed every category and was forced into the last one.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySet {
    pub categories: Vec<Category>,
    pub varsigma: f64,
    pub c_range: ClusterRange,
    pub t_training: usize,
    pub t_test: usize,
    pub training_folds: Vec<FoldOutcome>,
    #[serde(default)]
    pub test_folds: Vec<FoldOutcome>,
}

impl CategorySet {
    pub fn h(&self) -> usize {
        self.categories.len()
    }

    /// Category holding training fold `fold`.
    pub fn category_of(&self, fold: usize) -> Option<usize> {
        self.categories
            .iter()
            .find(|c| c.member_folds.contains(&fold))
            .map(|c| c.id)
    }
}

/// Groups training folds into categories.
///
/// The first fold founds category 1. Each later fold is scored against the
/// current category with `t_training` samples per cluster count; it joins
/// when the best P-value exceeds `varsigma`, otherwise a cold
/// [`algorithm1_fit`] of the fold founds the next category, which becomes
/// current.
pub fn algorithm2_train(
    values: &[f64],
    folds: &FoldSet,
    params: &LearnerParams,
    seed: u64,
) -> Result<CategorySet, LearnerError> {
    let k = folds.k();
    if k < 2 {
        return Err(LearnerError::TooFewFolds(k));
    }
    let fold_data = |s: usize| -> Vec<f64> { folds.fold(s).iter().map(|&i| values[i]).collect() };

    let first = fold_data(0);
    let fits = algorithm1_fit(
        &first,
        params.c_range,
        params.t_training,
        params.i_max,
        None,
        derive_seed(seed, &[0]),
    )?;
    let founder = Category::new(0, 0, first.len(), fits);
    let mut outcomes = vec![FoldOutcome {
        fold: 0,
        category: 0,
        scores: founder.fits.iter().map(|f| (f.c, f.p_value)).collect(),
        p_value: founder.best_p_value(),
        founded: true,
        fallback: false,
    }];
    let mut categories = vec![founder];

    for s in 1..k {
        let data = fold_data(s);
        let fold_seed = derive_seed(seed, &[s as u64]);
        let current = categories.last_mut().expect("at least one category");
        let scores = match_scores(&data, &current.fits, params.t_training, derive_seed(fold_seed, &[1]));
        let p = max_score(&scores);
        if p > params.varsigma {
            current.member_folds.push(s);
            current.n_samples += data.len();
            outcomes.push(FoldOutcome {
                fold: s,
                category: current.id,
                scores,
                p_value: p,
                founded: false,
                fallback: false,
            });
        } else {
            let fits = algorithm1_fit(
                &data,
                params.c_range,
                params.t_training,
                params.i_max,
                None,
                derive_seed(fold_seed, &[0]),
            )?;
            let id = categories.len();
            let cat = Category::new(id, s, data.len(), fits);
            outcomes.push(FoldOutcome {
                fold: s,
                category: id,
                scores: cat.fits.iter().map(|f| (f.c, f.p_value)).collect(),
                p_value: cat.best_p_value(),
                founded: true,
                fallback: false,
            });
            categories.push(cat);
        }
    }

    Ok(CategorySet {
        categories,
        varsigma: params.varsigma,
        c_range: params.c_range,
        t_training: params.t_training,
        t_test: params.t_test,
        training_folds: outcomes,
        test_folds: Vec::new(),
    })
}

/// Result of matching one block of data against the trained categories.
struct Placement {
    category: usize,
    scores: Vec<(usize, f64)>,
    p_value: f64,
    fallback: bool,
}

/// Tries categories in order and takes the first whose best score exceeds
/// `varsigma`; the last category absorbs a block that matches none.
fn place(data: &[f64], trained: &CategorySet, t_max: usize, varsigma: f64, seed: u64) -> Placement {
    let h = trained.h();
    for (idx, cat) in trained.categories.iter().enumerate() {
        let scores = match_scores(data, &cat.fits, t_max, derive_seed(seed, &[idx as u64]));
        let p = max_score(&scores);
        if p > varsigma || idx + 1 == h {
            return Placement {
                category: cat.id,
                scores,
                p_value: p,
                fallback: p <= varsigma,
            };
        }
    }
    unreachable!("the last category always accepts")
}

/// Places test folds into the trained categories, then refines every
/// category on its accumulated training and test data with `t_test` trials
/// warm-started from its current mixtures. No category is created.
pub fn algorithm3_test(
    test_values: &[f64],
    test_folds: &FoldSet,
    train_values: &[f64],
    train_folds: &FoldSet,
    trained: &CategorySet,
    params: &LearnerParams,
    seed: u64,
) -> Result<CategorySet, LearnerError> {
    if trained.categories.is_empty() {
        return Err(LearnerError::EmptyCategorySet);
    }
    let mut result = trained.clone();
    result.t_test = params.t_test;
    result.test_folds.clear();
    for cat in &mut result.categories {
        cat.test_folds.clear();
    }

    for s in 0..test_folds.k() {
        let data: Vec<f64> = test_folds.fold(s).iter().map(|&i| test_values[i]).collect();
        let placement = place(
            &data,
            trained,
            params.t_training,
            params.varsigma,
            derive_seed(seed, &[0, s as u64]),
        );
        result.categories[placement.category].test_folds.push(s);
        result.test_folds.push(FoldOutcome {
            fold: s,
            category: placement.category,
            scores: placement.scores,
            p_value: placement.p_value,
            founded: false,
            fallback: placement.fallback,
        });
    }

    for cat in &mut result.categories {
        let mut data: Vec<f64> = Vec::new();
        for &f in &cat.member_folds {
            data.extend(train_folds.fold(f).iter().map(|&i| train_values[i]));
        }
        for &f in &cat.test_folds {
            data.extend(test_folds.fold(f).iter().map(|&i| test_values[i]));
        }
        let fits = algorithm1_fit(
            &data,
            params.c_range,
            params.t_test,
            params.i_max,
            Some(&cat.fits),
            derive_seed(seed, &[1, cat.id as u64]),
        )?;
        cat.n_samples = data.len();
        cat.set_fits(fits);
    }
    Ok(result)
}

/// One row of a P-value / AIC table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub category: usize,
    pub c: usize,
    pub p_value: f64,
    pub aic: f64,
}

pub fn fit_rows(set: &CategorySet) -> Vec<FitRow> {
    set.categories
        .iter()
        .flat_map(|cat| {
            cat.fits.iter().map(move |f| FitRow {
                category: cat.id,
                c: f.c,
                p_value: f.p_value,
                aic: f.aic,
            })
        })
        .collect()
}

/// Outcome of one cross-validation iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Index of the held-out fold.
    pub fold: usize,
    pub train_categories: usize,
    /// Categories after placing and refining on the held-out fold.
    pub categories: CategorySet,
    /// Best refined P-value among categories that received test data.
    pub best_p_value: f64,
    /// Cluster count achieving `best_p_value`.
    pub best_c: usize,
    pub rows: Vec<FitRow>,
}

impl CvReport {
    /// AIC of the reported best category at cluster count `c`.
    pub fn aic_at(&self, c: usize) -> Option<f64> {
        let cat = self.test_category()?;
        cat.fit_for(c).map(|f| f.aic)
    }

    fn test_category(&self) -> Option<&Category> {
        self.categories
            .categories
            .iter()
            .filter(|c| !c.test_folds.is_empty())
            .max_by(|a, b| a.best_p_value().total_cmp(&b.best_p_value()).then(b.id.cmp(&a.id)))
    }
}

/// Cross-validation layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvLayout {
    /// Outer folds; each is held out once.
    pub k: usize,
    /// Sub-folds the remaining training data is split into.
    pub train_subfolds: usize,
    /// Sub-folds the held-out fold is split into.
    pub test_subfolds: usize,
    pub mode: FoldMode,
}

/// k-fold cross-validation: train on `k - 1` folds, test on the rest.
pub fn cross_validate(
    values: &[f64],
    layout: &CvLayout,
    params: &LearnerParams,
    seed: u64,
) -> Result<Vec<CvReport>, LearnerError> {
    if layout.k < 2 {
        return Err(LearnerError::TooFewFolds(layout.k));
    }
    let outer = partition_indices(values.len(), layout.k, layout.mode)?;
    (0..layout.k)
        .into_par_iter()
        .map(|i| {
            let train_idx = outer.complement(i);
            let train: Vec<f64> = train_idx.iter().map(|&j| values[j]).collect();
            let test: Vec<f64> = outer.fold(i).iter().map(|&j| values[j]).collect();
            let train_folds = partition_indices(train.len(), layout.train_subfolds, layout.mode)?;
            let test_folds = if layout.test_subfolds <= 1 {
                FoldSet::whole(test.len())
            } else {
                partition_indices(test.len(), layout.test_subfolds, layout.mode)?
            };
            let iter_seed = derive_seed(seed, &[i as u64]);
            let trained = algorithm2_train(&train, &train_folds, params, derive_seed(iter_seed, &[0]))?;
            let tested = algorithm3_test(
                &test,
                &test_folds,
                &train,
                &train_folds,
                &trained,
                params,
                derive_seed(iter_seed, &[1]),
            )?;
            let mut report = CvReport {
                fold: i,
                train_categories: trained.h(),
                rows: fit_rows(&tested),
                categories: tested,
                best_p_value: 0.0,
                best_c: 0,
            };
            let (p, c) = {
                let best = report.test_category().expect("every test fold is placed").best();
                (best.p_value, best.c)
            };
            report.best_p_value = p;
            report.best_c = c;
            Ok(report)
        })
        .collect()
}

/// Fit of one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub window: usize,
    /// Sample indices `[start, end)` of the window.
    pub start: usize,
    pub end: usize,
    pub category: usize,
    /// Best score of the window against its category's stored mixtures.
    pub match_p: f64,
    pub fallback: bool,
    /// Window's own fit, warm-started from its category.
    pub fit: FitRecord,
}

/// Places each window into a trained category and fits the window's own
/// mixture warm-started from that category.
pub fn fit_windows(
    values: &[f64],
    windows: &FoldSet,
    trained: &CategorySet,
    params: &LearnerParams,
    seed: u64,
) -> Result<Vec<WindowFit>, LearnerError> {
    if trained.categories.is_empty() {
        return Err(LearnerError::EmptyCategorySet);
    }
    (0..windows.k())
        .into_par_iter()
        .map(|w| {
            let idx = windows.fold(w);
            let data: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            let wseed = derive_seed(seed, &[w as u64]);
            let placement = place(
                &data,
                trained,
                params.t_training,
                params.varsigma,
                derive_seed(wseed, &[0]),
            );
            let cat = &trained.categories[placement.category];
            let fits = algorithm1_fit(
                &data,
                trained.c_range,
                params.t_training,
                params.i_max,
                Some(&cat.fits),
                derive_seed(wseed, &[1]),
            )?;
            let fit = best_fit(&fits).expect("non-empty range").clone();
            Ok(WindowFit {
                window: w,
                start: idx.first().copied().unwrap_or(0),
                end: idx.last().map_or(0, |l| l + 1),
                category: placement.category,
                match_p: placement.p_value,
                fallback: placement.fallback,
                fit,
            })
        })
        .collect()
}
