//! Tree-ensemble classifiers: random forest, bagging, multi-class
//! AdaBoost (SAMME) and softmax gradient boosting, all built on the CART
//! trainer in [`tree`].
//!
//! Training is deterministic for a given `(data, params, seed)` and for
//! any worker count: per-tree RNGs derive from the master seed and the
//! tree index, and parallel results are collected in index order.

mod tree;

use std::path::Path;

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tree::{argmax, Tree, TreeNode};
use tree::{train_classification_tree, train_gradient_tree};

use crate::{Error, Result};

/// Per-node feature subsampling mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSubsample {
    All,
    /// `max(1, floor(sqrt(d)))` features per split.
    Sqrt,
}

/// Base tree hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeatureSubsample,
    /// Minimum split gain (gamma); a split must strictly exceed it.
    pub min_split_loss: f64,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 50,
            min_samples_split: 2,
            min_samples_leaf: 1,
            features_per_split: FeatureSubsample::All,
            min_split_loss: 0.0,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::InvalidParams("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParams(
                "min_samples_split must be >= 2".into(),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidParams("min_samples_leaf must be >= 1".into()));
        }
        if self.min_split_loss < 0.0 {
            return Err(Error::InvalidParams("min_split_loss must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleKind {
    RandomForest,
    Bagging,
    AdaBoost,
    GradientBoosting,
}

impl EnsembleKind {
    pub fn token(self) -> &'static str {
        match self {
            EnsembleKind::RandomForest => "random-forest",
            EnsembleKind::Bagging => "bagging",
            EnsembleKind::AdaBoost => "adaboost",
            EnsembleKind::GradientBoosting => "gradient-boosting",
        }
    }
}

impl std::fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random-forest" | "randomforest" => Ok(EnsembleKind::RandomForest),
            "bagging" => Ok(EnsembleKind::Bagging),
            "adaboost" | "ada" => Ok(EnsembleKind::AdaBoost),
            "gbt" | "xgboost" | "gradient-boosting" | "gradientboosting" => {
                Ok(EnsembleKind::GradientBoosting)
            }
            _ => Err(Error::UnknownToken {
                kind: "ensemble kind",
                token: s.to_string(),
            }),
        }
    }
}

/// Base estimator of the bagging ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaggingBase {
    /// One feature-subsampling tree per bootstrap resample.
    Tree,
    /// A small forest per bootstrap resample; its trees vote internally.
    Forest(usize),
}

/// Hyperparameter presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Reference configuration: 1800-tree forest, 160-estimator bagging,
    /// 100-round AdaBoost, 100-stage boosting.
    Paper,
    /// Scaled-down configuration for desk-scale runs: 50-tree forest,
    /// 40-estimator bagging, 25-round AdaBoost, 25-stage boosting.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::UnknownToken {
                kind: "preset",
                token: s.to_string(),
            }),
        }
    }
}

/// Full ensemble configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub kind: EnsembleKind,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub base_score: f64,
    pub bootstrap: bool,
    pub bagging_base: BaggingBase,
    pub tree: TreeParams,
}

impl EnsembleParams {
    /// Hyperparameters for a classifier kind under a preset; `seed` feeds
    /// every random choice made during training.
    pub fn preset(kind: EnsembleKind, preset: Preset, seed: u64) -> EnsembleParams {
        let desk = preset == Preset::Desk;
        match kind {
            EnsembleKind::RandomForest => EnsembleParams {
                kind,
                n_estimators: if desk { 50 } else { 1800 },
                learning_rate: 1.0,
                base_score: 0.5,
                bootstrap: false,
                bagging_base: BaggingBase::Tree,
                tree: TreeParams {
                    max_depth: 50,
                    min_samples_split: 5,
                    min_samples_leaf: 2,
                    features_per_split: FeatureSubsample::Sqrt,
                    min_split_loss: 0.0,
                    seed,
                },
            },
            EnsembleKind::Bagging => EnsembleParams {
                kind,
                n_estimators: if desk { 40 } else { 160 },
                learning_rate: 1.0,
                base_score: 0.5,
                bootstrap: true,
                bagging_base: BaggingBase::Tree,
                tree: TreeParams {
                    max_depth: 12,
                    min_samples_split: 2,
                    min_samples_leaf: 1,
                    features_per_split: FeatureSubsample::Sqrt,
                    min_split_loss: 0.0,
                    seed,
                },
            },
            EnsembleKind::AdaBoost => EnsembleParams {
                kind,
                n_estimators: if desk { 25 } else { 100 },
                learning_rate: 0.1,
                base_score: 0.5,
                bootstrap: false,
                bagging_base: BaggingBase::Tree,
                tree: TreeParams {
                    max_depth: 12,
                    min_samples_split: 2,
                    min_samples_leaf: 1,
                    features_per_split: FeatureSubsample::All,
                    min_split_loss: 0.0,
                    seed,
                },
            },
            EnsembleKind::GradientBoosting => EnsembleParams {
                kind,
                n_estimators: if desk { 25 } else { 100 },
                learning_rate: 0.1,
                base_score: 0.5,
                bootstrap: false,
                bagging_base: BaggingBase::Tree,
                tree: TreeParams {
                    max_depth: 3,
                    min_samples_split: 2,
                    min_samples_leaf: 1,
                    features_per_split: FeatureSubsample::All,
                    min_split_loss: 0.0,
                    seed,
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::InvalidParams("n_estimators must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidParams("learning_rate must be > 0".into()));
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return Err(Error::InvalidParams("base_score must be in (0, 1)".into()));
        }
        if let BaggingBase::Forest(0) = self.bagging_base {
            return Err(Error::InvalidParams(
                "bagging forest base needs >= 1 tree".into(),
            ));
        }
        self.tree.validate()
    }
}

/// Per-training-run diagnostics kept with the model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    /// Gradient boosting: training log-loss after each stage.
    pub stage_logloss: Vec<f64>,
    /// AdaBoost: weighted training error per round.
    pub round_error: Vec<f64>,
    /// AdaBoost: sample-weight sum per round after renormalization.
    pub round_weight_sum: Vec<f64>,
    /// AdaBoost: smallest sample weight per round after renormalization.
    pub round_weight_min: Vec<f64>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized forest/boosting model with its training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub format_version: u32,
    pub kind: EnsembleKind,
    pub classes: Vec<String>,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Stage weights: AdaBoost alphas; all ones for forests/bagging;
    /// unused by gradient boosting.
    pub tree_weights: Vec<f64>,
    /// Trees per voting group (bagging with a forest base groups several
    /// trees into one vote).
    pub group_size: usize,
    pub learning_rate: f64,
    pub base_score: f64,
    pub params: EnsembleParams,
    pub diagnostics: TrainDiagnostics,
}

fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Stream-indexed seed derivation so per-tree RNGs are independent of
/// scheduling.
pub(crate) fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

#[cfg(feature = "parallel")]
fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indexed<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

fn validate_training_input(x: &[Vec<f64>], y: &[usize], classes: &[String]) -> Result<()> {
    if x.is_empty() || y.len() != x.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty feature matrix and labels ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::InvalidInput("zero-dimensional features".into()));
    }
    for row in x {
        if row.len() != d {
            return Err(Error::Dimensionality {
                expected: d,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("NaN feature value".into()));
        }
    }
    for &label in y {
        if label >= classes.len() {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: classes.len(),
            });
        }
    }
    let mut present = vec![false; classes.len()];
    for &label in y {
        present[label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidInput(
            "training set holds a single class; a classifier needs at least two".into(),
        ));
    }
    Ok(())
}

fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Trains the forest of the reference configuration: every tree sees the
/// full sample (no bootstrap); randomness comes solely from per-split
/// sqrt(d) feature subsampling.
pub fn train_random_forest(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    params: &EnsembleParams,
) -> Result<TreeEnsembleModel> {
    params.validate()?;
    validate_training_input(x, y, classes)?;
    let n_classes = classes.len();
    let trees = map_indexed(params.n_estimators, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.tree.seed, t as u64));
        let idx = if params.bootstrap {
            bootstrap_indices(x.len(), &mut rng)
        } else {
            (0..x.len()).collect()
        };
        train_classification_tree(x, y, None, idx, n_classes, &params.tree, &mut rng)
    });
    Ok(TreeEnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: EnsembleKind::RandomForest,
        classes: classes.to_vec(),
        n_features: x[0].len(),
        tree_weights: vec![1.0; trees.len()],
        trees,
        group_size: 1,
        learning_rate: params.learning_rate,
        base_score: params.base_score,
        params: *params,
        diagnostics: TrainDiagnostics::default(),
    })
}

/// Trains a bagging ensemble: each base estimator fits a bootstrap
/// resample (with replacement, original size) and casts one vote.
pub fn train_bagging(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    params: &EnsembleParams,
) -> Result<TreeEnsembleModel> {
    params.validate()?;
    validate_training_input(x, y, classes)?;
    let n_classes = classes.len();
    let group = match params.bagging_base {
        BaggingBase::Tree => 1,
        BaggingBase::Forest(m) => m,
    };
    let trees: Vec<Tree> = map_indexed(params.n_estimators, |e| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.tree.seed, e as u64));
        let idx = if params.bootstrap {
            bootstrap_indices(x.len(), &mut rng)
        } else {
            (0..x.len()).collect()
        };
        (0..group)
            .map(|_| {
                train_classification_tree(
                    x,
                    y,
                    None,
                    idx.clone(),
                    n_classes,
                    &params.tree,
                    &mut rng,
                )
            })
            .collect::<Vec<Tree>>()
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(TreeEnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: EnsembleKind::Bagging,
        classes: classes.to_vec(),
        n_features: x[0].len(),
        tree_weights: vec![1.0; trees.len()],
        trees,
        group_size: group,
        learning_rate: params.learning_rate,
        base_score: params.base_score,
        params: *params,
        diagnostics: TrainDiagnostics::default(),
    })
}

/// Error clamp keeping AdaBoost stage weights finite.
pub const ADABOOST_ERR_CLAMP: f64 = 1e-10;

/// Multi-class AdaBoost (SAMME). The stage weight is
/// `lr * (ln((1 - err) / err) + ln(K - 1))`; training stops early when a
/// round's weighted error reaches `1 - 1/K` (no better than chance) or 0,
/// keeping that final stage.
pub fn train_adaboost(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    params: &EnsembleParams,
) -> Result<TreeEnsembleModel> {
    params.validate()?;
    validate_training_input(x, y, classes)?;
    let n = x.len();
    let k = classes.len() as f64;
    let mut weights = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut alphas = Vec::new();
    let mut diagnostics = TrainDiagnostics::default();

    for round in 0..params.n_estimators {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.tree.seed, round as u64));
        let tree = train_classification_tree(
            x,
            y,
            Some(&weights),
            (0..n).collect(),
            classes.len(),
            &params.tree,
            &mut rng,
        );
        let miss: Vec<bool> = (0..n).map(|i| tree.vote(&x[i]) != y[i]).collect();
        let err: f64 = weights
            .iter()
            .zip(&miss)
            .filter(|(_, &m)| m)
            .map(|(w, _)| w)
            .sum();
        let clamped = err.clamp(ADABOOST_ERR_CLAMP, 1.0 - ADABOOST_ERR_CLAMP);
        let alpha = params.learning_rate * (((1.0 - clamped) / clamped).ln() + (k - 1.0).ln());
        trees.push(tree);
        alphas.push(alpha);
        diagnostics.round_error.push(err);

        for (w, &m) in weights.iter_mut().zip(&miss) {
            if m {
                *w *= alpha.exp();
            }
        }
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        diagnostics
            .round_weight_sum
            .push(weights.iter().sum::<f64>());
        diagnostics
            .round_weight_min
            .push(weights.iter().cloned().fold(f64::INFINITY, f64::min));

        if err == 0.0 || err >= 1.0 - 1.0 / k {
            break;
        }
    }

    Ok(TreeEnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: EnsembleKind::AdaBoost,
        classes: classes.to_vec(),
        n_features: x[0].len(),
        tree_weights: alphas,
        trees,
        group_size: 1,
        learning_rate: params.learning_rate,
        base_score: params.base_score,
        params: *params,
        diagnostics,
    })
}

/// L2 regularization on boosting leaf Newton steps.
pub const GBT_LAMBDA: f64 = 1.0;

/// Softmax gradient boosting: one tree per class per stage, fit to the
/// negative log-loss gradients with Newton leaf values, scaled by the
/// learning rate. Raw scores start at `ln(base_score)` for every class
/// (a class-symmetric start: uniform softmax at base_score 0.5). The
/// training log-loss after each stage is recorded in the diagnostics.
pub fn train_gradient_boosting(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    params: &EnsembleParams,
) -> Result<TreeEnsembleModel> {
    params.validate()?;
    validate_training_input(x, y, classes)?;
    let n = x.len();
    let k = classes.len();
    let init = params.base_score.ln();
    let mut raw = vec![vec![init; k]; n];
    let mut trees: Vec<Tree> = Vec::with_capacity(params.n_estimators * k);
    let mut diagnostics = TrainDiagnostics::default();

    for _stage in 0..params.n_estimators {
        let probs: Vec<Vec<f64>> = raw.iter().map(|r| softmax(r)).collect();
        let stage_trees: Vec<Tree> = map_indexed(k, |class| {
            let grad: Vec<f64> = (0..n)
                .map(|i| probs[i][class] - if y[i] == class { 1.0 } else { 0.0 })
                .collect();
            let hess: Vec<f64> = (0..n)
                .map(|i| probs[i][class] * (1.0 - probs[i][class]))
                .collect();
            train_gradient_tree(x, &grad, &hess, &params.tree, GBT_LAMBDA)
        });
        for (class, tree) in stage_trees.iter().enumerate() {
            for (i, row) in raw.iter_mut().enumerate() {
                row[class] += params.learning_rate * tree.leaf_values(&x[i])[0];
            }
        }
        trees.extend(stage_trees);

        let logloss = -(0..n)
            .map(|i| softmax(&raw[i])[y[i]].max(1e-300).ln())
            .sum::<f64>()
            / n as f64;
        diagnostics.stage_logloss.push(logloss);
    }

    Ok(TreeEnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: EnsembleKind::GradientBoosting,
        classes: classes.to_vec(),
        n_features: x[0].len(),
        tree_weights: Vec::new(),
        trees,
        group_size: k,
        learning_rate: params.learning_rate,
        base_score: params.base_score,
        params: *params,
        diagnostics,
    })
}

/// Dispatches on `params.kind`.
pub fn train(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    params: &EnsembleParams,
) -> Result<TreeEnsembleModel> {
    match params.kind {
        EnsembleKind::RandomForest => train_random_forest(x, y, classes, params),
        EnsembleKind::Bagging => train_bagging(x, y, classes, params),
        EnsembleKind::AdaBoost => train_adaboost(x, y, classes, params),
        EnsembleKind::GradientBoosting => train_gradient_boosting(x, y, classes, params),
    }
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&r| (r - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl TreeEnsembleModel {
    fn check_input(&self, x: &[Vec<f64>]) -> Result<()> {
        for row in x {
            if row.len() != self.n_features {
                return Err(Error::Dimensionality {
                    expected: self.n_features,
                    actual: row.len(),
                });
            }
        }
        Ok(())
    }

    fn proba_one(&self, x: &[f64]) -> Vec<f64> {
        let k = self.classes.len();
        match self.kind {
            EnsembleKind::RandomForest | EnsembleKind::Bagging => {
                let mut votes = vec![0usize; k];
                for group in self.trees.chunks(self.group_size) {
                    let mut inner = vec![0usize; k];
                    for tree in group {
                        inner[tree.vote(x)] += 1;
                    }
                    let winner = (0..k).max_by_key(|&c| (inner[c], k - c)).unwrap();
                    votes[winner] += 1;
                }
                let total: usize = votes.iter().sum();
                votes.into_iter().map(|v| v as f64 / total as f64).collect()
            }
            EnsembleKind::AdaBoost => {
                let mut scores = vec![0.0; k];
                for (tree, &alpha) in self.trees.iter().zip(&self.tree_weights) {
                    scores[tree.vote(x)] += alpha;
                }
                let sum: f64 = scores.iter().sum();
                if sum > 0.0 {
                    scores.into_iter().map(|s| s / sum).collect()
                } else {
                    vec![1.0 / k as f64; k]
                }
            }
            EnsembleKind::GradientBoosting => {
                let mut raw = vec![self.base_score.ln(); k];
                for stage in self.trees.chunks(self.group_size) {
                    for (class, tree) in stage.iter().enumerate() {
                        raw[class] += self.learning_rate * tree.leaf_values(x)[0];
                    }
                }
                softmax(&raw)
            }
        }
    }

    /// Per-class scores; each row is a probability vector.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(x.iter().map(|row| self.proba_one(row)).collect())
    }

    /// Class indices; `argmax(predict_proba)` with ties to the lowest
    /// class index.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        self.check_input(x)?;
        Ok(x.iter().map(|row| argmax(&self.proba_one(row))).collect())
    }

    /// Writes the model as versioned self-describing JSON text.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::ModelFormat(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TreeEnsembleModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TreeEnsembleModel =
            serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model format version {} (supported: {})",
                model.format_version, MODEL_FORMAT_VERSION
            )));
        }
        Ok(model)
    }
}
