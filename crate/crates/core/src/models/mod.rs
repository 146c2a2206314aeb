//! The four classifier families behind a common fit/score/predict contract.
//!
//! Labels are `+1` / `-1`. Every family is deterministic given its
//! hyperparameters, the training data and a 64-bit seed.

pub mod forest;
pub mod logreg;
pub mod mlp;
pub mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{ForestModel, ForestParams, TreeNode};
pub use logreg::{LogRegModel, LogRegParams, Penalty};
pub use mlp::{Activation, MlpModel, MlpParams};
pub use svm::{kernel_eval, KernelKind, SvmModel, SvmParams};

/// Anything that produces a confidence score for the positive class.
pub trait Predictor {
    /// Monotone in the confidence that the label is `+1`.
    fn score(&self, x: &[f64]) -> Result<f64>;

    /// Scores strictly above this are labelled `+1`.
    fn threshold(&self) -> f64;

    fn predict(&self, x: &[f64]) -> Result<(f64, i8)> {
        let s = self.score(x)?;
        Ok((s, if s > self.threshold() { 1 } else { -1 }))
    }

    fn predict_label(&self, x: &[f64]) -> Result<i8> {
        self.predict(x).map(|(_, l)| l)
    }
}

/// A hyperparameter configuration that can be fitted to data.
pub trait Learner {
    type Model: Predictor;

    fn fit(&self, x: &[Vec<f64>], y: &[i8], seed: u64) -> Result<Self::Model>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[serde(rename = "logreg", alias = "logistic-regression")]
    LogReg,
    #[serde(alias = "forest")]
    RandomForest,
    Svm,
    Mlp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::LogReg => "logreg",
            Family::RandomForest => "random-forest",
            Family::Svm => "svm",
            Family::Mlp => "mlp",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logreg" | "logistic-regression" | "lr" => Ok(Family::LogReg),
            "random-forest" | "forest" | "rf" => Ok(Family::RandomForest),
            "svm" => Ok(Family::Svm),
            "mlp" => Ok(Family::Mlp),
            other => Err(Error::domain(format!("unknown model family {other:?}"))),
        }
    }
}

/// Hyperparameters for one family, tagged by `family` when serialised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    #[serde(rename = "logreg", alias = "logistic-regression")]
    LogReg(LogRegParams),
    #[serde(alias = "forest")]
    RandomForest(ForestParams),
    Svm(SvmParams),
    Mlp(MlpParams),
}

impl ModelSpec {
    /// Tuned defaults: L2 logistic regression with C=1, a linear SVM with
    /// C=0.2, 200 trees of depth 80 on 4 features with leaves of 4, and an
    /// MLP with a single hidden layer of width 2 trained for 200 epochs.
    pub fn preset(family: Family) -> ModelSpec {
        match family {
            Family::LogReg => ModelSpec::LogReg(LogRegParams::default()),
            Family::RandomForest => ModelSpec::RandomForest(ForestParams::default()),
            Family::Svm => ModelSpec::Svm(SvmParams::default()),
            Family::Mlp => ModelSpec::Mlp(MlpParams::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::LogReg(_) => Family::LogReg,
            ModelSpec::RandomForest(_) => Family::RandomForest,
            ModelSpec::Svm(_) => Family::Svm,
            ModelSpec::Mlp(_) => Family::Mlp,
        }
    }

    /// Short display name, e.g. `svm-rbf`.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Svm(p) => format!("svm-{}", p.kernel),
            other => other.family().to_string(),
        }
    }

    /// Replaces named hyperparameters, e.g. `{"c": 0.5}`.
    pub fn with_overrides(
        &self,
        overrides: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<ModelSpec> {
        let mut doc = serde_json::to_value(self)?;
        let obj = doc
            .as_object_mut()
            .expect("model spec serialises to an object");
        for (k, v) in overrides {
            if k == "family" {
                return Err(Error::domain("cannot override the model family"));
            }
            if !obj.contains_key(k) {
                return Err(Error::domain(format!(
                    "unknown hyperparameter {k:?} for {}",
                    self.family()
                )));
            }
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(doc).map_err(|e| Error::domain(format!("bad hyperparameter: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::LogReg(p) => p.validate(),
            ModelSpec::RandomForest(p) => p.validate(None),
            ModelSpec::Svm(p) => p.validate(),
            ModelSpec::Mlp(p) => p.validate(),
        }
    }
}

impl Learner for ModelSpec {
    type Model = TrainedModel;

    fn fit(&self, x: &[Vec<f64>], y: &[i8], seed: u64) -> Result<TrainedModel> {
        Ok(match self {
            ModelSpec::LogReg(p) => TrainedModel::LogReg(logreg::fit(x, y, p, seed)?),
            ModelSpec::RandomForest(p) => TrainedModel::RandomForest(forest::fit(x, y, p, seed)?),
            ModelSpec::Svm(p) => TrainedModel::Svm(svm::fit(x, y, p, seed)?),
            ModelSpec::Mlp(p) => TrainedModel::Mlp(mlp::fit(x, y, p, seed)?),
        })
    }
}

/// A fitted classifier. Serialises to a self-describing JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TrainedModel {
    #[serde(rename = "logreg")]
    LogReg(LogRegModel),
    RandomForest(ForestModel),
    Svm(SvmModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match self {
            TrainedModel::LogReg(_) => Family::LogReg,
            TrainedModel::RandomForest(_) => Family::RandomForest,
            TrainedModel::Svm(_) => Family::Svm,
            TrainedModel::Mlp(_) => Family::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::LogReg(m) => m.weights.len(),
            TrainedModel::RandomForest(m) => m.n_features,
            TrainedModel::Svm(m) => m.n_features,
            TrainedModel::Mlp(m) => m.n_features(),
        }
    }

    /// Mean decrease in Gini impurity per feature; forests only.
    pub fn feature_importances(&self) -> Result<Vec<f64>> {
        match self {
            TrainedModel::RandomForest(m) => Ok(m.feature_importances().to_vec()),
            other => Err(Error::domain(format!(
                "feature importances are only defined for random forests, not {}",
                other.family()
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let model: TrainedModel = serde_json::from_slice(bytes)?;
        model.check()?;
        Ok(model)
    }

    /// Structural consistency of a deserialised model.
    fn check(&self) -> Result<()> {
        match self {
            TrainedModel::LogReg(m) => m.check(),
            TrainedModel::RandomForest(m) => m.check(),
            TrainedModel::Svm(m) => m.check(),
            TrainedModel::Mlp(m) => m.check(),
        }
    }
}

impl Predictor for TrainedModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            TrainedModel::LogReg(m) => m.score(x),
            TrainedModel::RandomForest(m) => m.score(x),
            TrainedModel::Svm(m) => m.score(x),
            TrainedModel::Mlp(m) => m.score(x),
        }
    }

    fn threshold(&self) -> f64 {
        match self {
            TrainedModel::LogReg(m) => m.threshold(),
            TrainedModel::RandomForest(m) => m.threshold(),
            TrainedModel::Svm(m) => m.threshold(),
            TrainedModel::Mlp(m) => m.threshold(),
        }
    }
}

/// Checks shapes, labels and finiteness; returns the feature dimension.
pub(crate) fn check_training_data(x: &[Vec<f64>], y: &[i8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::domain(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    let first = x
        .first()
        .ok_or_else(|| Error::domain("empty training set"))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::domain("training rows have no features"));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::domain(format!(
                "row {i} has {} features, expected {dim}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "row {i} contains a non-finite value"
            )));
        }
    }
    if let Some(bad) = y.iter().find(|&&l| l != 1 && l != -1) {
        return Err(Error::domain(format!("label {bad} is not +1 or -1")));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::DegenerateFit(y[0]));
    }
    Ok(dim)
}

pub(crate) fn check_input_dim(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::domain(format!(
            "input has {} features, model expects {dim}",
            x.len()
        )));
    }
    Ok(())
}

/// Targets in {0, 1} from labels in {-1, +1}.
pub(crate) fn targets(y: &[i8]) -> Vec<f64> {
    y.iter().map(|&l| if l > 0 { 1.0 } else { 0.0 }).collect()
}
