//! Classifier families behind one train/predict contract.

pub mod kernel;
pub mod knn;
pub mod linear;
pub mod mlp;
pub mod model_io;
pub mod qp;
pub mod svm;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClassId, FeatureMatrix};

pub use kernel::{KernelKind, KernelSpec};
pub use knn::{KnnModel, KnnSpec, Metric, Weighting};
pub use linear::{LinearLoss, LinearSvmModel};
pub use mlp::{Activation, MlpModel, MlpSpec};
pub use svm::{SvmFamily, SvmModel, SvmSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("invalid classifier configuration: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("nu={nu} is infeasible, this class pair allows at most {max}")]
    InfeasibleNu { nu: f64, max: f64 },
    #[error("training data is empty")]
    Empty,
    #[error("MLP training diverged (non-finite loss); learning rate {learning_rate} is too large")]
    Divergence { learning_rate: f64 },
    #[error("model file: {0}")]
    Format(String),
}

/// Any supported classifier configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClassifierSpec {
    Svm(SvmSpec),
    Knn(KnnSpec),
    Mlp(MlpSpec),
}

/// Classifier family names used on the command line and in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    NuSvm,
    Svc,
    Lsvc,
    Knn,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::NuSvm, Family::Svc, Family::Lsvc, Family::Knn, Family::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Family::NuSvm => "nu-svm",
            Family::Svc => "svc",
            Family::Lsvc => "lsvc",
            Family::Knn => "knn",
            Family::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown classifier '{s}' (expected nu-svm, svc, lsvc, knn or mlp)"))
    }
}

impl ClassifierSpec {
    pub fn family(&self) -> Family {
        match self {
            ClassifierSpec::Svm(s) => match s.family {
                SvmFamily::Nu => Family::NuSvm,
                SvmFamily::C => Family::Svc,
                SvmFamily::LinearC => Family::Lsvc,
            },
            ClassifierSpec::Knn(_) => Family::Knn,
            ClassifierSpec::Mlp(_) => Family::Mlp,
        }
    }

    pub fn train(&self, x: &FeatureMatrix, y: &[ClassId]) -> Result<TrainedModel, ClassifierError> {
        Ok(match self {
            ClassifierSpec::Svm(s) if s.family == SvmFamily::LinearC => {
                TrainedModel::Linear(LinearSvmModel::train(s, x, y)?)
            }
            ClassifierSpec::Svm(s) => TrainedModel::Svm(SvmModel::train(s, x, y)?),
            ClassifierSpec::Knn(s) => TrainedModel::Knn(KnnModel::train(s, x, y)?),
            ClassifierSpec::Mlp(s) => TrainedModel::Mlp(MlpModel::train(s, x, y)?),
        })
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::Svm(s) => {
                write!(f, "{}", s.family.name())?;
                match s.family {
                    SvmFamily::Nu => write!(f, " nu={}", s.nu)?,
                    SvmFamily::C => write!(f, " C={}", s.c)?,
                    SvmFamily::LinearC => return write!(f, " C={} loss={:?}", s.c, s.loss),
                }
                let k = &s.kernel;
                match k.kind {
                    KernelKind::Linear => write!(f, " kernel=linear"),
                    KernelKind::Rbf => write!(f, " kernel=rbf gamma={}", k.gamma),
                    KernelKind::Polynomial => write!(
                        f,
                        " kernel=polynomial gamma={} coef0={} degree={}",
                        k.gamma, k.coef0, k.degree
                    ),
                    KernelKind::Sigmoid => write!(f, " kernel=sigmoid gamma={} coef0={}", k.gamma, k.coef0),
                }
            }
            ClassifierSpec::Knn(s) => write!(f, "knn k={} metric={} weights={:?}", s.k, s.metric.name(), s.weighting),
            ClassifierSpec::Mlp(s) => write!(
                f,
                "mlp hidden={:?} dropout={} lr={} batch={} iterations={}",
                s.hidden, s.dropout, s.learning_rate, s.batch_size, s.iterations
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Svm(SvmModel),
    Linear(LinearSvmModel),
    Knn(KnnModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Svm(m) => m.input_dim(),
            TrainedModel::Linear(m) => m.input_dim(),
            TrainedModel::Knn(m) => m.input_dim(),
            TrainedModel::Mlp(m) => m.input_dim(),
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<ClassId>, ClassifierError> {
        match self {
            TrainedModel::Svm(m) => m.predict(x),
            TrainedModel::Linear(m) => m.predict(x),
            TrainedModel::Knn(m) => m.predict(x),
            TrainedModel::Mlp(m) => m.predict(x),
        }
    }
}

/// Trained model together with the feature subset it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    /// Width of the full feature vectors given to `predict`.
    pub input_dim: usize,
    /// Selected feature indices, `None` for all.
    pub features: Option<Vec<usize>>,
    pub model: TrainedModel,
}

impl FittedModel {
    pub fn fit(
        spec: &ClassifierSpec,
        features: Option<&[usize]>,
        x: &FeatureMatrix,
        y: &[ClassId],
    ) -> Result<Self, ClassifierError> {
        if let Some(f) = features {
            if f.is_empty() {
                return Err(ClassifierError::InvalidSpec("empty feature subset".into()));
            }
            if let Some(&bad) = f.iter().find(|&&i| i >= x.cols()) {
                return Err(ClassifierError::DimensionMismatch {
                    expected: x.cols(),
                    found: bad + 1,
                });
            }
        }
        let all: Vec<usize> = (0..x.rows()).collect();
        let sub;
        let train_x = match features {
            Some(f) => {
                sub = x.select(&all, Some(f));
                &sub
            }
            None => x,
        };
        Ok(Self {
            input_dim: x.cols(),
            features: features.map(<[usize]>::to_vec),
            model: spec.train(train_x, y)?,
        })
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<ClassId>, ClassifierError> {
        if x.cols() != self.input_dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim,
                found: x.cols(),
            });
        }
        match &self.features {
            Some(f) => {
                let all: Vec<usize> = (0..x.rows()).collect();
                self.model.predict(&x.select(&all, Some(f)))
            }
            None => self.model.predict(x),
        }
    }
}

/// Majority vote over `winners`; ties go to the lowest class id.
pub(crate) fn vote(classes: &[ClassId], winners: impl Iterator<Item = ClassId>) -> ClassId {
    let mut counts = vec![0usize; classes.len()];
    for w in winners {
        if let Ok(i) = classes.binary_search(&w) {
            counts[i] += 1;
        }
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    classes[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_breaks_ties_low() {
        assert_eq!(vote(&[1, 2, 3], [3, 2, 3, 2].into_iter()), 2);
        assert_eq!(vote(&[1, 2, 3], [3, 3, 1].into_iter()), 3);
        assert_eq!(vote(&[4, 9], std::iter::empty()), 4);
    }

    #[test]
    fn fitted_model_projects_features() {
        // Only feature 1 separates the classes.
        let x = FeatureMatrix::new(4, 2, vec![5.0, 0.0, -5.0, 0.1, 5.0, 1.0, -5.0, 1.1]).unwrap();
        let y = [1, 1, 2, 2];
        let spec = ClassifierSpec::Knn(KnnSpec::new(1, Metric::Euclidean, Weighting::Uniform));
        let m = FittedModel::fit(&spec, Some(&[1]), &x, &y).unwrap();
        let q = FeatureMatrix::new(2, 2, vec![-5.0, 0.05, 5.0, 1.05]).unwrap();
        assert_eq!(m.predict(&q).unwrap(), vec![1, 2]);
        let narrow = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        assert!(matches!(m.predict(&narrow), Err(ClassifierError::DimensionMismatch { .. })));
        assert!(FittedModel::fit(&spec, Some(&[2]), &x, &y).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("svm".parse::<Family>().is_err());
    }
}
