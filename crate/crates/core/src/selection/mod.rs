//! Model and band selection: a genetic algorithm over ν-SVM chromosomes and an
//! exhaustive grid search, both driven by a caller-supplied fitness.

pub mod chromosome;
pub mod ga;
pub mod grid;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::ClassifierSpec;

pub use chromosome::{Chromosome, GeneRanges, KernelGene};
pub use ga::{ga_optimize, CrossoverKind, GaConfig, GaEpoch, GaResult, MutationMode};
pub use grid::{grid_search, GridBlock, GridResult, GridSpec};

/// Error type fitness evaluators may return.
pub type FitnessError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("invalid selection configuration: {0}")]
    InvalidConfig(String),
    #[error("fitness evaluation failed for {context}: {source}")]
    Fitness {
        context: String,
        #[source]
        source: FitnessError,
    },
}

/// A classifier configuration together with the feature subset it uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub classifier: ClassifierSpec,
    /// Selected feature indices, `None` for all features.
    pub features: Option<Vec<usize>>,
}

impl ModelSpec {
    pub fn all_features(classifier: ClassifierSpec) -> Self {
        Self {
            classifier,
            features: None,
        }
    }

    pub fn feature_count(&self, total: usize) -> usize {
        self.features.as_ref().map_or(total, Vec::len)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.classifier)?;
        if let Some(bands) = &self.features {
            write!(f, " bands={}", bands.len())?;
        }
        Ok(())
    }
}

/// Accuracy (percent) of a candidate model. Must be a pure function of its
/// arguments so that results do not depend on evaluation order.
pub trait Fitness: Sync {
    fn evaluate(&self, model: &ModelSpec, seed: u64) -> Result<f64, FitnessError>;
}

impl<F> Fitness for F
where
    F: Fn(&ModelSpec, u64) -> Result<f64, FitnessError> + Sync,
{
    fn evaluate(&self, model: &ModelSpec, seed: u64) -> Result<f64, FitnessError> {
        self(model, seed)
    }
}
