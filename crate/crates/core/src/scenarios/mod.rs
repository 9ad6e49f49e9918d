//! Evaluation protocols: transductive (HTC), inductive (HIC) and inductive with
//! a validation set (HICVS), with repeated runs and per-day reporting.

pub mod fitness;
pub mod metrics;
pub mod plan;
pub mod run;

use thiserror::Error;

use crate::classifiers::ClassifierError;
use crate::data::{DataError, Scene};
use crate::selection::SelectionError;

pub use fitness::FoldFitness;
pub use metrics::{accuracy, confusion_matrix, cv_accuracy, mean_std};
pub use plan::{
    build_hic_plan, build_hicvs_plan, build_htc_plan, build_plan, stratified_folds, validation_split, Fold, FoldPlan,
    PlanConfig, Scenario,
};
pub use run::{
    run_scenario, with_workers, DayRow, DayTally, EvaluationReport, RepetitionResult, ReportDay, RunConfig, Selector,
    REPORT_HEADER,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("nothing to evaluate")]
    EmptyPrediction,
    #[error("{predicted} predictions for {truth} labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("dataset has no {0} images")]
    MissingScene(Scene),
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}
