use rayon::prelude::*;

use super::metrics::{accuracy, cv_accuracy};
use super::plan::{sample_per_class, Fold};
use crate::classifiers::FittedModel;
use crate::data::{ClassId, FeatureMatrix};
use crate::seed;
use crate::selection::{Fitness, FitnessError, ModelSpec};

/// Cross-validated accuracy over a fixed set of folds.
pub struct FoldFitness<'a> {
    x: &'a FeatureMatrix,
    y: &'a [ClassId],
    folds: &'a [Fold],
    subsample: Option<usize>,
}

impl<'a> FoldFitness<'a> {
    /// `x` and `y` cover every index the folds refer to.
    pub fn new(x: &'a FeatureMatrix, y: &'a [ClassId], folds: &'a [Fold], subsample: Option<usize>) -> Self {
        Self { x, y, folds, subsample }
    }

    /// Accuracy of `model` on one fold.
    pub fn fold_accuracy(&self, model: &ModelSpec, fold: usize, seed: u64) -> Result<f64, FitnessError> {
        let f = &self.folds[fold];
        let train = match self.subsample {
            Some(per_class) => sample_per_class(self.y, &f.train, per_class, &mut seed::rng(seed, &[fold as u64]))?,
            None => f.train.clone(),
        };
        let labels: Vec<ClassId> = train.iter().map(|&i| self.y[i]).collect();
        let fitted = FittedModel::fit(
            &model.classifier,
            model.features.as_deref(),
            &self.x.select(&train, None),
            &labels,
        )?;
        let predicted = fitted.predict(&self.x.select(&f.eval, None))?;
        let truth: Vec<ClassId> = f.eval.iter().map(|&i| self.y[i]).collect();
        Ok(accuracy(&predicted, &truth)?)
    }
}

impl Fitness for FoldFitness<'_> {
    fn evaluate(&self, model: &ModelSpec, seed: u64) -> Result<f64, FitnessError> {
        let per_fold = (0..self.folds.len())
            .into_par_iter()
            .map(|i| self.fold_accuracy(model, i, seed))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(cv_accuracy(&per_fold)?)
    }
}
