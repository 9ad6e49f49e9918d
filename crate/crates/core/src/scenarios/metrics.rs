use super::ScenarioError;
use crate::data::ClassId;

/// Percentage of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[ClassId], truth: &[ClassId]) -> Result<f64, ScenarioError> {
    if predicted.len() != truth.len() {
        return Err(ScenarioError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(ScenarioError::EmptyPrediction);
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / predicted.len() as f64)
}

/// Unweighted mean of per-fold accuracies.
pub fn cv_accuracy(fold_accuracies: &[f64]) -> Result<f64, ScenarioError> {
    if fold_accuracies.is_empty() {
        return Err(ScenarioError::EmptyPrediction);
    }
    Ok(fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Counts indexed `[truth][predicted]` over `classes`; unknown labels are skipped.
pub fn confusion_matrix(classes: &[ClassId], predicted: &[ClassId], truth: &[ClassId]) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes.len()]; classes.len()];
    for (p, t) in predicted.iter().zip(truth) {
        if let (Some(i), Some(j)) = (classes.iter().position(|c| c == t), classes.iter().position(|c| c == p)) {
            m[i][j] += 1;
        }
    }
    m
}
