use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::canonical_order;
use super::ClassifierError;
use crate::data::{ClassId, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Manhattan => diffs.sum(),
            Metric::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weighting {
    Uniform,
    /// Votes weighted by `1 / (distance + 1e-12)`.
    Distance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnnSpec {
    pub k: usize,
    pub metric: Metric,
    pub weighting: Weighting,
}

impl KnnSpec {
    pub fn new(k: usize, metric: Metric, weighting: Weighting) -> Self {
        Self { k, metric, weighting }
    }
}

/// Stored training set.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    pub(crate) spec: KnnSpec,
    pub(crate) x: FeatureMatrix,
    pub(crate) y: Vec<ClassId>,
}

impl KnnModel {
    pub fn train(spec: &KnnSpec, x: &FeatureMatrix, y: &[ClassId]) -> Result<Self, ClassifierError> {
        if x.rows() == 0 {
            return Err(ClassifierError::Empty);
        }
        if x.rows() != y.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: x.rows(),
                found: y.len(),
            });
        }
        if spec.k == 0 {
            return Err(ClassifierError::InvalidSpec("k must be at least 1".into()));
        }
        if spec.k > x.rows() {
            return Err(ClassifierError::InvalidSpec(format!(
                "k={} exceeds the {} training records",
                spec.k,
                x.rows()
            )));
        }
        // Canonical order makes distance ties independent of input order.
        let order = canonical_order(x, y);
        Ok(Self {
            spec: *spec,
            x: x.select(&order, None),
            y: order.iter().map(|&i| y[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn predict_one(&self, q: &[f64]) -> ClassId {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (self.spec.metric.distance(r, q), i))
            .collect();
        let k = self.spec.k;
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_dist);
            dist.truncate(k);
        }
        let mut tally: Vec<(ClassId, f64)> = Vec::new();
        for &(d, i) in &dist {
            let w = match self.spec.weighting {
                Weighting::Uniform => 1.0,
                Weighting::Distance => 1.0 / (d + 1e-12),
            };
            match tally.iter_mut().find(|(c, _)| *c == self.y[i]) {
                Some(slot) => slot.1 += w,
                None => tally.push((self.y[i], w)),
            }
        }
        // Highest weight wins; ties go to the lowest class id.
        tally
            .into_iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .expect("k >= 1")
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<ClassId>, ClassifierError> {
        if x.cols() != self.input_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok((0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_one(x.row(i)))
            .collect())
    }
}
