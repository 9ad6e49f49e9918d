//! Linear SVM trained by dual coordinate descent (hinge or squared hinge loss).
//!
//! The bias is learned by appending a constant feature of 1, so the dual has box
//! constraints only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::dot;
use super::svm::{canonical_order, sorted_classes, SvmFamily, SvmSpec};
use super::{vote, ClassifierError};
use crate::data::{ClassId, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinearLoss {
    Hinge,
    SquaredHinge,
}

const MAX_EPOCHS: usize = 2000;

/// Box-constrained dual `min 1/2 a'(Q + D)a - e'a, 0 <= a <= U`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDual {
    /// Upper bound on every variable (`inf` for squared hinge).
    pub upper: f64,
    /// Diagonal regulariser added to `Q`.
    pub diag: f64,
}

impl LinearDual {
    pub fn new(c: f64, loss: LinearLoss) -> Self {
        match loss {
            LinearLoss::Hinge => Self { upper: c, diag: 0.0 },
            LinearLoss::SquaredHinge => Self {
                upper: f64::INFINITY,
                diag: 0.5 / c,
            },
        }
    }
}

/// Solution of one binary problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolution {
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
}

/// Dual coordinate descent on rows of `x` with labels in {-1, +1}.
pub fn solve_linear(x: &FeatureMatrix, y: &[f64], c: f64, loss: LinearLoss, eps: f64) -> LinearSolution {
    let n = x.rows();
    let d = x.cols();
    let dual = LinearDual::new(c, loss);
    let qd: Vec<f64> = x.iter_rows().map(|r| dot(r, r) + 1.0 + dual.diag).collect();
    let mut alpha = vec![0.0; n];
    // Last component is the bias weight.
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    for _ in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi = x.row(i);
            let g = y[i] * (dot(&w[..d], xi) + w[d]) - 1.0 + dual.diag * alpha[i];
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= dual.upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-14 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, dual.upper);
                let step = (alpha[i] - old) * y[i];
                for (wk, xk) in w[..d].iter_mut().zip(xi) {
                    *wk += step * xk;
                }
                w[d] += step;
            }
        }
        if pg_max - pg_min < eps {
            break;
        }
    }

    // 1/2 |w|^2 + 1/2 D |a|^2 - sum a
    let objective = 0.5 * dot(&w, &w) + 0.5 * dual.diag * dot(&alpha, &alpha) - alpha.iter().sum::<f64>();
    let bias = w.pop().unwrap_or(0.0);
    LinearSolution {
        alpha,
        weights: w,
        bias,
        objective,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPair {
    pub positive: ClassId,
    pub negative: ClassId,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// One-vs-one linear SVM.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvmModel {
    pub(crate) spec: SvmSpec,
    pub(crate) classes: Vec<ClassId>,
    pub(crate) input_dim: usize,
    pub(crate) pairs: Vec<LinearPair>,
}

impl LinearSvmModel {
    pub fn train(spec: &SvmSpec, x: &FeatureMatrix, y: &[ClassId]) -> Result<Self, ClassifierError> {
        spec.validate()?;
        if spec.family != SvmFamily::LinearC {
            return Err(ClassifierError::InvalidSpec("not a linear-C spec".into()));
        }
        if x.rows() != y.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: x.rows(),
                found: y.len(),
            });
        }
        let classes = sorted_classes(y);
        if classes.len() < 2 {
            return Err(ClassifierError::SingleClass);
        }
        let order = canonical_order(x, y);
        let x = x.select(&order, None);
        let y: Vec<ClassId> = order.iter().map(|&i| y[i]).collect();
        let pairs: Vec<(ClassId, ClassId)> = classes
            .iter()
            .enumerate()
            .flat_map(|(a, &ca)| classes[a + 1..].iter().map(move |&cb| (ca, cb)))
            .collect();
        let pairs = pairs
            .par_iter()
            .map(|&(pos, neg)| {
                let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == pos || y[i] == neg).collect();
                let signs: Vec<f64> = rows.iter().map(|&i| if y[i] == pos { 1.0 } else { -1.0 }).collect();
                let sub = x.select(&rows, None);
                let sol = solve_linear(&sub, &signs, spec.c, spec.loss, spec.solver.eps);
                LinearPair {
                    positive: pos,
                    negative: neg,
                    weights: sol.weights,
                    bias: sol.bias,
                }
            })
            .collect();
        Ok(Self {
            spec: *spec,
            classes,
            input_dim: x.cols(),
            pairs,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn pairs(&self) -> &[LinearPair] {
        &self.pairs
    }

    pub fn predict_one(&self, x: &[f64]) -> ClassId {
        let winners = self.pairs.iter().map(|p| {
            if dot(&p.weights, x) + p.bias > 0.0 {
                p.positive
            } else {
                p.negative
            }
        });
        vote(&self.classes, winners)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<ClassId>, ClassifierError> {
        if x.cols() != self.input_dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim,
                found: x.cols(),
            });
        }
        Ok((0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_one(x.row(i)))
            .collect())
    }
}
