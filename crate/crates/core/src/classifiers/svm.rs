//! Kernel SVMs (nu and C formulations) with one-vs-one multiclass voting.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{dot, KernelSpec};
use super::linear::LinearLoss;
use super::qp::{self, DenseQ, QMatrix, QpProblem, SolverParams};
use super::{vote, ClassifierError};
use crate::data::{ClassId, FeatureMatrix};

/// Largest training set for which the full kernel matrix is materialised.
const DENSE_LIMIT: usize = 3000;
/// Kernel-row cache budget for larger problems, in `f64`s.
const CACHE_BUDGET: usize = 32 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SvmFamily {
    Nu,
    C,
    LinearC,
}

impl SvmFamily {
    pub fn name(self) -> &'static str {
        match self {
            SvmFamily::Nu => "nu-svm",
            SvmFamily::C => "svc",
            SvmFamily::LinearC => "lsvc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmSpec {
    pub family: SvmFamily,
    pub kernel: KernelSpec,
    /// Used by [`SvmFamily::Nu`].
    pub nu: f64,
    /// Used by [`SvmFamily::C`] and [`SvmFamily::LinearC`].
    pub c: f64,
    /// Used by [`SvmFamily::LinearC`].
    pub loss: LinearLoss,
    pub solver: SolverParams,
}

impl SvmSpec {
    pub fn nu(kernel: KernelSpec, nu: f64) -> Self {
        Self {
            family: SvmFamily::Nu,
            kernel,
            nu,
            c: 1.0,
            loss: LinearLoss::Hinge,
            solver: SolverParams::default(),
        }
    }

    pub fn c(kernel: KernelSpec, c: f64) -> Self {
        Self {
            family: SvmFamily::C,
            kernel,
            nu: 0.5,
            c,
            loss: LinearLoss::Hinge,
            solver: SolverParams::default(),
        }
    }

    pub fn linear(c: f64, loss: LinearLoss) -> Self {
        Self {
            family: SvmFamily::LinearC,
            kernel: KernelSpec::linear(),
            nu: 0.5,
            c,
            loss,
            solver: SolverParams::default(),
        }
    }

    pub fn with_tolerance(mut self, eps: f64) -> Self {
        self.solver.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        self.kernel.validate()?;
        match self.family {
            SvmFamily::Nu if !(self.nu > 0.0 && self.nu <= 1.0) => Err(ClassifierError::InvalidSpec(
                format!("nu must lie in (0, 1], got {}", self.nu),
            )),
            SvmFamily::C | SvmFamily::LinearC if !(self.c > 0.0 && self.c.is_finite()) => Err(
                ClassifierError::InvalidSpec(format!("C must be positive, got {}", self.c)),
            ),
            _ if self.solver.eps.is_nan() || self.solver.eps <= 0.0 => Err(ClassifierError::InvalidSpec(
                "solver tolerance must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Dual problem (without `Q`) of one binary subproblem with labels `y` in {-1, +1}.
pub fn binary_dual(spec: &SvmSpec, y: &[f64]) -> Result<QpProblem, ClassifierError> {
    let n = y.len();
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ClassifierError::SingleClass);
    }
    match spec.family {
        SvmFamily::C => Ok(QpProblem {
            p: vec![-1.0; n],
            y: y.to_vec(),
            upper: vec![spec.c; n],
            alpha0: vec![0.0; n],
            nu: false,
        }),
        SvmFamily::Nu => {
            let max_nu = 2.0 * n_pos.min(n_neg) as f64 / n as f64;
            if spec.nu > max_nu + 1e-12 {
                return Err(ClassifierError::InfeasibleNu { nu: spec.nu, max: max_nu });
            }
            let mut sum_pos = spec.nu * n as f64 / 2.0;
            let mut sum_neg = sum_pos;
            let alpha0 = y
                .iter()
                .map(|&yi| {
                    let budget = if yi > 0.0 { &mut sum_pos } else { &mut sum_neg };
                    let a = budget.clamp(0.0, 1.0);
                    *budget -= a;
                    a
                })
                .collect();
            Ok(QpProblem {
                p: vec![0.0; n],
                y: y.to_vec(),
                upper: vec![1.0; n],
                alpha0,
                nu: true,
            })
        }
        SvmFamily::LinearC => Err(ClassifierError::InvalidSpec(
            "linear-C SVMs are solved by coordinate descent, not the kernel dual".into(),
        )),
    }
}

/// Solution of one binary subproblem in decision-function form.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySolution {
    /// Raw dual variables as returned by the solver.
    pub alpha: Vec<f64>,
    /// Non-negative coefficients of the decision function.
    pub beta: Vec<f64>,
    pub bias: f64,
    /// Dual objective at `alpha` in the solver's scaling.
    pub objective: f64,
    /// Margin estimate of the nu formulation.
    pub r: f64,
    pub converged: bool,
}

pub fn solve_binary<Q: QMatrix>(spec: &SvmSpec, q: &mut Q, y: &[f64]) -> Result<BinarySolution, ClassifierError> {
    let problem = binary_dual(spec, y)?;
    let sol = qp::solve(q, &problem, spec.solver);
    let (beta, bias) = match spec.family {
        SvmFamily::Nu if sol.r > 1e-12 => (
            sol.alpha.iter().map(|a| a / sol.r).collect(),
            -sol.rho / sol.r,
        ),
        SvmFamily::Nu => {
            debug!("nu-SVM margin estimate r={} is not positive; coefficients left unscaled", sol.r);
            (sol.alpha.clone(), -sol.rho)
        }
        _ => (sol.alpha.clone(), -sol.rho),
    };
    Ok(BinarySolution {
        alpha: sol.alpha,
        beta,
        bias,
        objective: sol.objective,
        r: sol.r,
        converged: sol.converged,
    })
}

/// Kernel matrix of all rows of `x`.
pub fn gram(kernel: &KernelSpec, x: &FeatureMatrix) -> Vec<f64> {
    let n = x.rows();
    let norms: Vec<f64> = x.iter_rows().map(|r| dot(r, r)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (0..=i)
                .map(|j| kernel.eval_dot(dot(xi, x.row(j)), norms[i], norms[j]))
                .collect()
        })
        .collect();
    let mut k = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `Q` rows computed on demand with a bounded FIFO cache.
struct LazyQ<'a> {
    kernel: KernelSpec,
    x: &'a FeatureMatrix,
    rows: &'a [usize],
    y: &'a [f64],
    norms: Vec<f64>,
    cache: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> LazyQ<'a> {
    fn new(kernel: KernelSpec, x: &'a FeatureMatrix, rows: &'a [usize], y: &'a [f64]) -> Self {
        let norms = rows.iter().map(|&r| dot(x.row(r), x.row(r))).collect();
        let capacity = (CACHE_BUDGET / rows.len().max(1)).max(2);
        Self {
            kernel,
            x,
            rows,
            y,
            norms,
            cache: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        }
    }
}

impl QMatrix for LazyQ<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn row_into(&mut self, i: usize, out: &mut [f64]) {
        if let Some(row) = self.cache.get(&i) {
            out.copy_from_slice(row);
            return;
        }
        let xi = self.x.row(self.rows[i]);
        let row: Vec<f64> = (0..self.rows.len())
            .map(|j| {
                let k = self
                    .kernel
                    .eval_dot(dot(xi, self.x.row(self.rows[j])), self.norms[i], self.norms[j]);
                self.y[i] * self.y[j] * k
            })
            .collect();
        out.copy_from_slice(&row);
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.cache.remove(&old);
            }
        }
        self.order.push_back(i);
        self.cache.insert(i, row);
    }

    fn diag(&self, i: usize) -> f64 {
        self.kernel.eval_dot(self.norms[i], self.norms[i], self.norms[i])
    }
}

/// One class pair of a one-vs-one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    /// Predicted when the decision value is positive.
    pub positive: ClassId,
    pub negative: ClassId,
    /// Indices into the model's support matrix.
    pub support: Vec<usize>,
    /// Non-negative coefficients, one per support example.
    pub beta: Vec<f64>,
    /// Label (+1 or -1) of each support example.
    pub sign: Vec<f64>,
    pub bias: f64,
}

/// Trained kernel SVM.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub(crate) spec: SvmSpec,
    pub(crate) classes: Vec<ClassId>,
    pub(crate) support: FeatureMatrix,
    pub(crate) pairs: Vec<PairModel>,
}

/// Deterministic record order: by label, then lexicographically by features.
pub(crate) fn canonical_order(x: &FeatureMatrix, y: &[ClassId]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.sort_by(|&a, &b| {
        y[a].cmp(&y[b]).then_with(|| {
            x.row(a)
                .iter()
                .zip(x.row(b))
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    idx
}

pub(crate) fn sorted_classes(y: &[ClassId]) -> Vec<ClassId> {
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

impl SvmModel {
    pub fn train(spec: &SvmSpec, x: &FeatureMatrix, y: &[ClassId]) -> Result<Self, ClassifierError> {
        spec.validate()?;
        if spec.family == SvmFamily::LinearC {
            return Err(ClassifierError::InvalidSpec("use LinearSvmModel for linear-C".into()));
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
        let n = x.rows();
        let full = (n <= DENSE_LIMIT).then(|| gram(&spec.kernel, &x));

        let pairs: Vec<(ClassId, ClassId)> = classes
            .iter()
            .enumerate()
            .flat_map(|(a, &ca)| classes[a + 1..].iter().map(move |&cb| (ca, cb)))
            .collect();

        let solved: Vec<(Vec<usize>, Vec<f64>, BinarySolution)> = pairs
            .par_iter()
            .map(|&(pos, neg)| {
                let rows: Vec<usize> = (0..n).filter(|&i| y[i] == pos || y[i] == neg).collect();
                let signs: Vec<f64> = rows.iter().map(|&i| if y[i] == pos { 1.0 } else { -1.0 }).collect();
                let sol = match &full {
                    Some(k) => {
                        let m = rows.len();
                        let mut q = Vec::with_capacity(m * m);
                        for (a, &ra) in rows.iter().enumerate() {
                            for (b, &rb) in rows.iter().enumerate() {
                                q.push(signs[a] * signs[b] * k[ra * n + rb]);
                            }
                        }
                        solve_binary(spec, &mut DenseQ::from_q(m, q), &signs)
                    }
                    None => solve_binary(spec, &mut LazyQ::new(spec.kernel, &x, &rows, &signs), &signs),
                };
                sol.map(|s| (rows, signs, s))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| match e {
                ClassifierError::InfeasibleNu { nu, max } => ClassifierError::InfeasibleNu { nu, max },
                other => other,
            })?;

        // Union of support examples shared by all pairs.
        let mut support_of = vec![usize::MAX; n];
        let mut support_rows = Vec::new();
        let mut models = Vec::with_capacity(pairs.len());
        for (&(pos, neg), (rows, signs, sol)) in pairs.iter().zip(solved) {
            let mut pm = PairModel {
                positive: pos,
                negative: neg,
                support: Vec::new(),
                beta: Vec::new(),
                sign: Vec::new(),
                bias: sol.bias,
            };
            for (k, &r) in rows.iter().enumerate() {
                if sol.beta[k] > 0.0 {
                    if support_of[r] == usize::MAX {
                        support_of[r] = support_rows.len();
                        support_rows.push(r);
                    }
                    pm.support.push(support_of[r]);
                    pm.beta.push(sol.beta[k]);
                    pm.sign.push(signs[k]);
                }
            }
            models.push(pm);
        }
        Ok(Self {
            spec: *spec,
            classes,
            support: x.select(&support_rows, None),
            pairs: models,
        })
    }

    pub fn spec(&self) -> &SvmSpec {
        &self.spec
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn pairs(&self) -> &[PairModel] {
        &self.pairs
    }

    pub fn support_count(&self) -> usize {
        self.support.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.support.cols()
    }

    /// Decision value of every pair for one sample.
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        let k: Vec<f64> = self
            .support
            .iter_rows()
            .map(|s| self.spec.kernel.eval_unchecked(s, x))
            .collect();
        self.pairs
            .iter()
            .map(|p| {
                p.support
                    .iter()
                    .zip(&p.beta)
                    .zip(&p.sign)
                    .map(|((&s, b), y)| y * b * k[s])
                    .sum::<f64>()
                    + p.bias
            })
            .collect()
    }

    pub fn predict_one(&self, x: &[f64]) -> ClassId {
        let dec = self.decision_values(x);
        let winners = self
            .pairs
            .iter()
            .zip(&dec)
            .map(|(p, &d)| if d > 0.0 { p.positive } else { p.negative });
        vote(&self.classes, winners)
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

/// Binary SVM on labels in {-1, +1}, kept with its training rows for diagnostics.
#[derive(Clone, Debug)]
pub struct BinarySvm {
    pub solution: BinarySolution,
    kernel: KernelSpec,
    x: FeatureMatrix,
    y: Vec<f64>,
}

impl BinarySvm {
    pub fn train(spec: &SvmSpec, x: &FeatureMatrix, y: &[f64]) -> Result<Self, ClassifierError> {
        spec.validate()?;
        let k = gram(&spec.kernel, x);
        let mut q = DenseQ::from_kernel(&k, y);
        let solution = solve_binary(spec, &mut q, y)?;
        Ok(Self {
            solution,
            kernel: spec.kernel,
            x: x.clone(),
            y: y.to_vec(),
        })
    }

    pub fn decision(&self, sample: &[f64]) -> f64 {
        self.x
            .iter_rows()
            .zip(&self.y)
            .zip(&self.solution.beta)
            .filter(|(_, &b)| b > 0.0)
            .map(|((xi, yi), b)| yi * b * self.kernel.eval_unchecked(xi, sample))
            .sum::<f64>()
            + self.solution.bias
    }

    pub fn support_count(&self) -> usize {
        self.solution.beta.iter().filter(|&&b| b > 0.0).count()
    }

    /// Training examples with functional margin below one (beyond `tol`).
    pub fn margin_errors(&self, tol: f64) -> usize {
        self.x
            .iter_rows()
            .zip(&self.y)
            .filter(|(xi, &yi)| yi * self.decision(xi) < 1.0 - tol)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::kernel::KernelKind;

    fn matrix(rows: &[[f64; 2]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_points_bisector() {
        let x = matrix(&[[1.0, 2.0], [3.0, 0.0]]);
        for c in [0.1, 1.0, 100.0] {
            let m = SvmModel::train(&SvmSpec::c(KernelSpec::linear(), c), &x, &[1, 2]).unwrap();
            // Points along the segment: sign flips at the midpoint (2, 1).
            let near_a = m.decision_values(&[1.5, 1.5])[0];
            let near_b = m.decision_values(&[2.5, 0.5])[0];
            let mid = m.decision_values(&[2.0, 1.0])[0];
            assert!(near_a > 0.0 && near_b < 0.0, "C={c}: {near_a} {near_b}");
            assert!(mid.abs() < 1e-9, "C={c}: {mid}");
            assert_eq!(m.predict(&x).unwrap(), vec![1, 2]);
        }
    }

    #[test]
    fn xor_nu_rbf_fits_training_set() {
        let x = matrix(&[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]);
        let y = [1, 1, 2, 2];
        let spec = SvmSpec::nu(KernelSpec::rbf(1.0), 0.4);
        let m = SvmModel::train(&spec, &x, &y).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y.to_vec());
    }

    #[test]
    fn infeasible_nu_is_reported() {
        let x = matrix(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        // One positive of four: nu must be <= 0.5.
        let err = SvmModel::train(&SvmSpec::nu(KernelSpec::rbf(1.0), 0.8), &x, &[1, 2, 2, 2]).unwrap_err();
        assert!(matches!(err, ClassifierError::InfeasibleNu { .. }), "{err:?}");
    }

    #[test]
    fn single_class_is_an_error() {
        let x = matrix(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            SvmModel::train(&SvmSpec::c(KernelSpec::linear(), 1.0), &x, &[3, 3]),
            Err(ClassifierError::SingleClass)
        ));
    }

    #[test]
    fn beta_non_negative_and_balanced() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.37).sin() + if i % 3 == 0 { 1.0 } else { -1.0 }, (t * 1.3).cos()]
            })
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<ClassId> = (0..30).map(|i| [1, 2, 3][i % 3]).collect();
        for spec in [
            SvmSpec::nu(KernelSpec::rbf(0.5), 0.3),
            SvmSpec::c(KernelSpec::polynomial(0.5, 1.0, 2), 2.0),
            SvmSpec::c(KernelSpec::sigmoid(0.1, 0.0), 1.0),
        ] {
            let m = SvmModel::train(&spec, &x, &y).unwrap();
            assert_eq!(m.pairs().len(), 3);
            for p in m.pairs() {
                assert!(p.beta.iter().all(|&b| b > 0.0));
                let upper = match spec.family {
                    SvmFamily::C => spec.c,
                    _ => f64::INFINITY,
                };
                assert!(p.beta.iter().all(|&b| b <= upper + 1e-12));
                let balance: f64 = p.beta.iter().zip(&p.sign).map(|(b, s)| b * s).sum();
                let scale = p.beta.iter().copied().fold(1.0, f64::max);
                assert!(balance.abs() <= 1e-9 * scale, "{:?}: {balance}", spec.kernel.kind);
                assert!(p.sign.iter().any(|&s| s > 0.0) && p.sign.iter().any(|&s| s < 0.0));
            }
        }
    }

    #[test]
    fn record_order_does_not_change_predictions() {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| vec![(i as f64 * 0.7).sin() + (i % 2) as f64, (i as f64 * 0.3).cos()])
            .collect();
        let y: Vec<ClassId> = (0..24).map(|i| 1 + (i % 2) as ClassId).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let perm: Vec<usize> = (0..24).rev().collect();
        let xp = x.select(&perm, None);
        let yp: Vec<ClassId> = perm.iter().map(|&i| y[i]).collect();
        let spec = SvmSpec::nu(KernelSpec::rbf(2.0), 0.2);
        let a = SvmModel::train(&spec, &x, &y).unwrap();
        let b = SvmModel::train(&spec, &xp, &yp).unwrap();
        let grid: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.05 - 0.5, (i as f64 * 0.11).sin()]).collect();
        let q = FeatureMatrix::from_rows(&grid).unwrap();
        assert_eq!(a.predict(&q).unwrap(), b.predict(&q).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn lazy_rows_match_dense() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3, (i as f64).sin()]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y = vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0];
        let kernel = KernelSpec {
            kind: KernelKind::Rbf,
            gamma: 0.8,
            coef0: 0.0,
            degree: 1,
        };
        let all: Vec<usize> = (0..7).collect();
        let mut lazy = LazyQ::new(kernel, &x, &all, &y);
        let mut dense = DenseQ::from_kernel(&gram(&kernel, &x), &y);
        let (mut a, mut b) = (vec![0.0; 7], vec![0.0; 7]);
        for i in 0..7 {
            lazy.row_into(i, &mut a);
            dense.row_into(i, &mut b);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
            assert!((lazy.diag(i) - dense.diag(i)).abs() < 1e-12);
        }
    }
}
