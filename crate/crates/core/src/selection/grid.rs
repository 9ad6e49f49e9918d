use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Fitness, ModelSpec, SelectionError};
use crate::classifiers::{
    ClassifierSpec, Family, KernelKind, KernelSpec, KnnSpec, LinearLoss, Metric, MlpSpec, SvmSpec, Weighting,
};
use crate::seed;

/// Cartesian product of parameter axes for one classifier family and kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GridBlock {
    NuSvm {
        kernel: KernelKind,
        nu: Vec<f64>,
        gamma: Vec<f64>,
        coef0: Vec<f64>,
        degree: Vec<u32>,
    },
    Svc {
        kernel: KernelKind,
        c: Vec<f64>,
        gamma: Vec<f64>,
        coef0: Vec<f64>,
        degree: Vec<u32>,
    },
    Lsvc {
        c: Vec<f64>,
        loss: Vec<LinearLoss>,
    },
    Knn {
        k: Vec<usize>,
        metric: Vec<Metric>,
        weighting: Vec<Weighting>,
    },
    Mlp {
        hidden: Vec<Vec<usize>>,
        dropout: Vec<f64>,
        learning_rate: Vec<f64>,
        batch_size: Vec<usize>,
        iterations: Vec<usize>,
    },
}

fn kernel(kind: KernelKind, gamma: f64, coef0: f64, degree: u32) -> KernelSpec {
    match kind {
        KernelKind::Linear => KernelSpec::linear(),
        KernelKind::Rbf => KernelSpec::rbf(gamma),
        KernelKind::Polynomial => KernelSpec::polynomial(gamma, coef0, degree),
        KernelKind::Sigmoid => KernelSpec::sigmoid(gamma, coef0),
    }
}

/// Kernel axes, collapsing those the kernel ignores to one value.
fn kernel_axes(kind: KernelKind, gamma: &[f64], coef0: &[f64], degree: &[u32]) -> Vec<KernelSpec> {
    let g: &[f64] = if kind == KernelKind::Linear { &[1.0] } else { gamma };
    let c: &[f64] = if matches!(kind, KernelKind::Polynomial | KernelKind::Sigmoid) { coef0 } else { &[0.0] };
    let d: &[u32] = if kind == KernelKind::Polynomial { degree } else { &[1] };
    let mut out = Vec::with_capacity(g.len() * c.len() * d.len());
    for &dv in d {
        for &gv in g {
            for &cv in c {
                out.push(kernel(kind, gv, cv, dv));
            }
        }
    }
    out
}

impl GridBlock {
    pub fn points(&self) -> Vec<ClassifierSpec> {
        match self {
            GridBlock::NuSvm { kernel, nu, gamma, coef0, degree } => {
                let kernels = kernel_axes(*kernel, gamma, coef0, degree);
                nu.iter()
                    .flat_map(|&n| kernels.iter().map(move |&k| ClassifierSpec::Svm(SvmSpec::nu(k, n))))
                    .collect()
            }
            GridBlock::Svc { kernel, c, gamma, coef0, degree } => {
                let kernels = kernel_axes(*kernel, gamma, coef0, degree);
                c.iter()
                    .flat_map(|&cv| kernels.iter().map(move |&k| ClassifierSpec::Svm(SvmSpec::c(k, cv))))
                    .collect()
            }
            GridBlock::Lsvc { c, loss } => loss
                .iter()
                .flat_map(|&l| c.iter().map(move |&cv| ClassifierSpec::Svm(SvmSpec::linear(cv, l))))
                .collect(),
            GridBlock::Knn { k, metric, weighting } => {
                let mut out = Vec::new();
                for &m in metric {
                    for &w in weighting {
                        for &kv in k {
                            out.push(ClassifierSpec::Knn(KnnSpec::new(kv, m, w)));
                        }
                    }
                }
                out
            }
            GridBlock::Mlp {
                hidden,
                dropout,
                learning_rate,
                batch_size,
                iterations,
            } => {
                let mut out = Vec::new();
                for h in hidden {
                    for &d in dropout {
                        for &lr in learning_rate {
                            for &b in batch_size {
                                for &it in iterations {
                                    out.push(ClassifierSpec::Mlp(MlpSpec {
                                        hidden: h.clone(),
                                        dropout: d,
                                        learning_rate: lr,
                                        batch_size: b,
                                        iterations: it,
                                        ..MlpSpec::default()
                                    }));
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn len(&self) -> usize {
        let axes = |k: KernelKind, g: usize, c: usize, d: usize| {
            let g = if k == KernelKind::Linear { 1 } else { g };
            let c = if matches!(k, KernelKind::Polynomial | KernelKind::Sigmoid) { c } else { 1 };
            let d = if k == KernelKind::Polynomial { d } else { 1 };
            g * c * d
        };
        match self {
            GridBlock::NuSvm { kernel, nu, gamma, coef0, degree } => {
                nu.len() * axes(*kernel, gamma.len(), coef0.len(), degree.len())
            }
            GridBlock::Svc { kernel, c, gamma, coef0, degree } => {
                c.len() * axes(*kernel, gamma.len(), coef0.len(), degree.len())
            }
            GridBlock::Lsvc { c, loss } => c.len() * loss.len(),
            GridBlock::Knn { k, metric, weighting } => k.len() * metric.len() * weighting.len(),
            GridBlock::Mlp {
                hidden,
                dropout,
                learning_rate,
                batch_size,
                iterations,
            } => hidden.len() * dropout.len() * learning_rate.len() * batch_size.len() * iterations.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Union of blocks, enumerated block by block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub blocks: Vec<GridBlock>,
}

const DECADES: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
const NU: [f64; 5] = [0.001, 0.1, 0.2, 0.3, 0.4];
const COEF0: [f64; 5] = [0.01, 0.1, 1.0, 5.0, 10.0];
const DEGREE: [u32; 5] = [1, 2, 3, 4, 5];
const SVM_KERNELS: [KernelKind; 3] = [KernelKind::Rbf, KernelKind::Polynomial, KernelKind::Sigmoid];

impl GridSpec {
    pub fn single(spec: ClassifierSpec) -> Self {
        let block = match spec {
            ClassifierSpec::Svm(s) => match s.family {
                crate::classifiers::SvmFamily::Nu => GridBlock::NuSvm {
                    kernel: s.kernel.kind,
                    nu: vec![s.nu],
                    gamma: vec![s.kernel.gamma],
                    coef0: vec![s.kernel.coef0],
                    degree: vec![s.kernel.degree],
                },
                crate::classifiers::SvmFamily::C => GridBlock::Svc {
                    kernel: s.kernel.kind,
                    c: vec![s.c],
                    gamma: vec![s.kernel.gamma],
                    coef0: vec![s.kernel.coef0],
                    degree: vec![s.kernel.degree],
                },
                crate::classifiers::SvmFamily::LinearC => GridBlock::Lsvc {
                    c: vec![s.c],
                    loss: vec![s.loss],
                },
            },
            ClassifierSpec::Knn(s) => GridBlock::Knn {
                k: vec![s.k],
                metric: vec![s.metric],
                weighting: vec![s.weighting],
            },
            ClassifierSpec::Mlp(s) => GridBlock::Mlp {
                hidden: vec![s.hidden],
                dropout: vec![s.dropout],
                learning_rate: vec![s.learning_rate],
                batch_size: vec![s.batch_size],
                iterations: vec![s.iterations],
            },
        };
        Self { blocks: vec![block] }
    }

    /// Full-resolution grid for one family.
    pub fn paper(family: Family) -> Self {
        let blocks = match family {
            Family::NuSvm => SVM_KERNELS
                .iter()
                .map(|&kernel| GridBlock::NuSvm {
                    kernel,
                    nu: NU.to_vec(),
                    gamma: DECADES.to_vec(),
                    coef0: COEF0.to_vec(),
                    degree: DEGREE.to_vec(),
                })
                .collect(),
            Family::Svc => SVM_KERNELS
                .iter()
                .map(|&kernel| GridBlock::Svc {
                    kernel,
                    c: DECADES.to_vec(),
                    gamma: DECADES.to_vec(),
                    coef0: COEF0.to_vec(),
                    degree: DEGREE.to_vec(),
                })
                .collect(),
            Family::Lsvc => vec![GridBlock::Lsvc {
                c: DECADES.to_vec(),
                loss: vec![LinearLoss::Hinge, LinearLoss::SquaredHinge],
            }],
            Family::Knn => vec![GridBlock::Knn {
                k: (1..=20).collect(),
                metric: vec![Metric::Euclidean, Metric::Manhattan, Metric::Chebyshev],
                weighting: vec![Weighting::Uniform, Weighting::Distance],
            }],
            Family::Mlp => vec![GridBlock::Mlp {
                hidden: vec![vec![1000], vec![30, 30], vec![1000, 1000], vec![1000, 1000, 1000]],
                dropout: vec![0.0, 0.5],
                learning_rate: vec![0.1, 0.01, 0.001],
                batch_size: vec![50, 100],
                iterations: (1..=10).map(|i| i * 50).collect(),
            }],
        };
        Self { blocks }
    }

    /// Coarse grid for quick runs.
    pub fn desk(family: Family) -> Self {
        let blocks = match family {
            Family::NuSvm => vec![GridBlock::NuSvm {
                kernel: KernelKind::Rbf,
                nu: vec![0.1, 0.2, 0.3],
                gamma: vec![0.01, 0.1, 1.0, 10.0],
                coef0: vec![0.0],
                degree: vec![1],
            }],
            Family::Svc => vec![GridBlock::Svc {
                kernel: KernelKind::Rbf,
                c: vec![1.0, 10.0, 100.0, 1000.0],
                gamma: vec![0.01, 0.1, 1.0, 10.0],
                coef0: vec![0.0],
                degree: vec![1],
            }],
            Family::Lsvc => vec![GridBlock::Lsvc {
                c: vec![0.01, 1.0, 100.0],
                loss: vec![LinearLoss::Hinge, LinearLoss::SquaredHinge],
            }],
            Family::Knn => vec![GridBlock::Knn {
                k: vec![1, 3, 5, 10],
                metric: vec![Metric::Euclidean, Metric::Manhattan, Metric::Chebyshev],
                weighting: vec![Weighting::Uniform, Weighting::Distance],
            }],
            Family::Mlp => vec![GridBlock::Mlp {
                hidden: vec![vec![30, 30]],
                dropout: vec![0.0],
                learning_rate: vec![0.1],
                batch_size: vec![50],
                iterations: vec![100, 200],
            }],
        };
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(GridBlock::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point in enumeration order.
    pub fn points(&self) -> Vec<ClassifierSpec> {
        self.blocks.iter().flat_map(GridBlock::points).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: ModelSpec,
    pub best_fitness: f64,
    /// Every point with its fitness, in enumeration order.
    pub evaluated: Vec<(ModelSpec, f64)>,
}

/// Evaluates every grid point on all features and returns the most accurate;
/// ties go to the earlier point.
pub fn grid_search(grid: &GridSpec, fitness: &dyn Fitness, seed: u64) -> Result<GridResult, SelectionError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(SelectionError::InvalidConfig("grid has no points".into()));
    }
    let specs: Vec<ModelSpec> = points.into_iter().map(ModelSpec::all_features).collect();
    let scores: Vec<_> = specs
        .par_iter()
        .enumerate()
        .map(|(i, m)| fitness.evaluate(m, seed::derive(seed, &[i as u64])))
        .collect();
    let mut evaluated = Vec::with_capacity(specs.len());
    for (i, (m, r)) in specs.into_iter().zip(scores).enumerate() {
        let f = r.map_err(|source| SelectionError::Fitness {
            context: format!("grid point {i} ({m})"),
            source,
        })?;
        evaluated.push((m, f));
    }
    let mut best = 0;
    for (i, (_, f)) in evaluated.iter().enumerate() {
        if f.total_cmp(&evaluated[best].1).is_gt() {
            best = i;
        }
    }
    Ok(GridResult {
        best: evaluated[best].0.clone(),
        best_fitness: evaluated[best].1,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::FitnessError;

    fn constant(_: &ModelSpec, _: u64) -> Result<f64, FitnessError> {
        Ok(50.0)
    }

    #[test]
    fn singleton_grid() {
        let spec = ClassifierSpec::Knn(KnnSpec::new(3, Metric::Manhattan, Weighting::Distance));
        let r = grid_search(&GridSpec::single(spec.clone()), &constant, 0).unwrap();
        assert_eq!(r.best.classifier, spec);
        assert_eq!(r.best.features, None);
    }

    #[test]
    fn indicator_fitness_finds_its_point() {
        let grid = GridSpec::paper(Family::Knn);
        let target = grid.points()[77].clone();
        let t = target.clone();
        let indicator = move |m: &ModelSpec, _: u64| -> Result<f64, FitnessError> { Ok(f64::from(u8::from(m.classifier == t))) };
        assert_eq!(grid_search(&grid, &indicator, 1).unwrap().best.classifier, target);
    }

    #[test]
    fn ties_go_to_the_first_point() {
        let grid = GridSpec {
            blocks: vec![GridBlock::Knn {
                k: vec![1, 2],
                metric: vec![Metric::Euclidean],
                weighting: vec![Weighting::Uniform],
            }],
        };
        let r = grid_search(&grid, &constant, 0).unwrap();
        assert_eq!(r.best.classifier, ClassifierSpec::Knn(KnnSpec::new(1, Metric::Euclidean, Weighting::Uniform)));
        assert_eq!(r.evaluated.len(), 2);
    }

    #[test]
    fn sizes_match_axis_products() {
        // rbf: 5 nu x 7 gamma; poly: 5 x 7 x 5 x 5; sigmoid: 5 x 7 x 5
        assert_eq!(GridSpec::paper(Family::NuSvm).len(), 35 + 875 + 175);
        assert_eq!(GridSpec::paper(Family::Svc).len(), 49 + 1225 + 245);
        assert_eq!(GridSpec::paper(Family::Lsvc).len(), 14);
        assert_eq!(GridSpec::paper(Family::Knn).len(), 120);
        assert_eq!(GridSpec::paper(Family::Mlp).len(), 480);
        for f in Family::ALL {
            for g in [GridSpec::paper(f), GridSpec::desk(f)] {
                assert_eq!(g.points().len(), g.len());
                assert!(g.points().iter().all(|p| p.family() == f));
            }
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(grid_search(&GridSpec { blocks: vec![] }, &constant, 0).is_err());
    }
}
