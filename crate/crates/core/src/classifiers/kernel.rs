use serde::{Deserialize, Serialize};

use super::ClassifierError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Linear,
    Rbf,
    Polynomial,
    Sigmoid,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Polynomial => "polynomial",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

/// Kernel with its parameters. Fields a kind does not use are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub coef0: f64,
    pub degree: u32,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: 1.0,
            coef0: 0.0,
            degree: 1,
        }
    }

    pub fn rbf(gamma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            gamma,
            ..Self::linear()
        }
    }

    pub fn polynomial(gamma: f64, coef0: f64, degree: u32) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            gamma,
            coef0,
            degree,
        }
    }

    pub fn sigmoid(gamma: f64, coef0: f64) -> Self {
        Self {
            kind: KernelKind::Sigmoid,
            gamma,
            coef0,
            degree: 1,
        }
    }

    /// A polynomial with `degree == 0` and `coef0 == 0` is the plain dot product.
    pub fn is_effectively_linear(&self) -> bool {
        match self.kind {
            KernelKind::Linear => true,
            KernelKind::Polynomial => self.degree == 0 && self.coef0 == 0.0,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let needs_gamma = matches!(
            self.kind,
            KernelKind::Rbf | KernelKind::Polynomial | KernelKind::Sigmoid
        ) && !self.is_effectively_linear();
        if needs_gamma && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ClassifierError::InvalidSpec(format!(
                "{} kernel needs gamma > 0, got {}",
                self.kind.name(),
                self.gamma
            )));
        }
        if !self.coef0.is_finite() {
            return Err(ClassifierError::InvalidSpec("coef0 must be finite".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, ClassifierError> {
        if x.len() != y.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel value for equal-length slices.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.is_effectively_linear() {
            return dot(x, y);
        }
        match self.kind {
            KernelKind::Linear => dot(x, y),
            KernelKind::Rbf => (-self.gamma * sq_dist(x, y)).exp(),
            KernelKind::Polynomial => powi(self.gamma * dot(x, y) + self.coef0, self.degree),
            KernelKind::Sigmoid => (self.gamma * dot(x, y) + self.coef0).tanh(),
        }
    }

    /// Kernel value from a precomputed dot product and squared norms.
    #[inline]
    pub(crate) fn eval_dot(&self, dot_xy: f64, norm_x: f64, norm_y: f64) -> f64 {
        if self.is_effectively_linear() {
            return dot_xy;
        }
        match self.kind {
            KernelKind::Linear => dot_xy,
            KernelKind::Rbf => (-self.gamma * (norm_x + norm_y - 2.0 * dot_xy).max(0.0)).exp(),
            KernelKind::Polynomial => powi(self.gamma * dot_xy + self.coef0, self.degree),
            KernelKind::Sigmoid => (self.gamma * dot_xy + self.coef0).tanh(),
        }
    }
}

#[inline]
fn powi(base: f64, degree: u32) -> f64 {
    base.powi(degree as i32)
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rbf_self_similarity_is_one() {
        let x = [0.3, -1.2, 4.0];
        for g in [0.001, 0.5, 5.0] {
            assert_eq!(KernelSpec::rbf(g).eval(&x, &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn degenerate_polynomial_is_linear() {
        let k = KernelSpec::polynomial(2.5, 0.0, 0);
        assert_eq!(k.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        // A zero degree with an offset is the constant kernel.
        let k = KernelSpec::polynomial(2.5, 1.0, 0);
        assert_eq!(k.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn sigmoid_orthogonal_is_zero() {
        let k = KernelSpec::sigmoid(1.0, 0.0);
        assert_eq!(k.eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn polynomial_formula() {
        let k = KernelSpec::polynomial(0.5, 1.0, 3);
        // (0.5 * 11 + 1)^3
        assert!((k.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap() - 274.625).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(KernelSpec::linear().eval(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn eval_dot_agrees_with_direct() {
        let x = [0.5, -0.25, 2.0];
        let y = [1.5, 0.75, -1.0];
        for k in [
            KernelSpec::linear(),
            KernelSpec::rbf(0.7),
            KernelSpec::polynomial(0.3, 1.2, 3),
            KernelSpec::sigmoid(0.2, -0.4),
        ] {
            let direct = k.eval(&x, &y).unwrap();
            let via = k.eval_dot(dot(&x, &y), dot(&x, &x), dot(&y, &y));
            assert!((direct - via).abs() < 1e-12, "{k:?}");
        }
    }

    fn any_kernel() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            Just(KernelSpec::linear()),
            (0.001f64..5.0).prop_map(KernelSpec::rbf),
            (0.001f64..5.0, 0.01f64..10.0, 1u32..=5).prop_map(|(g, c, d)| KernelSpec::polynomial(g, c, d)),
            (0.001f64..5.0, 0.01f64..10.0).prop_map(|(g, c)| KernelSpec::sigmoid(g, c)),
        ]
    }

    proptest! {
        #[test]
        fn kernels_are_symmetric(
            k in any_kernel(),
            xy in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..8),
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        }
    }
}
