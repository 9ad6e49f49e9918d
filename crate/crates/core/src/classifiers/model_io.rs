//! Versioned binary record for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HSMODEL\0"  u32 version  u8 family-tag
//! u32 input_dim  u8 has_mask  [u32 count, u32 index...]
//! family payload: spec, then coefficients
//! ```

use super::kernel::{KernelKind, KernelSpec};
use super::knn::{KnnModel, KnnSpec, Metric, Weighting};
use super::linear::{LinearLoss, LinearPair, LinearSvmModel};
use super::mlp::{Activation, MlpModel, MlpSpec, Network};
use super::qp::SolverParams;
use super::svm::{PairModel, SvmFamily, SvmModel, SvmSpec};
use super::{ClassifierError, FittedModel, TrainedModel};
use crate::data::{ClassId, FeatureMatrix};

const MAGIC: &[u8; 8] = b"HSMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

const TAG_SVM: u8 = 1;
const TAG_LINEAR: u8 = 2;
const TAG_KNN: u8 = 3;
const TAG_MLP: u8 = 4;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn usizes(&mut self, v: &[usize]) {
        self.u32(v.len());
        for &x in v {
            self.u32(x);
        }
    }
    fn classes(&mut self, v: &[ClassId]) {
        self.u32(v.len());
        for &c in v {
            self.u16(c);
        }
    }
    fn matrix(&mut self, m: &FeatureMatrix) {
        self.u32(m.rows());
        self.u32(m.cols());
        for &v in m.as_slice() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

fn format_err(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::Format(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format_err("unexpected end of model record"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ClassifierError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<usize, ClassifierError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, ClassifierError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, width: usize) -> Result<usize, ClassifierError> {
        let n = self.u32()?;
        if n.saturating_mul(width) > self.buf.len() - self.at {
            return Err(format_err("length field exceeds record size"));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>, ClassifierError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>, ClassifierError> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn classes(&mut self) -> Result<Vec<ClassId>, ClassifierError> {
        let n = self.len(2)?;
        (0..n).map(|_| self.u16()).collect()
    }
    fn matrix(&mut self) -> Result<FeatureMatrix, ClassifierError> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        if rows.saturating_mul(cols).saturating_mul(8) > self.buf.len() - self.at {
            return Err(format_err("matrix exceeds record size"));
        }
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        FeatureMatrix::new(rows, cols, data).map_err(|e| format_err(e.to_string()))
    }
}

fn write_kernel(w: &mut Writer, k: &KernelSpec) {
    w.u8(match k.kind {
        KernelKind::Linear => 0,
        KernelKind::Rbf => 1,
        KernelKind::Polynomial => 2,
        KernelKind::Sigmoid => 3,
    });
    w.f64(k.gamma);
    w.f64(k.coef0);
    w.u32(k.degree as usize);
}

fn read_kernel(r: &mut Reader) -> Result<KernelSpec, ClassifierError> {
    let kind = match r.u8()? {
        0 => KernelKind::Linear,
        1 => KernelKind::Rbf,
        2 => KernelKind::Polynomial,
        3 => KernelKind::Sigmoid,
        t => return Err(format_err(format!("unknown kernel tag {t}"))),
    };
    Ok(KernelSpec {
        kind,
        gamma: r.f64()?,
        coef0: r.f64()?,
        degree: r.u32()? as u32,
    })
}

fn write_svm_spec(w: &mut Writer, s: &SvmSpec) {
    w.u8(match s.family {
        SvmFamily::Nu => 0,
        SvmFamily::C => 1,
        SvmFamily::LinearC => 2,
    });
    write_kernel(w, &s.kernel);
    w.f64(s.nu);
    w.f64(s.c);
    w.u8(match s.loss {
        LinearLoss::Hinge => 0,
        LinearLoss::SquaredHinge => 1,
    });
    w.f64(s.solver.eps);
    w.u64(s.solver.max_iter_per_var as u64);
}

fn read_svm_spec(r: &mut Reader) -> Result<SvmSpec, ClassifierError> {
    let family = match r.u8()? {
        0 => SvmFamily::Nu,
        1 => SvmFamily::C,
        2 => SvmFamily::LinearC,
        t => return Err(format_err(format!("unknown SVM family tag {t}"))),
    };
    let kernel = read_kernel(r)?;
    let nu = r.f64()?;
    let c = r.f64()?;
    let loss = match r.u8()? {
        0 => LinearLoss::Hinge,
        1 => LinearLoss::SquaredHinge,
        t => return Err(format_err(format!("unknown loss tag {t}"))),
    };
    let eps = r.f64()?;
    let max_iter_per_var = r.u64()? as usize;
    Ok(SvmSpec {
        family,
        kernel,
        nu,
        c,
        loss,
        solver: SolverParams { eps, max_iter_per_var },
    })
}

/// Serialises a fitted model.
pub fn encode(model: &FittedModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.u8(match &model.model {
        TrainedModel::Svm(_) => TAG_SVM,
        TrainedModel::Linear(_) => TAG_LINEAR,
        TrainedModel::Knn(_) => TAG_KNN,
        TrainedModel::Mlp(_) => TAG_MLP,
    });
    w.u32(model.input_dim);
    match &model.features {
        Some(f) => {
            w.u8(1);
            w.usizes(f);
        }
        None => w.u8(0),
    }
    match &model.model {
        TrainedModel::Svm(m) => {
            write_svm_spec(&mut w, &m.spec);
            w.classes(&m.classes);
            w.matrix(&m.support);
            w.u32(m.pairs.len());
            for p in &m.pairs {
                w.u16(p.positive);
                w.u16(p.negative);
                w.f64(p.bias);
                w.usizes(&p.support);
                w.f64s(&p.beta);
                w.f64s(&p.sign);
            }
        }
        TrainedModel::Linear(m) => {
            write_svm_spec(&mut w, &m.spec);
            w.classes(&m.classes);
            w.u32(m.input_dim);
            w.u32(m.pairs.len());
            for p in &m.pairs {
                w.u16(p.positive);
                w.u16(p.negative);
                w.f64(p.bias);
                w.f64s(&p.weights);
            }
        }
        TrainedModel::Knn(m) => {
            w.u32(m.spec.k);
            w.u8(match m.spec.metric {
                Metric::Euclidean => 0,
                Metric::Manhattan => 1,
                Metric::Chebyshev => 2,
            });
            w.u8(match m.spec.weighting {
                Weighting::Uniform => 0,
                Weighting::Distance => 1,
            });
            w.matrix(&m.x);
            w.classes(&m.y);
        }
        TrainedModel::Mlp(m) => {
            let s = &m.spec;
            w.usizes(&s.hidden);
            w.u8(match s.activation {
                Activation::Sigmoid => 0,
                Activation::Tanh => 1,
                Activation::Relu => 2,
            });
            w.f64(s.dropout);
            w.f64(s.learning_rate);
            w.u32(s.batch_size);
            w.u32(s.iterations);
            w.u64(s.seed);
            w.classes(&m.classes);
            w.f64s(&m.mean);
            w.f64s(&m.scale);
            w.usizes(m.network.sizes());
            w.f64s(&m.network.params());
            w.f64s(&m.loss_history);
        }
    }
    w.0
}

/// Parses a record written by [`encode`].
pub fn decode(buf: &[u8]) -> Result<FittedModel, ClassifierError> {
    let mut r = Reader { buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(format_err("not a model record"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported model format version {version}")));
    }
    let tag = r.u8()?;
    let input_dim = r.u32()?;
    let features = match r.u8()? {
        0 => None,
        1 => Some(r.usizes()?),
        t => return Err(format_err(format!("bad feature-mask flag {t}"))),
    };
    let model = match tag {
        TAG_SVM => {
            let spec = read_svm_spec(&mut r)?;
            let classes = r.classes()?;
            let support = r.matrix()?;
            let n = r.len(4)?;
            let mut pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let positive = r.u16()?;
                let negative = r.u16()?;
                let bias = r.f64()?;
                let sv = r.usizes()?;
                let beta = r.f64s()?;
                let sign = r.f64s()?;
                if sv.len() != beta.len() || sv.len() != sign.len() || sv.iter().any(|&i| i >= support.rows()) {
                    return Err(format_err("inconsistent pair record"));
                }
                pairs.push(PairModel {
                    positive,
                    negative,
                    support: sv,
                    beta,
                    sign,
                    bias,
                });
            }
            TrainedModel::Svm(SvmModel {
                spec,
                classes,
                support,
                pairs,
            })
        }
        TAG_LINEAR => {
            let spec = read_svm_spec(&mut r)?;
            let classes = r.classes()?;
            let dim = r.u32()?;
            let n = r.len(4)?;
            let mut pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let positive = r.u16()?;
                let negative = r.u16()?;
                let bias = r.f64()?;
                let weights = r.f64s()?;
                if weights.len() != dim {
                    return Err(format_err("weight vector has the wrong length"));
                }
                pairs.push(LinearPair {
                    positive,
                    negative,
                    weights,
                    bias,
                });
            }
            TrainedModel::Linear(LinearSvmModel {
                spec,
                classes,
                input_dim: dim,
                pairs,
            })
        }
        TAG_KNN => {
            let k = r.u32()?;
            let metric = match r.u8()? {
                0 => Metric::Euclidean,
                1 => Metric::Manhattan,
                2 => Metric::Chebyshev,
                t => return Err(format_err(format!("unknown metric tag {t}"))),
            };
            let weighting = match r.u8()? {
                0 => Weighting::Uniform,
                1 => Weighting::Distance,
                t => return Err(format_err(format!("unknown weighting tag {t}"))),
            };
            let x = r.matrix()?;
            let y = r.classes()?;
            if y.len() != x.rows() {
                return Err(format_err("label count differs from stored records"));
            }
            TrainedModel::Knn(KnnModel {
                spec: KnnSpec { k, metric, weighting },
                x,
                y,
            })
        }
        TAG_MLP => {
            let hidden = r.usizes()?;
            let activation = match r.u8()? {
                0 => Activation::Sigmoid,
                1 => Activation::Tanh,
                2 => Activation::Relu,
                t => return Err(format_err(format!("unknown activation tag {t}"))),
            };
            let spec = MlpSpec {
                hidden,
                activation,
                dropout: r.f64()?,
                learning_rate: r.f64()?,
                batch_size: r.u32()?,
                iterations: r.u32()?,
                seed: r.u64()?,
            };
            let classes = r.classes()?;
            let mean = r.f64s()?;
            let scale = r.f64s()?;
            let sizes = r.usizes()?;
            let params = r.f64s()?;
            let loss_history = r.f64s()?;
            if sizes.len() < 2 {
                return Err(format_err("network needs at least two layers"));
            }
            let mut network = Network::new(&sizes, activation, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
            if params.len() != network.param_count() {
                return Err(format_err("parameter count does not match layer sizes"));
            }
            network.set_params(&params);
            TrainedModel::Mlp(MlpModel {
                spec,
                classes,
                mean,
                scale,
                network,
                loss_history,
            })
        }
        t => return Err(format_err(format!("unknown model family tag {t}"))),
    };
    if r.at != buf.len() {
        return Err(format_err("trailing bytes after model record"));
    }
    if model.input_dim() != features.as_ref().map_or(input_dim, Vec::len) {
        return Err(format_err("feature mask does not match model width"));
    }
    Ok(FittedModel {
        input_dim,
        features,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ClassifierSpec;

    fn data() -> (FeatureMatrix, Vec<ClassId>) {
        let rows: Vec<Vec<f64>> = (0..18)
            .map(|i| {
                let c = (i % 3) as f64;
                vec![c + 0.1 * (i as f64).sin(), -c + 0.2 * (i as f64).cos(), 0.5 * (i as f64 * 0.3).sin()]
            })
            .collect();
        let y = (0..18).map(|i| [1, 3, 7][i % 3]).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn every_family_round_trips() {
        let (x, y) = data();
        let specs = [
            ClassifierSpec::Svm(SvmSpec::nu(KernelSpec::rbf(0.5), 0.3)),
            ClassifierSpec::Svm(SvmSpec::c(KernelSpec::polynomial(0.5, 1.0, 3), 10.0)),
            ClassifierSpec::Svm(SvmSpec::linear(1.0, LinearLoss::SquaredHinge)),
            ClassifierSpec::Knn(KnnSpec::new(3, Metric::Chebyshev, Weighting::Distance)),
            ClassifierSpec::Mlp(MlpSpec {
                hidden: vec![5, 4],
                iterations: 5,
                batch_size: 6,
                ..MlpSpec::default()
            }),
        ];
        for spec in specs {
            let fitted = FittedModel::fit(&spec, Some(&[0, 2]), &x, &y).unwrap();
            let bytes = encode(&fitted);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, fitted, "{spec}");
            assert_eq!(back.predict(&x).unwrap(), fitted.predict(&x).unwrap());
        }
    }

    #[test]
    fn rejects_corrupt_records() {
        let (x, y) = data();
        let spec = ClassifierSpec::Knn(KnnSpec::new(1, Metric::Euclidean, Weighting::Uniform));
        let bytes = encode(&FittedModel::fit(&spec, None, &x, &y).unwrap());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(decode(&bad).is_err());
        assert!(decode(b"nonsense").is_err());
    }
}
