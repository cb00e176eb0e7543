use super::LearnerError;
use crate::pipeline::SampleTensor;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, LearnerError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(LearnerError::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LearnerError::NonFinite("tensor"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }
}

/// Stacks samples into an `N × (A·U) × S × K'` batch; channel `a·U + u`.
pub fn batch_from_samples(samples: &[&SampleTensor]) -> Result<(Tensor, Vec<usize>), LearnerError> {
    let first = samples.first().ok_or(LearnerError::EmptyDataset)?;
    let sh = first.shape;
    let (s_n, k_n, a_n, u_n) = (sh.s, sh.k, sh.a, sh.u);
    let per = sh.len();
    let mut data = vec![0.0; samples.len() * per];
    let mut labels = Vec::with_capacity(samples.len());
    for (i, t) in samples.iter().enumerate() {
        if t.shape != sh || t.data.len() != per {
            return Err(LearnerError::Shape("samples in a batch differ in shape".into()));
        }
        let out = &mut data[i * per..(i + 1) * per];
        for s in 0..s_n {
            for k in 0..k_n {
                for a in 0..a_n {
                    for u in 0..u_n {
                        let c = a * u_n + u;
                        out[(c * s_n + s) * k_n + k] = t.data[sh.index(s, k, a, u)];
                    }
                }
            }
        }
        labels.push(t.label);
    }
    Ok((Tensor::new(vec![samples.len(), a_n * u_n, s_n, k_n], data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::TensorShape;

    #[test]
    fn rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn channel_layout() {
        let shape = TensorShape { s: 2, k: 3, a: 2, u: 2 };
        let data = (0..shape.len()).map(|i| i as f64).collect();
        let t = SampleTensor { shape, label: 4, data };
        let (b, labels) = batch_from_samples(&[&t, &t]).unwrap();
        assert_eq!(b.shape(), &[2, 4, 2, 3]);
        assert_eq!(labels, vec![4, 4]);
        for s in 0..2 {
            for k in 0..3 {
                for a in 0..2 {
                    for u in 0..2 {
                        let c = a * 2 + u;
                        assert_eq!(b.data()[24 + (c * 2 + s) * 3 + k], t.get(s, k, a, u));
                    }
                }
            }
        }
    }
}
