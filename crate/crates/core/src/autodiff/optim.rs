use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Append a parameter and return its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrite all values from a flat slice in parameter order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::ParamCount {
                expected: self.num_values(),
                found: values.len(),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn new(grads: Vec<Tensor>) -> Self {
        Gradients(grads)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.0[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn check_aligned(&self, params: &ParamStore) -> Result<()> {
        if self.0.len() != params.len() {
            return Err(Error::Validation(format!(
                "{} gradients for {} parameters",
                self.0.len(),
                params.len()
            )));
        }
        for (i, g) in self.0.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(Error::Dimension {
                    op: "optimizer step",
                    lhs: params.get(i).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.get(i).len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        grads.check_aligned(params)?;
        if self.first.len() != params.len() {
            return Err(Error::Validation("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let g = grads.get(i).data();
            for (j, p) in params.get_mut(i).data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { steps: u64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(params)),
            OptimizerKind::Sgd => Optimizer::Sgd { steps: 0 },
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads, lr),
            Optimizer::Sgd { steps } => {
                grads.check_aligned(params)?;
                *steps += 1;
                for i in 0..params.len() {
                    let g = grads.get(i).data();
                    for (p, gv) in params.get_mut(i).data_mut().iter_mut().zip(g) {
                        *p -= lr * gv;
                    }
                }
                Ok(())
            }
        }
    }
}
