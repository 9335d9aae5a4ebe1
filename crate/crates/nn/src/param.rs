//! Named trainable parameters and gradient buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::NnError;

/// Index of a tensor inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(NnError::Shape(format!("param values {} vs shape {:?}", values.len(), shape)));
        }
        Ok(Self {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            values,
            requires_grad: true,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// All parameters of a model plus the rng used to initialize them.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-uniform weight matrix `fan_in × fan_out`.
    pub fn add_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize) -> ParamId {
        self.add_weight_scaled(name, fan_in, fan_out, 1.0)
    }

    pub fn add_weight_scaled(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, gain: f64) -> ParamId {
        let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.push(ParamTensor::new(name, vec![fan_in, fan_out], values).expect("consistent shape"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.push(ParamTensor::new(name, vec![len], vec![0.0; len]).expect("consistent shape"))
    }

    pub fn push(&mut self, t: ParamTensor) -> ParamId {
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add `grads` (as returned by a backward pass) into the `grad` buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.params) {
            if let Some(g) = g {
                for (a, b) in t.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale_grad(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.grad_norm();
        if n > max_norm && n > 0.0 {
            self.scale_grad(max_norm / n);
        }
        n
    }

    /// Copy values from `other`, matching tensors by name and shape.
    pub fn load_values(&mut self, other: &[ParamTensor]) -> Result<(), NnError> {
        for t in &mut self.tensors {
            let src = other
                .iter()
                .find(|o| o.name == t.name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing tensor `{}`", t.name)))?;
            if src.shape != t.shape {
                return Err(NnError::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    t.name, src.shape, t.shape
                )));
            }
            t.values.clone_from(&src.values);
        }
        Ok(())
    }
}

/// Per-parameter gradients from one backward pass. `None` where the
/// parameter was not reached.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            params: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// `self += other`, in parameter order.
    pub fn merge(&mut self, other: &Gradients) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }
}
