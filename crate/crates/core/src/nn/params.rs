use rand::Rng;

use super::{NnError, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named, ordered parameters with gradient buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(&value.shape);
        self.params.push(Param { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Result<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds a gradient set into the parameters' gradient buffers.
    pub fn accumulate(&mut self, grads: &GradSet<T>) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!("{} grads for {} params", grads.grads.len(), self.params.len())));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if p.grad.shape != g.shape {
                return Err(NnError::ShapeMismatch(format!("grad {:?} for param {} {:?}", g.shape, p.name, p.grad.shape)));
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), grad: p.grad.cast() })
                .collect(),
        }
    }
}

/// Per-parameter gradients produced by one or more backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet<T> {
    pub grads: Vec<Tensor<T>>,
}

impl<T: Real> GradSet<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        GradSet { grads: store.params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect() }
    }

    pub fn add(&mut self, other: &GradSet<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }
}

/// Kaiming-uniform fan-in initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor { shape: shape.to_vec(), data }
}
