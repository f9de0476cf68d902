//! Named parameter storage and initialization.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A flat list of named arrays. The `tag` distinguishes stores that take part
/// in the same graph (generator vs. discriminator vs. frozen extractor).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    tag: u32,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new(tag: u32) -> Self {
        Self { tag, names: Vec::new(), tensors: Vec::new() }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace every array by name, checking shapes against the current layout.
    pub fn load_from(&mut self, named: &[(String, Tensor<F>)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Shape(alloc::format!(
                "expected {} parameter arrays, found {}",
                self.len(),
                named.len()
            )));
        }
        for (name, tensor) in named {
            let id = self.find(name).ok_or_else(|| Error::Shape(alloc::format!("unknown parameter {name}")))?;
            if self.tensors[id.0].shape() != tensor.shape() {
                return Err(Error::Shape(alloc::format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.tensors[id.0].shape(),
                    tensor.shape()
                )));
            }
            self.tensors[id.0] = tensor.clone();
        }
        Ok(())
    }
}

/// Builds a parameter store under a name prefix, drawing initial values
/// from a normal with std 0.02 truncated at two standard deviations.
pub struct ParamBuilder<'a, F, R> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut R,
    prefix: String,
}

pub const INIT_STD: f64 = 0.02;

impl<'a, F: Float, R: Rng> ParamBuilder<'a, F, R> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut R) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// Run `f` with `name` appended to the prefix.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.prefix.clone();
        if !self.prefix.is_empty() {
            self.prefix.push('.');
        }
        self.prefix.push_str(name);
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            alloc::format!("{}.{}", self.prefix, name)
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.normal_std(name, shape, INIT_STD)
    }

    /// Truncated normal with an explicit standard deviation.
    pub fn normal_std(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = self.rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break F::from_f64_lossy(z * std);
                }
            })
            .collect();
        let t = Tensor::new(shape, data).expect("shape product matches");
        let full = self.full_name(name);
        self.store.push(full, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let full = self.full_name(name);
        self.store.push(full, Tensor::zeros(shape))
    }
}
