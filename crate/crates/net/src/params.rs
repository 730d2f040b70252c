//! Named parameter storage shared by the model, the optimiser and the
//! checkpoint archive.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// How freshly registered parameters are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Residual emitters start at zero so the network is the identity.
    Standard,
    /// Every tensor is random; used for gradient verification.
    RandomAll,
}

/// Requested fill for one tensor under [`InitMode::Standard`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Const(f64),
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.values
            .iter()
            .map(|t| Tensor::zeros(t.c, t.h, t.w))
            .collect()
    }

    /// Snaps every weight to the nearest `f32` so archives round-trip exactly.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.values {
            for v in &mut t.data {
                *v = f64::from(*v as f32);
            }
        }
    }
}

/// Registers parameters under a hierarchical name prefix.
pub struct Registry<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub mode: InitMode,
    prefix: String,
}

impl<'a> Registry<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, mode: InitMode) -> Self {
        Self {
            store,
            rng,
            mode,
            prefix: String::new(),
        }
    }

    /// Runs `f` with `segment` appended to the name prefix.
    pub fn scoped<T>(&mut self, segment: &str, f: impl FnOnce(&mut Registry<'_>) -> T) -> T {
        let prefix = if self.prefix.is_empty() {
            segment.to_string()
        } else {
            format!("{}.{segment}", self.prefix)
        };
        let mut sub = Registry {
            store: &mut *self.store,
            rng: &mut *self.rng,
            mode: self.mode,
            prefix,
        };
        f(&mut sub)
    }

    pub fn param(&mut self, name: &str, shape: [usize; 3], fill: Fill) -> ParamId {
        let [c, h, w] = shape;
        let n = c * h * w;
        let data: Vec<f64> = match (self.mode, fill) {
            (InitMode::Standard, Fill::Zeros) => vec![0.0; n],
            (InitMode::Standard, Fill::Const(v)) => vec![v; n],
            (InitMode::Standard, Fill::Uniform { fan_in }) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
            }
            (InitMode::RandomAll, Fill::Const(v)) => {
                (0..n).map(|_| v + self.rng.gen_range(-0.5..0.5)).collect()
            }
            (InitMode::RandomAll, Fill::Uniform { fan_in }) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
            }
            (InitMode::RandomAll, Fill::Zeros) => {
                (0..n).map(|_| self.rng.gen_range(-0.3..0.3)).collect()
            }
        };
        let data = data.into_iter().map(|v| f64::from(v as f32)).collect();
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.push(full, Tensor::from_vec(c, h, w, data))
    }
}
