//! Trainable parameter storage shared by every network component.
//!
//! Parameters are kept in single precision outside of any graph. Each
//! forward pass binds them onto a fresh [`Graph`] as leaves, so the same
//! store can drive `f32` training and `f64` gradient checks.

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Lower bound for every leak factor.
pub const LEAK_MIN: f32 = 1e-3;
/// Upper bound for every leak factor.
pub const LEAK_MAX: f32 = 1e3;
/// Starting value for trainable leak factors.
pub const LEAK_INIT: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    LeakFactor,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
    pub kind: ParamKind,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>, kind: ParamKind) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            kind,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a leak factor; when `trainable` is false it is frozen at 1.0.
    pub fn add_leak(&mut self, name: impl Into<String>, trainable: bool) -> ParamId {
        let init = if trainable { LEAK_INIT } else { 1.0 };
        let id = self.add(name, Tensor::scalar(init), ParamKind::LeakFactor);
        self.params[id.0].trainable = trainable;
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Creates one graph leaf per parameter. Frozen parameters become
    /// constants.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.cast(), p.trainable))
            .collect();
        Bound { vars }
    }

    /// Projects every leak factor back into `[LEAK_MIN, LEAK_MAX]`.
    pub fn clamp_leak_factors(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.kind == ParamKind::LeakFactor) {
            for v in p.value.data_mut() {
                *v = v.clamp(LEAK_MIN, LEAK_MAX);
            }
        }
    }

    pub fn leak_factors(&self) -> impl Iterator<Item = (&str, f32)> {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::LeakFactor)
            .map(|p| (p.name.as_str(), p.value.data()[0]))
    }
}

/// Graph handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps externally created leaves, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound) as f32)
}
