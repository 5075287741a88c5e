use ndarray::{Array, ArrayD, ArrayView1, ArrayView2, ArrayView4, Dimension, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Index of a parameter inside a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter arrays, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
}

impl Params {
    pub fn add<D: Dimension>(&mut self, name: impl Into<String>, value: Array<f64, D>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value.into_dyn());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn view1(&self, id: ParamId) -> ArrayView1<'_, f64> {
        self.values[id.0].view().into_dimensionality().expect("rank-1 parameter")
    }

    pub fn view2(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.values[id.0].view().into_dimensionality().expect("rank-2 parameter")
    }

    pub fn view4(&self, id: ParamId) -> ArrayView4<'_, f64> {
        self.values[id.0].view().into_dimensionality().expect("rank-4 parameter")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(self.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect())
    }
}

/// Gradient buffers matching a [`Params`] store entry for entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<ArrayD<f64>>);

impl Grads {
    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.0[id.0]
    }

    pub fn accumulate<D: Dimension>(&mut self, id: ParamId, g: &Array<f64, D>) {
        let slot = &mut self.0[id.0];
        *slot += &g.view().into_dyn();
    }
}

/// He-normal initialisation for a weight with `fan_in` inputs per output.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || normal.sample(rng))
}
