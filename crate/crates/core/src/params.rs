//! Flat named parameter storage and initializers.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{MimError, Result};
use crate::rng::Rng;

/// Index of a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered `name → tensor` map. Insertion order is the checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a borrowed leaf on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
        }
    }

    /// Replaces every value by the matching entry in `other` (same layout).
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(MimError::CheckpointManifest("parameter names differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(MimError::Dimension {
                    op: "copy_from",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Tape variables for the parameters of one store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients, zero-filled where nothing flowed.
    pub fn collect(&self, grads: &Gradients, store: &ParamStore) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .zip(&store.tensors)
            .map(|(v, t)| grads.get_or_zeros(*v, t.numel()))
            .collect()
    }
}

/// Adds `src` into `dst` elementwise, parameter by parameter.
pub fn accumulate(dst: &mut [Vec<f64>], src: &[Vec<f64>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
}

pub fn zero_grads(store: &ParamStore) -> Vec<Vec<f64>> {
    store.tensors.iter().map(|t| vec![0.0; t.numel()]).collect()
}

/// Matrix view `(rows, cols)` used for fan computation and orthogonalization:
/// first dimension against the product of the rest.
fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [r, rest @ ..] => (*r, rest.iter().product()),
        [] => (1, 1),
    }
}

/// Xavier/Glorot normal: `std = gain · √(2 / (fan_in + fan_out))`.
///
/// For `[out, in]` weights and `[c_out, c_in, k]` kernels the fans follow the
/// usual convention; a vector of length `n` is treated as `n → 1`.
pub fn xavier_normal(shape: &[usize], gain: f64, rng: &mut Rng) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, 1),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let rf: usize = rest.iter().product();
            (inp * rf, out * rf)
        }
        [] => (1, 1),
    };
    let std = gain * (2.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape is valid")
}

/// Semi-orthogonal init: the tensor reshaped to `(shape[0], rest)` has
/// orthonormal rows when wide and orthonormal columns when tall.
pub fn orthogonal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let (rows, cols) = matrix_dims(shape);
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let g = DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix makes the result uniformly distributed.
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(m[(i, j)]);
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape is valid")
}
