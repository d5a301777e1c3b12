//! Parameterized building blocks shared by the model components.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::{orthogonal, xavier_normal, Bound, ParamId, ParamStore};
use crate::rng::Rng;

/// How a weight tensor is initialized. Biases are always zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightInit {
    Orthogonal,
    Xavier,
}

/// Registers parameters into a store, drawing initial values from `rng`
/// (or leaving them zero when there is no rng, for layout-only builds).
pub struct Builder<'s> {
    store: &'s mut ParamStore,
    rng: Option<Rng>,
    xavier_gain: f64,
}

impl<'s> Builder<'s> {
    pub fn new(store: &'s mut ParamStore, rng: Option<Rng>, xavier_gain: f64) -> Self {
        Self {
            store,
            rng,
            xavier_gain,
        }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], init: WeightInit) -> ParamId {
        let t = match (&mut self.rng, init) {
            (None, _) => Tensor::zeros(shape),
            (Some(rng), WeightInit::Orthogonal) => orthogonal(shape, rng),
            (Some(rng), WeightInit::Xavier) => xavier_normal(shape, self.xavier_gain, rng),
        };
        self.store.add(name, t)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(&[len]))
    }
}

/// Fully connected layer `x · Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, fan_in: usize, fan_out: usize, bias: bool, init: WeightInit) -> Self {
        let weight = b.weight(&format!("{name}.weight"), &[fan_out, fan_in], init);
        let bias = bias.then(|| b.bias(&format!("{name}.bias"), fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.weight), self.bias.map(|b| p.var(b)))
    }
}

/// Stack of [`Linear`] layers with ReLU between them and nothing after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(b: &mut Builder<'_>, name: &str, widths: &[usize], init: WeightInit) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(b, &format!("{name}.{i}"), w[0], w[1], true, init))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, p, x)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .collect()
    }
}
