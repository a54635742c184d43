//! Dense layers shared by the model components.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Gaussian tensor with standard deviation `std`.
pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("parameter {name} is missing")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            randn(&[fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng),
        )?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Linear { w, b })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Linear {
            w: lookup(store, &format!("{name}.w"))?,
            b: lookup(store, &format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }

    pub fn fan_in(&self, store: &ParamStore) -> usize {
        store.get(self.w).rows()
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.get(self.w).cols()
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, activation })
    }

    pub fn from_store(
        store: &ParamStore,
        name: &str,
        depth: usize,
        activation: Activation,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Linear::from_store(store, &format!("{name}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = self.activation.apply(tape, h);
            }
            h = l.forward(tape, store, h);
        }
        h
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::ids).collect()
    }
}
