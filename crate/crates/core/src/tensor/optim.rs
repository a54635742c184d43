use std::collections::HashMap;

use super::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias correction. Frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: HashMap<ParamId, Vec<f64>>,
    second: HashMap<ParamId, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every unfrozen parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.params() {
            if g.shape() != store.get(id).shape() {
                return Err(Error::contract(format!(
                    "gradient for {} has shape {:?}, parameter has {:?}",
                    store.name(id),
                    g.shape(),
                    store.get(id).shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.params() {
            if store.is_frozen(id) {
                continue;
            }
            let n = g.numel();
            let m = self.first.entry(id).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(id).or_insert_with(|| vec![0.0; n]);
            let p = store.get_mut(id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn quadratic(store: &ParamStore, id: ParamId, tape: &mut Tape) -> crate::tensor::Var {
        // 0.5 * sum(a_i * x_i^2) with a = (1, 4, 9)
        let x = tape.param(store, id);
        let a = tape.constant(Tensor::vector(vec![1.0, 4.0, 9.0]));
        let sq = tape.mul(x, x);
        let w = tape.mul(sq, a);
        let s = tape.sum(w);
        tape.scale(s, 0.5)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let loss = tape.scale(x, 1.0); // constant gradient 1
        let grads = tape.backward(loss).unwrap();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store, &grads).unwrap();
        let moved = 2.0 - store.get(id).item();
        assert!(((moved - 1e-3) / 1e-3).abs() < 1e-6, "moved {moved}");
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.3, -0.7])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let z = tape.scale(x, 0.0);
        let loss = tape.sum(z);
        let grads = tape.backward(loss).unwrap();
        let mut adam = Adam::new(1e-2);
        for _ in 0..5 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get(id).data(), &[0.3, -0.7]);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut other = ParamStore::new();
        other.add("x", Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&other, id);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        let err = Adam::new(1e-3).step(&mut store, &grads).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn convex_quadratic_decreases_monotonically_after_warmup() {
        let mut store = ParamStore::new();
        let id = store
            .add("x", Tensor::vector(vec![1.0, -1.5, 0.8]))
            .unwrap();
        let mut adam = Adam::new(0.01);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let mut tape = Tape::new();
            let loss = quadratic(&store, id, &mut tape);
            losses.push(tape.value(loss).item());
            let grads = tape.backward(loss).unwrap();
            adam.step(&mut store, &grads).unwrap();
        }
        for w in losses[10..].windows(2) {
            assert!(w[1] < w[0], "loss went {} -> {}", w[0], w[1]);
        }
        assert!(losses[99] < 0.2 * losses[0]);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let loss = tape.mul(x, x);
        let grads = tape.backward(loss).unwrap();
        store.set_frozen(id, true);
        Adam::new(0.1).step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).item(), 1.0);
    }
}
