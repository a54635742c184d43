use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Lower bound added to `exp(log-variance)`.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussParams {
    mu: Vec<f64>,
    sigma2: Vec<f64>,
}

impl GaussParams {
    pub fn new(mu: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma2.len() {
            return Err(Error::contract("mu and sigma2 lengths differ"));
        }
        if let Some(bad) = sigma2.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::contract(format!(
                "variance must be positive, got {bad}"
            )));
        }
        Ok(GaussParams { mu, sigma2 })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma2)
            .map(|(m, s)| m + s.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `½ Σ (μ² + σ² − ln σ² − 1)`.
    pub fn kl_to_standard(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.sigma2)
            .map(|(m, s)| m * m + s - s.ln() - 1.0)
            .sum::<f64>()
    }
}

pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// `exp(log_var) + VARIANCE_FLOOR`.
pub fn variance(tape: &mut Tape, log_var: Var) -> Var {
    let e = tape.exp(log_var);
    tape.add_const(e, VARIANCE_FLOOR)
}

/// Reparameterized draw `μ + sqrt(σ²) ⊙ ε`.
pub fn gauss_sample(tape: &mut Tape, mu: Var, sigma2: Var, noise: Tensor) -> Var {
    let log_s = tape.log(sigma2);
    let half = tape.scale(log_s, 0.5);
    let std = tape.exp(half);
    let eps = tape.constant(noise);
    let scaled = tape.mul(std, eps);
    tape.add(mu, scaled)
}

/// Σ over all entries of the per-dimension KL to N(0, 1).
pub fn kl_gauss_standard(tape: &mut Tape, mu: Var, sigma2: Var) -> Var {
    let mu2 = tape.mul(mu, mu);
    let log_s = tape.log(sigma2);
    let a = tape.add(mu2, sigma2);
    let b = tape.sub(a, log_s);
    let c = tape.add_const(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5)
}
