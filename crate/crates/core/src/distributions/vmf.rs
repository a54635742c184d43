use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::bessel::kl_vmf_uniform_with_grad;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// von Mises-Fisher parameters on S^{d-1}.
#[derive(Clone, Debug, PartialEq)]
pub struct VmfParams {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::contract(format!(
                "vMF needs dim >= 2, got {}",
                mu.len()
            )));
        }
        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "vMF mean must be unit length, |mu| = {norm}"
            )));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::contract(format!(
                "kappa must be finite and >= 0, got {kappa}"
            )));
        }
        Ok(VmfParams { mu, kappa })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let frame = sample_frame(self.dim(), self.kappa, rng);
        householder_apply(&self.mu, &frame)
    }

    pub fn kl_to_uniform(&self) -> Result<f64> {
        Ok(kl_vmf_uniform_with_grad(self.dim(), self.kappa)?.0)
    }
}

/// Wood's rejection sampler for the polar component `w = ⟨x, e₁⟩`.
pub fn sample_polar<R: Rng + ?Sized>(dim: usize, kappa: f64, rng: &mut R) -> f64 {
    let m = (dim - 1) as f64;
    // b = (-2κ + sqrt(4κ² + m²)) / m, in the cancellation-free form.
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * m, 0.5 * m).expect("valid beta shape");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random::<f64>();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// A vMF(e₁, κ) draw: polar component in slot 0, uniform tangent direction
/// in the remaining slots.
pub fn sample_frame<R: Rng + ?Sized>(dim: usize, kappa: f64, rng: &mut R) -> Vec<f64> {
    let w = sample_polar(dim, kappa, rng);
    let mut v: Vec<f64> = (0..dim - 1).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radial = (1.0 - w * w).max(0.0).sqrt();
    v.iter_mut().for_each(|x| *x *= radial / norm);
    let mut frame = Vec::with_capacity(dim);
    frame.push(w);
    frame.extend(v);
    frame
}

/// Reflection sending e₁ to `mu`, applied to `x`.
pub fn householder_apply(mu: &[f64], x: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = mu
        .iter()
        .enumerate()
        .map(|(j, m)| if j == 0 { 1.0 } else { 0.0 } - m)
        .collect();
    let s: f64 = u.iter().map(|v| v * v).sum();
    if s < 1e-24 {
        return x.to_vec();
    }
    let p: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
    x.iter()
        .zip(&u)
        .map(|(xi, ui)| xi - 2.0 * p / s * ui)
        .collect()
}

/// Row-wise vMF samples on the tape. `mu` rows must be unit length; the
/// frames were drawn with the matching concentrations, so gradient reaches
/// `mu` through the rotation while κ receives none along this path.
pub fn vmf_sample_rows(tape: &mut Tape, mu: Var, frames: Tensor) -> Var {
    tape.householder(mu, frames)
}

/// Σ KL(vMF(·, κ_i) || uniform) over the entries of `kappa`.
pub fn kl_vmf_uniform(tape: &mut Tape, kappa: Var, dim: usize) -> Result<Var> {
    let per = tape.pointwise(kappa, "kl_vmf_uniform", |k| {
        kl_vmf_uniform_with_grad(dim, k)
    })?;
    Ok(tape.sum(per))
}
