use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample_frame, standard_normal};
use crate::tensor::Tensor;

#[derive(Debug)]
enum Mode {
    Random(ChaCha8Rng),
    Replay(usize),
    Mean,
}

/// Supplies the random draws used by the latent samplers. A recording
/// source logs its draws so a forward pass can be replayed with identical
/// noise (finite difference checks); `mean()` yields no noise at all, making
/// samplers return their means.
#[derive(Debug)]
pub struct NoiseSource {
    mode: Mode,
    log: Vec<Tensor>,
    record: bool,
}

impl NoiseSource {
    pub fn random(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        NoiseSource {
            mode: Mode::Random(rng),
            log: Vec::new(),
            record: false,
        }
    }

    /// Like [`NoiseSource::random`], keeping every draw for later replay.
    pub fn recording(seed: u64) -> Self {
        NoiseSource {
            record: true,
            ..Self::random(seed)
        }
    }

    pub fn replay(draws: Vec<Tensor>) -> Self {
        NoiseSource {
            mode: Mode::Replay(0),
            log: draws,
            record: false,
        }
    }

    pub fn mean() -> Self {
        NoiseSource {
            mode: Mode::Mean,
            log: Vec::new(),
            record: false,
        }
    }

    pub fn is_mean(&self) -> bool {
        matches!(self.mode, Mode::Mean)
    }

    /// The recorded draws (or the replay script).
    pub fn draws(&self) -> &[Tensor] {
        &self.log
    }

    pub fn into_draws(self) -> Vec<Tensor> {
        self.log
    }

    fn next(&mut self, make: impl FnOnce(&mut ChaCha8Rng) -> Tensor) -> Option<Tensor> {
        match &mut self.mode {
            Mode::Mean => None,
            Mode::Random(rng) => {
                let t = make(rng);
                if self.record {
                    self.log.push(t.clone());
                }
                Some(t)
            }
            Mode::Replay(cursor) => {
                let t = self
                    .log
                    .get(*cursor)
                    .cloned()
                    .expect("replay script exhausted");
                *cursor += 1;
                Some(t)
            }
        }
    }

    /// One vMF(e₁, κ_i) frame per row.
    pub fn vmf_frames(&mut self, dim: usize, kappas: &[f64]) -> Option<Tensor> {
        self.next(|rng| {
            let mut data = Vec::with_capacity(kappas.len() * dim);
            for &k in kappas {
                data.extend(sample_frame(dim, k, rng));
            }
            Tensor::new(vec![kappas.len(), dim], data).expect("frame shape")
        })
    }

    /// Standard-normal noise of the given shape.
    pub fn normal(&mut self, shape: &[usize]) -> Option<Tensor> {
        self.next(|rng| standard_normal(shape, rng))
    }
}
