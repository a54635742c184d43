use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{total_loss, LossReport, LossSet, SiameseDisentangler};
use crate::data::{ParallelSentencePair, ParseTree, Vocab};
use crate::distributions::NoiseSource;
use crate::encoder::ToyEncoder;
use crate::tensor::{Adam, ParamStore, Tape, Tensor};
use crate::{Error, Result};

/// A parallel pair with token ids, gold syntax and frozen encoder outputs.
#[derive(Clone, Debug)]
pub struct EncodedPair {
    pub id: usize,
    pub ids_s: Vec<usize>,
    pub ids_t: Vec<usize>,
    pub e_s: Tensor,
    pub e_t: Tensor,
    pub upos_s: Vec<usize>,
    pub upos_t: Vec<usize>,
    pub tree_s: ParseTree,
    pub tree_t: ParseTree,
    pub two_way: bool,
}

pub fn encode_pairs(
    encoder: &ToyEncoder,
    store: &ParamStore,
    vocab: &Vocab,
    pairs: &[ParallelSentencePair],
) -> Result<Vec<EncodedPair>> {
    pairs
        .iter()
        .map(|p| {
            let ids_s = vocab.encode(&p.tokens_s)?;
            let ids_t = vocab.encode(&p.tokens_t)?;
            Ok(EncodedPair {
                id: p.id,
                e_s: encoder.encode(store, &ids_s)?,
                e_t: encoder.encode(store, &ids_t)?,
                ids_s,
                ids_t,
                upos_s: p.upos_s.clone(),
                upos_t: p.upos_t.clone(),
                tree_s: ParseTree::from_heads(&p.heads_s)?,
                tree_t: ParseTree::from_heads(&p.heads_t)?,
                two_way: p.two_way_only,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Stage1Options {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub losses: LossSet,
    pub seed: u64,
}

pub type StepLog = LossReport;

/// Minibatch Adam on the disentangler with the encoder outputs held fixed.
/// `on_step` sees each step's report before the update is applied.
pub fn train_stage1(
    model: &SiameseDisentangler,
    store: &mut ParamStore,
    data: &[EncodedPair],
    opts: &Stage1Options,
    mut on_step: impl FnMut(&StepLog) -> Result<()>,
) -> Result<Vec<StepLog>> {
    if data.is_empty() {
        return Err(Error::config("stage 1 needs training pairs"));
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0) {
        return Err(Error::config(
            "batch size and learning rate must be positive",
        ));
    }
    let cfg = model.config();
    opts.losses.validate(cfg.variant, cfg.siamese)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut noise = NoiseSource::random(opts.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut logs = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let mut tape = Tape::new();
        let (loss, mut report) =
            total_loss(&mut tape, model, store, &batch, &opts.losses, &mut noise)?;
        report.step = step as u64;
        if !report.total.is_finite() {
            return Err(Error::numeric(
                "total_loss",
                format!("non-finite loss at step {step}"),
            ));
        }
        on_step(&report)?;
        let grads = tape.backward(loss).map_err(|e| match e {
            Error::Numeric { op, detail } => Error::numeric(op, format!("step {step}: {detail}")),
            other => other,
        })?;
        adam.step(store, &grads)?;
        logs.push(report);
    }
    Ok(logs)
}
