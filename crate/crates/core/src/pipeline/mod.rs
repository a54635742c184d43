//! The two-stage pipeline as in-memory steps, plus the file-based commands
//! built on them.

mod commands;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_ablate, cmd_eval, cmd_export_pca, cmd_gen_data, cmd_train_stage1, cmd_train_stage2,
    default_grid, load_stage1, load_world, AblationCell,
};
pub use config::RunConfig;

use crate::data::{
    generate_synthetic_parallel, make_synthetic_mrc, Lang, MrcExample, MrcSplits,
    ParallelSentencePair, ParseTree, StsItem, Vocab, SEP,
};
use crate::disentangler::{
    encode_pairs, train_stage1, SiameseDisentangler, Stage1Options, StepLog,
};
use crate::encoder::ToyEncoder;
use crate::eval::{
    constituent_consistency, fit_probe, probe_quality, retrieval_accuracy, sts_pearson, EvalReport,
    ProbeOptions, ProbeQuality,
};
use crate::mrc::{mean_em_f1, train_stage2, MrcModel, SpanPrediction, Stage2Log, Stage2Options};
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::{Error, Result};

const ENCODER_STREAM: u64 = 1;
const DISENTANGLER_STREAM: u64 = 2;
const STAGE1_STREAM: u64 = 3;
const MRC_TRAIN_STREAM: u64 = 4;
const MRC_TEST_STREAM: u64 = 5;
const HEAD_STREAM: u64 = 6;
const STAGE2_STREAM: u64 = 7;
const PROBE_STREAM: u64 = 8;

/// A seed for one independent consumer of randomness.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

/// Corpus, vocabulary and MRC sets of a run.
#[derive(Clone, Debug)]
pub struct World {
    pub train: Vec<ParallelSentencePair>,
    pub heldout: Vec<ParallelSentencePair>,
    pub sts: Vec<StsItem>,
    pub vocab: Vocab,
    /// Built from training sentences; only `l1` is used for fine-tuning.
    pub mrc_train: MrcSplits,
    /// Built from held-out sentences.
    pub mrc_test: MrcSplits,
}

pub fn build_world(cfg: &RunConfig) -> Result<World> {
    cfg.validate()?;
    let corpus = generate_synthetic_parallel(&cfg.synth_config(), cfg.seed)?;
    let vocab = Vocab::from_lexicon(&corpus.lexicon);
    let mrc_train = make_synthetic_mrc(
        &corpus.train,
        &corpus.lexicon,
        &cfg.mrc_config(cfg.mrc_train_examples),
        derive_seed(cfg.seed, MRC_TRAIN_STREAM),
    )?;
    let mut mrc_test = make_synthetic_mrc(
        &corpus.heldout,
        &corpus.lexicon,
        &cfg.mrc_config(cfg.mrc_test_examples),
        derive_seed(cfg.seed, MRC_TEST_STREAM),
    )?;
    for x in mrc_test.l1.iter_mut().chain(mrc_test.l2.iter_mut()) {
        x.id = format!("test-{}", x.id);
    }
    Ok(World {
        train: corpus.train,
        heldout: corpus.heldout,
        sts: corpus.sts,
        vocab,
        mrc_train,
        mrc_test,
    })
}

/// The contextual encoder with its parameters.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub store: ParamStore,
    pub encoder: ToyEncoder,
    pub warm_start_losses: Vec<f64>,
}

/// Initializes the encoder and optionally warm-starts it with masked-token
/// prediction over both languages of the training corpus and over translation
/// pairs joined by `[SEP]`.
pub fn pretrain_encoder(cfg: &RunConfig, world: &World) -> Result<Pretrained> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ENCODER_STREAM));
    let mut store = ParamStore::new();
    let encoder = ToyEncoder::new(&mut store, cfg.encoder_config(world.vocab.len()), &mut rng)?;
    let mut warm_start_losses = Vec::new();
    if cfg.warm_start_steps > 0 {
        let sentences = world
            .train
            .iter()
            .map(|p| -> Result<[Vec<usize>; 3]> {
                let s = world.vocab.encode(&p.tokens_s)?;
                let t = world.vocab.encode(&p.tokens_t)?;
                let mut both = s.clone();
                both.push(SEP);
                both.extend_from_slice(&t);
                Ok([s, t, both])
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .filter(|ids| ids.len() <= cfg.max_len)
            .collect::<Vec<_>>();
        warm_start_losses = encoder.warm_start(
            &mut store,
            &sentences,
            cfg.warm_start_steps,
            cfg.warm_start_lr,
            &mut rng,
        )?;
    }
    Ok(Pretrained {
        store,
        encoder,
        warm_start_losses,
    })
}

/// Stage 1: the encoder is frozen and the disentangler is trained on the
/// parallel training pairs.
pub fn train_disentangler(
    cfg: &RunConfig,
    world: &World,
    pre: &mut Pretrained,
    on_step: impl FnMut(&StepLog) -> Result<()>,
) -> Result<(SiameseDisentangler, Vec<StepLog>)> {
    pre.encoder.set_frozen(&mut pre.store, true);
    let encoder_hash = pre.encoder.hash(&pre.store);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DISENTANGLER_STREAM));
    let model = SiameseDisentangler::new(
        &mut pre.store,
        cfg.disentangler_config(pre.encoder.dim(), world.vocab.len()),
        &mut rng,
    )?;
    let data = encode_pairs(&pre.encoder, &pre.store, &world.vocab, &world.train)?;
    let opts = Stage1Options {
        steps: cfg.stage1_steps,
        batch_size: cfg.stage1_batch,
        lr: cfg.stage1_lr,
        losses: cfg.loss_set(),
        seed: derive_seed(cfg.seed, STAGE1_STREAM),
    };
    let logs = train_stage1(&model, &mut pre.store, &data, &opts, on_step)?;
    if pre.encoder.hash(&pre.store) != encoder_hash {
        return Err(Error::contract("encoder parameters changed during stage 1"));
    }
    Ok((model, logs))
}

/// Per-token `(μ_α, μ_β)` of one sentence.
pub fn latent_means(
    pre: &Pretrained,
    model: &SiameseDisentangler,
    vocab: &Vocab,
    tokens: &[String],
) -> Result<(Tensor, Tensor)> {
    let ids = vocab.encode(tokens)?;
    let mut tape = Tape::new();
    let e = pre.encoder.encode_on(&mut tape, &pre.store, &ids)?;
    let y = model.semantic_means(&mut tape, &pre.store, e);
    let z = model.syntactic_means(&mut tape, &pre.store, e);
    Ok((tape.value(y).clone(), tape.value(z).clone()))
}

fn column_mean(t: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        for (a, b) in m.iter_mut().zip(t.row(i)) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= t.rows() as f64);
    m
}

/// Sentence vectors: token means of μ_α and μ_β.
pub fn pooled_means(
    pre: &Pretrained,
    model: &SiameseDisentangler,
    vocab: &Vocab,
    tokens: &[String],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (y, z) = latent_means(pre, model, vocab, tokens)?;
    Ok((column_mean(&y), column_mean(&z)))
}

/// Disentanglement measurements on held-out data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Metrics {
    pub retrieval_y: f64,
    pub retrieval_z: f64,
    pub sts_y: f64,
    pub sts_z: f64,
    pub probe_y: ProbeQuality,
    pub probe_z: ProbeQuality,
    pub retrieval_pairs: usize,
    pub sts_pairs: usize,
}

impl Stage1Metrics {
    pub fn reports(&self, model: &str) -> Result<Vec<EvalReport>> {
        let r = |metric: &str, v: f64, vector: &str, n: usize| {
            EvalReport::new(metric, v, "l1-l2", vector, model, n)
        };
        Ok(vec![
            r(
                "retrieval_top1",
                self.retrieval_y,
                "y",
                self.retrieval_pairs,
            )?,
            r(
                "retrieval_top1",
                self.retrieval_z,
                "z",
                self.retrieval_pairs,
            )?,
            r("sts_pearson", self.sts_y, "y", self.sts_pairs)?,
            r("sts_pearson", self.sts_z, "z", self.sts_pairs)?,
            r(
                "probe_depth_spearman",
                self.probe_y.depth_spearman,
                "y",
                self.probe_y.tokens,
            )?,
            r(
                "probe_depth_spearman",
                self.probe_z.depth_spearman,
                "z",
                self.probe_z.tokens,
            )?,
            r(
                "probe_distance_spearman",
                self.probe_y.distance_spearman,
                "y",
                self.probe_y.pairs.max(1),
            )?,
            r(
                "probe_distance_spearman",
                self.probe_z.distance_spearman,
                "z",
                self.probe_z.pairs.max(1),
            )?,
        ])
    }
}

/// Retrieval over held-out pairs.
pub fn retrieval_scores(
    pre: &Pretrained,
    model: &SiameseDisentangler,
    world: &World,
) -> Result<(f64, f64)> {
    let (mut ys, mut yt, mut zs, mut zt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in &world.heldout {
        let (y, z) = pooled_means(pre, model, &world.vocab, &p.tokens_s)?;
        ys.push(y);
        zs.push(z);
        let (y, z) = pooled_means(pre, model, &world.vocab, &p.tokens_t)?;
        yt.push(y);
        zt.push(z);
    }
    Ok((retrieval_accuracy(&ys, &yt)?, retrieval_accuracy(&zs, &zt)?))
}

pub fn evaluate_stage1(
    cfg: &RunConfig,
    world: &World,
    pre: &Pretrained,
    model: &SiameseDisentangler,
) -> Result<Stage1Metrics> {
    let (retrieval_y, retrieval_z) = retrieval_scores(pre, model, world)?;

    let (mut py, mut pz, mut gold) = (Vec::new(), Vec::new(), Vec::new());
    for item in &world.sts {
        let (ys, zs) = pooled_means(pre, model, &world.vocab, &item.source)?;
        let (yt, zt) = pooled_means(pre, model, &world.vocab, &item.target)?;
        py.push((ys, yt));
        pz.push((zs, zt));
        gold.push(item.score);
    }
    let sts_y = sts_pearson(&py, &gold)?;
    let sts_z = sts_pearson(&pz, &gold)?;

    let sentences = |pairs: &[ParallelSentencePair],
                     limit: usize|
     -> Result<(Vec<Tensor>, Vec<Tensor>, Vec<ParseTree>)> {
        let (mut y, mut z, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for p in pairs.iter().take(limit.div_ceil(2)) {
            for lang in [Lang::L1, Lang::L2] {
                let (a, b) = latent_means(pre, model, &world.vocab, p.tokens(lang))?;
                y.push(a);
                z.push(b);
                t.push(ParseTree::from_heads(p.heads(lang))?);
            }
        }
        Ok((y, z, t))
    };
    let (fit_y, fit_z, fit_t) = sentences(&world.train, cfg.probe_sentences)?;
    let (test_y, test_z, test_t) = sentences(&world.heldout, usize::MAX)?;
    let opts = ProbeOptions {
        steps: cfg.probe_steps,
        seed: derive_seed(cfg.seed, PROBE_STREAM),
        ..ProbeOptions::default()
    };
    let by = fit_probe(&fit_y, &fit_t, &opts)?;
    let bz = fit_probe(&fit_z, &fit_t, &opts)?;
    Ok(Stage1Metrics {
        retrieval_y,
        retrieval_z,
        sts_y,
        sts_z,
        probe_y: probe_quality(&by, &test_y, &test_t)?,
        probe_z: probe_quality(&bz, &test_z, &test_t)?,
        retrieval_pairs: world.heldout.len(),
        sts_pairs: gold.len(),
    })
}

/// Zero-shot span prediction quality of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrcScores {
    pub em_l2: f64,
    pub f1_l2: f64,
    pub consistency_l2: f64,
    pub em_l1: f64,
    pub f1_l1: f64,
    pub train_em_l1: f64,
    #[serde(skip)]
    pub predictions_l2: Vec<SpanPrediction>,
    pub stage2: Stage2Log,
}

impl MrcScores {
    pub fn reports(&self, model: &str, n: usize) -> Result<Vec<EvalReport>> {
        Ok(vec![
            EvalReport::new("em", self.em_l2, "l2", "span", model, n)?,
            EvalReport::new("f1", self.f1_l2, "l2", "span", model, n)?,
            EvalReport::new(
                "constituent_consistency",
                self.consistency_l2,
                "l2",
                "span",
                model,
                n,
            )?,
            EvalReport::new("em", self.em_l1, "l1", "span", model, n)?,
            EvalReport::new("f1", self.f1_l1, "l1", "span", model, n)?,
        ])
    }
}

/// Stage 2 for one model: fine-tunes on L1 training questions and scores on
/// the held-out L1 and L2 questions. Works on a copy of the parameters.
pub fn fine_tune_and_score(
    cfg: &RunConfig,
    world: &World,
    pre: &Pretrained,
    disentangler: Option<&SiameseDisentangler>,
) -> Result<(MrcModel, ParamStore, MrcScores)> {
    let mut store = pre.store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, HEAD_STREAM));
    let model = MrcModel::new(
        &mut store,
        pre.encoder.clone(),
        disentangler.cloned(),
        &mut rng,
    )?;
    let opts = Stage2Options {
        epochs: cfg.stage2_epochs,
        batch_size: cfg.stage2_batch,
        lr: cfg.stage2_lr,
        freeze_encoder: cfg.freeze_encoder,
        seed: derive_seed(cfg.seed, STAGE2_STREAM),
    };
    let stage2 = train_stage2(&model, &mut store, &world.vocab, &world.mrc_train.l1, &opts)?;
    let scores = score_mrc(&model, &store, world, stage2)?;
    Ok((model, store, scores))
}

pub fn score_mrc(
    model: &MrcModel,
    store: &ParamStore,
    world: &World,
    stage2: Stage2Log,
) -> Result<MrcScores> {
    let eval = |xs: &[MrcExample]| -> Result<(Vec<SpanPrediction>, f64, f64)> {
        let preds = model.predict_all(store, &world.vocab, xs)?;
        let (em, f1) = mean_em_f1(&preds, xs)?;
        Ok((preds, em, f1))
    };
    let (predictions_l2, em_l2, f1_l2) = eval(&world.mrc_test.l2)?;
    let (_, em_l1, f1_l1) = eval(&world.mrc_test.l1)?;
    let (_, train_em_l1, _) = eval(&world.mrc_train.l1)?;
    Ok(MrcScores {
        em_l2,
        f1_l2,
        consistency_l2: constituent_consistency(&world.mrc_test.l2, &predictions_l2)?,
        em_l1,
        f1_l1,
        train_em_l1,
        predictions_l2,
        stage2,
    })
}
