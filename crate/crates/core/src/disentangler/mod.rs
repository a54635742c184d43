//! The siamese semantic/syntactic disentangler and its training objectives.

mod losses;
mod train;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::NUM_UPOS;
use crate::distributions::{gauss_sample, variance, vmf_sample_rows, NoiseSource};
use crate::nn::{lookup, randn, Activation, Linear, Mlp};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

pub(crate) use losses::stack_rows;
pub use losses::{
    loss_crl, loss_kl, loss_pos, loss_reconstruction, loss_sdl, loss_stl, loss_wpl,
    structural_probe_loss, total_loss, LossReport, PairBatch, SdlOutcome,
};
pub use train::{encode_pairs, train_stage1, EncodedPair, Stage1Options, StepLog};

/// Which syntactic objective accompanies the shared ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Pos,
    Sp,
}

/// How the syntactic vector entering `h_i = [e_i; z]` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZPooling {
    /// Mean of the per-token samples.
    AfterSampling,
    /// One draw from the token-averaged posterior parameters.
    BeforeSampling,
    /// Each token uses its own sample.
    PerToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rl,
    Kl,
    Crl,
    Sdl,
    Wpl,
    Pos,
    Stl,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Rl,
        LossKind::Kl,
        LossKind::Crl,
        LossKind::Sdl,
        LossKind::Wpl,
        LossKind::Pos,
        LossKind::Stl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Rl => "rl",
            LossKind::Kl => "kl",
            LossKind::Crl => "crl",
            LossKind::Sdl => "sdl",
            LossKind::Wpl => "wpl",
            LossKind::Pos => "pos",
            LossKind::Stl => "stl",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown loss {s:?}")))
    }
}

/// Set of enabled loss terms.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LossSet(pub BTreeSet<LossKind>);

impl LossSet {
    /// The full objective of a variant (siamese) or its single-network form.
    pub fn full(variant: Variant, siamese: bool) -> Self {
        let mut s: BTreeSet<LossKind> = [LossKind::Rl, LossKind::Kl, LossKind::Wpl].into();
        if siamese {
            s.extend([LossKind::Crl, LossKind::Sdl]);
        }
        s.insert(match variant {
            Variant::Pos => LossKind::Pos,
            Variant::Sp => LossKind::Stl,
        });
        LossSet(s)
    }

    pub fn only(kinds: &[LossKind]) -> Self {
        LossSet(kinds.iter().copied().collect())
    }

    pub fn without(&self, kind: LossKind) -> Self {
        let mut s = self.0.clone();
        s.remove(&kind);
        LossSet(s)
    }

    pub fn contains(&self, kind: LossKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn iter(&self) -> impl Iterator<Item = LossKind> + '_ {
        self.0.iter().copied()
    }

    /// Rejects sets that mix variants or need a paired branch that is absent.
    pub fn validate(&self, variant: Variant, siamese: bool) -> Result<()> {
        let mut conflicts = Vec::new();
        if self.0.is_empty() {
            conflicts.push("no loss enabled".to_string());
        }
        if variant == Variant::Pos && self.contains(LossKind::Stl) {
            conflicts.push("stl belongs to the sp variant".into());
        }
        if variant == Variant::Sp && self.contains(LossKind::Pos) {
            conflicts.push("pos belongs to the pos variant".into());
        }
        if !siamese {
            for k in [LossKind::Crl, LossKind::Sdl] {
                if self.contains(k) {
                    conflicts.push(format!("{k} requires siamese mode"));
                }
            }
        }
        if conflicts.is_empty() {
            Ok(())
        } else {
            Err(Error::config(conflicts.join("; ")))
        }
    }
}

impl FromStr for LossSet {
    type Err = Error;

    /// Parses a `+` or `,` separated list such as `crl+sdl+wpl`.
    fn from_str(s: &str) -> Result<Self> {
        s.split(['+', ','])
            .filter(|p| !p.trim().is_empty())
            .map(LossKind::from_str)
            .collect::<Result<BTreeSet<_>>>()
            .map(LossSet)
    }
}

impl TryFrom<String> for LossSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossSet> for String {
    fn from(s: LossSet) -> String {
        s.to_string()
    }
}

impl fmt::Display for LossSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.iter().map(LossKind::as_str).collect();
        f.write_str(&parts.join("+"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglerConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub position_hidden: usize,
    pub max_len: usize,
    pub num_tags: usize,
    pub probe_rank: usize,
    pub vocab_size: usize,
    pub margin: f64,
    pub fixed_kappa: Option<f64>,
    pub z_pooling: ZPooling,
    pub variant: Variant,
    pub siamese: bool,
}

impl DisentanglerConfig {
    pub fn new(input_dim: usize, vocab_size: usize) -> Self {
        DisentanglerConfig {
            input_dim,
            latent_dim: 200,
            hidden: 256,
            position_hidden: 128,
            max_len: 48,
            num_tags: NUM_UPOS,
            probe_rank: 64,
            vocab_size,
            margin: 0.4,
            fixed_kappa: None,
            z_pooling: ZPooling::AfterSampling,
            variant: Variant::Sp,
            siamese: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.latent_dim,
            self.hidden,
            self.position_hidden,
            self.max_len,
            self.num_tags,
            self.probe_rank,
            self.vocab_size,
        ];
        if dims.contains(&0) {
            return Err(Error::config("disentangler dimensions must be positive"));
        }
        if self.latent_dim < 2 {
            return Err(Error::config("the vMF latent needs dimension >= 2"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::config("margin must be non-negative"));
        }
        if let Some(k) = self.fixed_kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::config("fixed kappa must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Parameter-shared inference networks, decoder and auxiliary heads. Source
/// and target sentences pass through the very same parameters.
#[derive(Clone, Debug)]
pub struct SiameseDisentangler {
    cfg: DisentanglerConfig,
    semantic: Mlp,
    syntactic: Mlp,
    decoder: Linear,
    position: Mlp,
    tagger: Linear,
    probe: ParamId,
}

const PREFIX: &str = "s2dm";

/// Latents for a batch of sentences whose tokens are stacked row-wise.
#[derive(Clone, Debug)]
pub struct LatentOutputs {
    pub lengths: Vec<usize>,
    /// Contextual token vectors `[N, E]`.
    pub e: Var,
    pub mu_alpha: Var,
    pub kappa: Var,
    pub mu_beta: Var,
    pub sigma2: Var,
    /// Per-token samples `[N, d]`.
    pub y: Var,
    pub z: Var,
    /// Sentence vectors `[B, d]`.
    pub y_pooled: Var,
    pub z_pooled: Var,
    /// The syntactic vector concatenated into `h_i`, `[N, d]`.
    pub z_h: Var,
}

/// `[B, N]` averaging matrix over consecutive token blocks.
pub fn pooling_matrix(lengths: &[usize]) -> Tensor {
    let n: usize = lengths.iter().sum();
    let mut data = vec![0.0; lengths.len() * n];
    let mut off = 0;
    for (b, &len) in lengths.iter().enumerate() {
        for i in off..off + len {
            data[b * n + i] = 1.0 / len as f64;
        }
        off += len;
    }
    Tensor::new(vec![lengths.len(), n], data).expect("pooling shape")
}

/// `[N, B]` indicator mapping each token to its sentence.
pub fn expansion_matrix(lengths: &[usize]) -> Tensor {
    let n: usize = lengths.iter().sum();
    let b = lengths.len();
    let mut data = vec![0.0; n * b];
    let mut off = 0;
    for (s, &len) in lengths.iter().enumerate() {
        for i in off..off + len {
            data[i * b + s] = 1.0;
        }
        off += len;
    }
    Tensor::new(vec![n, b], data).expect("expansion shape")
}

impl SiameseDisentangler {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: DisentanglerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (e, d, h) = (cfg.input_dim, cfg.latent_dim, cfg.hidden);
        let m = e + d;
        let semantic = Mlp::new(
            store,
            &format!("{PREFIX}.semantic"),
            &[e, h, d + 1],
            Activation::Tanh,
            rng,
        )?;
        let syntactic = Mlp::new(
            store,
            &format!("{PREFIX}.syntactic"),
            &[e, h, 2 * d],
            Activation::Tanh,
            rng,
        )?;
        let decoder = Linear::new(
            store,
            &format!("{PREFIX}.decoder"),
            2 * d,
            cfg.vocab_size,
            rng,
        )?;
        let ph = cfg.position_hidden;
        let position = Mlp::new(
            store,
            &format!("{PREFIX}.position"),
            &[m, ph, ph, cfg.max_len],
            Activation::Tanh,
            rng,
        )?;
        let tagger = Linear::new(store, &format!("{PREFIX}.tagger"), m, cfg.num_tags, rng)?;
        let probe = store.add(
            format!("{PREFIX}.probe"),
            randn(&[cfg.probe_rank, m], (1.0 / m as f64).sqrt(), rng),
        )?;
        Ok(SiameseDisentangler {
            cfg,
            semantic,
            syntactic,
            decoder,
            position,
            tagger,
            probe,
        })
    }

    pub fn from_store(store: &ParamStore, cfg: DisentanglerConfig) -> Result<Self> {
        cfg.validate()?;
        let model = SiameseDisentangler {
            semantic: Mlp::from_store(store, &format!("{PREFIX}.semantic"), 2, Activation::Tanh)?,
            syntactic: Mlp::from_store(store, &format!("{PREFIX}.syntactic"), 2, Activation::Tanh)?,
            decoder: Linear::from_store(store, &format!("{PREFIX}.decoder"))?,
            position: Mlp::from_store(store, &format!("{PREFIX}.position"), 3, Activation::Tanh)?,
            tagger: Linear::from_store(store, &format!("{PREFIX}.tagger"))?,
            probe: lookup(store, &format!("{PREFIX}.probe"))?,
            cfg,
        };
        let m = model.cfg.input_dim + model.cfg.latent_dim;
        let expected = [
            (model.semantic.layers[0].fan_in(store), model.cfg.input_dim),
            (
                model.semantic.layers[1].fan_out(store),
                model.cfg.latent_dim + 1,
            ),
            (model.decoder.fan_out(store), model.cfg.vocab_size),
            (model.tagger.fan_in(store), m),
            (model.position.layers[2].fan_out(store), model.cfg.max_len),
        ];
        if expected.iter().any(|(a, b)| a != b)
            || store.get(model.probe).shape() != [model.cfg.probe_rank, m]
        {
            return Err(Error::Checkpoint(
                "disentangler shapes disagree with the configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn config(&self) -> &DisentanglerConfig {
        &self.cfg
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.semantic.ids();
        ids.extend(self.syntactic.ids());
        ids.extend(self.decoder.ids());
        ids.extend(self.position.ids());
        ids.extend(self.tagger.ids());
        ids.push(self.probe);
        ids
    }

    /// Parameters a sentence passes through on its way to `y` and `z`. The
    /// siamese branches are two uses of this one list.
    pub fn branch_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.semantic.ids();
        ids.extend(self.syntactic.ids());
        ids
    }

    pub fn probe_id(&self) -> ParamId {
        self.probe
    }

    pub fn set_frozen(&self, store: &mut ParamStore, frozen: bool) {
        for id in self.param_ids() {
            store.set_frozen(id, frozen);
        }
    }

    pub fn hash(&self, store: &ParamStore) -> u64 {
        store.hash_of(&self.param_ids())
    }

    fn semantic_heads(&self, tape: &mut Tape, store: &ParamStore, e: Var) -> (Var, Var) {
        let d = self.cfg.latent_dim;
        let out = self.semantic.forward(tape, store, e);
        let raw_mu = tape.slice(out, 1, 0, d);
        let mu = tape.normalize(raw_mu);
        let n = tape.value(e).rows();
        let kappa = match self.cfg.fixed_kappa {
            Some(k) => tape.constant(Tensor::full(&[n, 1], k)),
            None => {
                let raw_k = tape.slice(out, 1, d, 1);
                tape.softplus(raw_k)
            }
        };
        (mu, kappa)
    }

    /// Per-token mean directions μ_α, `[N, d]`.
    pub fn semantic_means(&self, tape: &mut Tape, store: &ParamStore, e: Var) -> Var {
        self.semantic_heads(tape, store, e).0
    }

    /// Per-token Gaussian means μ_β, `[N, d]`.
    pub fn syntactic_means(&self, tape: &mut Tape, store: &ParamStore, e: Var) -> Var {
        let out = self.syntactic.forward(tape, store, e);
        tape.slice(out, 1, 0, self.cfg.latent_dim)
    }

    /// Posterior parameters and reparameterized samples for every token of
    /// the stacked sentences in `e`. With a mean-mode noise source the
    /// samples are the means.
    pub fn infer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        e: Var,
        lengths: &[usize],
        noise: &mut NoiseSource,
    ) -> Result<LatentOutputs> {
        let n: usize = lengths.iter().sum();
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::contract("every sentence needs at least one token"));
        }
        if tape.value(e).shape() != [n, self.cfg.input_dim] {
            return Err(Error::contract(format!(
                "expected token vectors [{n}, {}], got {:?}",
                self.cfg.input_dim,
                tape.value(e).shape()
            )));
        }
        let d = self.cfg.latent_dim;
        let (mu_alpha, kappa) = self.semantic_heads(tape, store, e);
        let syn = self.syntactic.forward(tape, store, e);
        let mu_beta = tape.slice(syn, 1, 0, d);
        let log_var = tape.slice(syn, 1, d, d);
        let sigma2 = variance(tape, log_var);

        let kappas = tape.value(kappa).data().to_vec();
        let y = match noise.vmf_frames(d, &kappas) {
            Some(frames) => vmf_sample_rows(tape, mu_alpha, frames),
            None => mu_alpha,
        };
        let z = match noise.normal(&[n, d]) {
            Some(eps) => gauss_sample(tape, mu_beta, sigma2, eps),
            None => mu_beta,
        };

        let pool = tape.constant(pooling_matrix(lengths));
        let expand = tape.constant(expansion_matrix(lengths));
        let y_pooled = tape.matmul(pool, y);
        let (z_pooled, z_h) = match self.cfg.z_pooling {
            ZPooling::AfterSampling | ZPooling::PerToken => {
                let zp = tape.matmul(pool, z);
                let zh = if self.cfg.z_pooling == ZPooling::PerToken {
                    z
                } else {
                    tape.matmul(expand, zp)
                };
                (zp, zh)
            }
            ZPooling::BeforeSampling => {
                let m = tape.matmul(pool, mu_beta);
                let s = tape.matmul(pool, sigma2);
                let zp = match noise.normal(&[lengths.len(), d]) {
                    Some(eps) => gauss_sample(tape, m, s, eps),
                    None => m,
                };
                (zp, tape.matmul(expand, zp))
            }
        };
        Ok(LatentOutputs {
            lengths: lengths.to_vec(),
            e,
            mu_alpha,
            kappa,
            mu_beta,
            sigma2,
            y,
            z,
            y_pooled,
            z_pooled,
            z_h,
        })
    }

    pub(crate) fn decode_logits(&self, tape: &mut Tape, store: &ParamStore, y: Var, z: Var) -> Var {
        let yz = tape.concat(&[y, z], 1);
        self.decoder.forward(tape, store, yz)
    }

    pub(crate) fn position_logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        self.position.forward(tape, store, h)
    }

    pub(crate) fn tag_logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        self.tagger.forward(tape, store, h)
    }

    /// `B h_i` for every row of `h`, `[N, k]`.
    pub(crate) fn probe_project(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let b = tape.param(store, self.probe);
        let bt = tape.transpose(b);
        tape.matmul(h, bt)
    }
}
