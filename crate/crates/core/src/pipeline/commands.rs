use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_world, evaluate_stage1, fine_tune_and_score, pooled_means, pretrain_encoder, score_mrc,
    train_disentangler, Pretrained, RunConfig, Stage1Metrics, World,
};
use crate::data::{load_pairs, read_jsonl, write_jsonl, write_pairs, Lang, MrcSplits, Vocab};
use crate::disentangler::{LossKind, LossSet, SiameseDisentangler, StepLog, Variant};
use crate::encoder::ToyEncoder;
use crate::eval::{pca_export, write_reports, EvalReport};
use crate::mrc::{MrcModel, PredictionRecord, SpanHead, Stage2Log};
use crate::tensor::{ParamId, ParamStore};
use crate::{Error, Result};

const STAGE1_KIND: &str = "stage1";
const STAGE2_KIND: &str = "stage2";

fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn archive_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    cfg.save(&dir.join("config.toml"))
}

/// Writes the parallel corpus, vocabulary, STS items and MRC sets.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let world = build_world(cfg)?;
    let dir = data_dir(cfg);
    ensure_dir(&dir)?;
    archive_config(cfg, &cfg.out_dir)?;
    write_pairs(&dir, "train", &world.train)?;
    write_pairs(&dir, "heldout", &world.heldout)?;
    write_jsonl(&dir.join("sts.jsonl"), &world.sts)?;
    world.vocab.save(&dir.join("vocab.txt"))?;
    for (split, sets) in [
        ("mrc_train", &world.mrc_train),
        ("mrc_test", &world.mrc_test),
    ] {
        write_jsonl(&dir.join(format!("{split}.l1.jsonl")), &sets.l1)?;
        write_jsonl(&dir.join(format!("{split}.l2.jsonl")), &sets.l2)?;
    }
    Ok(dir)
}

/// Reads back what `cmd_gen_data` wrote.
pub fn load_world(cfg: &RunConfig) -> Result<World> {
    let dir = data_dir(cfg);
    let mrc = |split: &str| -> Result<MrcSplits> {
        Ok(MrcSplits {
            l1: read_jsonl(&dir.join(format!("{split}.l1.jsonl")))?,
            l2: read_jsonl(&dir.join(format!("{split}.l2.jsonl")))?,
        })
    };
    Ok(World {
        train: load_pairs(&dir, "train")?,
        heldout: load_pairs(&dir, "heldout")?,
        sts: read_jsonl(&dir.join("sts.jsonl"))?,
        vocab: Vocab::load(&dir.join("vocab.txt"))?,
        mrc_train: mrc("mrc_train")?,
        mrc_test: mrc("mrc_test")?,
    })
}

fn meta(kind: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("kind".into(), kind.into());
    m.insert("seed".into(), cfg.seed.to_string());
    for (k, v) in extra {
        m.insert(k.to_string(), v.clone());
    }
    m
}

fn check_kind(meta: &BTreeMap<String, String>, want: &str, path: &Path) -> Result<()> {
    match meta.get("kind") {
        Some(k) if k == want => Ok(()),
        other => Err(Error::Checkpoint(format!(
            "{}: expected a {want} checkpoint, found {:?}",
            path.display(),
            other
        ))),
    }
}

fn stage1_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("stage1").join("checkpoint.json")
}

fn stage2_path(cfg: &RunConfig, model: &str) -> PathBuf {
    cfg.out_dir.join("stage2").join(format!("{model}.json"))
}

/// Stage 1 from files: writes the loss curve and the encoder plus
/// disentangler checkpoint.
pub fn cmd_train_stage1(cfg: &RunConfig) -> Result<Vec<StepLog>> {
    let world = load_world(cfg)?;
    let mut pre = pretrain_encoder(cfg, &world)?;
    let dir = cfg.out_dir.join("stage1");
    ensure_dir(&dir)?;
    archive_config(cfg, &dir)?;
    let (model, logs) = train_disentangler(cfg, &world, &mut pre, |_| Ok(()))?;
    write_jsonl(&dir.join("loss_log.jsonl"), &logs)?;
    let mut ids = pre.encoder.param_ids();
    ids.extend(model.param_ids());
    let extra = [
        ("encoder_hash", pre.encoder.hash(&pre.store).to_string()),
        ("disentangler_hash", model.hash(&pre.store).to_string()),
    ];
    pre.store.save_checkpoint(
        &stage1_path(cfg),
        Some(&ids),
        &meta(STAGE1_KIND, cfg, &extra),
    )?;
    Ok(logs)
}

/// Rebuilds the encoder and disentangler from the stage-1 checkpoint.
pub fn load_stage1(cfg: &RunConfig, world: &World) -> Result<(Pretrained, SiameseDisentangler)> {
    let path = stage1_path(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let encoder = ToyEncoder::new(&mut store, cfg.encoder_config(world.vocab.len()), &mut rng)?;
    let model = SiameseDisentangler::new(
        &mut store,
        cfg.disentangler_config(encoder.dim(), world.vocab.len()),
        &mut rng,
    )?;
    let (loaded, m) = store.load_checkpoint(&path)?;
    check_kind(&m, STAGE1_KIND, &path)?;
    if loaded.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{}: incomplete stage-1 checkpoint",
            path.display()
        )));
    }
    if m.get("disentangler_hash") != Some(&model.hash(&store).to_string()) {
        return Err(Error::Checkpoint(format!(
            "{}: disentangler hash mismatch",
            path.display()
        )));
    }
    encoder.set_frozen(&mut store, true);
    Ok((
        Pretrained {
            store,
            encoder,
            warm_start_losses: Vec::new(),
        },
        model,
    ))
}

fn save_mrc(
    cfg: &RunConfig,
    name: &str,
    model: &MrcModel,
    store: &ParamStore,
    log: &Stage2Log,
) -> Result<()> {
    let mut ids: Vec<ParamId> = model.encoder.param_ids();
    if let Some(d) = &model.disentangler {
        ids.extend(d.param_ids());
    }
    ids.extend(model.head.ids());
    let extra = [("stage2_log", serde_json::to_string(log)?)];
    store.save_checkpoint(
        &stage2_path(cfg, name),
        Some(&ids),
        &meta(STAGE2_KIND, cfg, &extra),
    )
}

fn load_mrc(
    cfg: &RunConfig,
    world: &World,
    name: &str,
    with_disentangler: bool,
) -> Result<(MrcModel, ParamStore, Stage2Log)> {
    let path = stage2_path(cfg, name);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let encoder = ToyEncoder::new(&mut store, cfg.encoder_config(world.vocab.len()), &mut rng)?;
    let disentangler = if with_disentangler {
        Some(SiameseDisentangler::new(
            &mut store,
            cfg.disentangler_config(encoder.dim(), world.vocab.len()),
            &mut rng,
        )?)
    } else {
        None
    };
    let model = MrcModel::new(&mut store, encoder, disentangler, &mut rng)?;
    let (loaded, m) = store.load_checkpoint(&path)?;
    check_kind(&m, STAGE2_KIND, &path)?;
    if loaded.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{}: incomplete stage-2 checkpoint",
            path.display()
        )));
    }
    let log: Stage2Log =
        serde_json::from_str(m.get("stage2_log").map(String::as_str).unwrap_or(""))
            .map_err(|e| Error::Checkpoint(format!("{}: stage-2 log: {e}", path.display())))?;
    let head = SpanHead::from_store(
        &store,
        if with_disentangler {
            "span_head"
        } else {
            "baseline.span_head"
        },
    )?;
    Ok((MrcModel { head, ..model }, store, log))
}

/// Stage 2 from files: fine-tunes the pipeline and the no-disentangler
/// baseline on L1 questions with the same budget.
pub fn cmd_train_stage2(cfg: &RunConfig) -> Result<(Stage2Log, Stage2Log)> {
    let world = load_world(cfg)?;
    let (pre, model) = load_stage1(cfg, &world)?;
    let dir = cfg.out_dir.join("stage2");
    ensure_dir(&dir)?;
    archive_config(cfg, &dir)?;
    let (m, store, s2dm) = fine_tune_and_score(cfg, &world, &pre, Some(&model))?;
    save_mrc(cfg, "s2dm", &m, &store, &s2dm.stage2)?;
    let (b, bstore, base) = fine_tune_and_score(cfg, &world, &pre, None)?;
    save_mrc(cfg, "baseline", &b, &bstore, &base.stage2)?;
    Ok((s2dm.stage2, base.stage2))
}

/// Full evaluation: zero-shot span metrics for both models, then the
/// disentanglement metrics and a PCA export of the stage-1 latents.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let world = load_world(cfg)?;
    let (pre, model) = load_stage1(cfg, &world)?;
    let dir = cfg.out_dir.join("eval");
    ensure_dir(&dir)?;
    archive_config(cfg, &dir)?;
    let mut reports = Vec::new();
    let n = world.mrc_test.l2.len();
    for (name, with) in [("s2dm", true), ("baseline", false)] {
        let (m, store, log) = load_mrc(cfg, &world, name, with)?;
        let scores = score_mrc(&m, &store, &world, log)?;
        let records: Vec<PredictionRecord> = world
            .mrc_test
            .l2
            .iter()
            .zip(&scores.predictions_l2)
            .map(|(x, p)| PredictionRecord::new(x, p))
            .collect();
        write_jsonl(&dir.join(format!("predictions.{name}.l2.jsonl")), &records)?;
        reports.extend(scores.reports(name, n)?);
    }
    let metrics = evaluate_stage1(cfg, &world, &pre, &model)?;
    reports.extend(metrics.reports("s2dm")?);
    for vector in ["y", "z"] {
        let ratio = export_pca(
            &world,
            &pre,
            &model,
            vector,
            &dir.join(format!("pca.{vector}.csv")),
        )?;
        reports.push(EvalReport::new(
            "pca_top2_variance",
            ratio,
            "l1-l2",
            vector,
            "s2dm",
            2 * world.heldout.len(),
        )?);
    }
    write_reports(&dir.join("reports.jsonl"), &reports)?;
    Ok(reports)
}

/// Projects pooled held-out latents of both languages; returns the share of
/// variance kept by two components.
fn export_pca(
    world: &World,
    pre: &Pretrained,
    model: &SiameseDisentangler,
    vector: &str,
    path: &Path,
) -> Result<f64> {
    let (mut vectors, mut labels) = (Vec::new(), Vec::new());
    for p in &world.heldout {
        for lang in [Lang::L1, Lang::L2] {
            let (y, z) = pooled_means(pre, model, &world.vocab, p.tokens(lang))?;
            vectors.push(if vector == "y" { y } else { z });
            labels.push((p.id.to_string(), lang.as_str().to_string()));
        }
    }
    let pca = pca_export(&vectors, &labels, path)?;
    let total: f64 = pca.eigenvalues.iter().sum();
    Ok((pca.eigenvalues[0] + pca.eigenvalues[1]) / total)
}

/// PCA of stage-1 `y` or `z` sentence vectors to a CSV file.
pub fn cmd_export_pca(cfg: &RunConfig, vector: &str, path: &Path) -> Result<f64> {
    if vector != "y" && vector != "z" {
        return Err(Error::config(format!(
            "vector must be y or z, got {vector:?}"
        )));
    }
    let world = load_world(cfg)?;
    let (pre, model) = load_stage1(cfg, &world)?;
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    export_pca(&world, &pre, &model, vector, path)
}

/// One stage-1 configuration of the ablation grid and its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub losses: LossSet,
    pub siamese: bool,
    pub metrics: Stage1Metrics,
    pub final_loss: f64,
}

/// Full objective, each single removal of a non-reconstruction term and the
/// single-network mode.
pub fn default_grid(variant: Variant) -> Vec<(String, LossSet, bool)> {
    let full = LossSet::full(variant, true);
    let syntax = match variant {
        Variant::Pos => LossKind::Pos,
        Variant::Sp => LossKind::Stl,
    };
    let mut cells = vec![("full".to_string(), full.clone(), true)];
    for k in [LossKind::Crl, LossKind::Sdl, LossKind::Wpl, syntax] {
        cells.push((format!("no_{k}"), full.without(k), true));
    }
    cells.push((
        "single_network".to_string(),
        LossSet::full(variant, false),
        false,
    ));
    cells
}

/// Re-runs stage 1 and its evaluation for every cell. Invalid cells are
/// reported before any training starts.
pub fn cmd_ablate(
    cfg: &RunConfig,
    cells: Option<Vec<(String, LossSet, bool)>>,
) -> Result<Vec<AblationCell>> {
    let cells = cells.unwrap_or_else(|| default_grid(cfg.variant));
    let problems: Vec<String> = cells
        .iter()
        .filter_map(|(name, ls, siamese)| {
            ls.validate(cfg.variant, *siamese)
                .err()
                .map(|e| format!("{name}: {e}"))
        })
        .collect();
    if !problems.is_empty() {
        return Err(Error::config(problems.join("; ")));
    }
    let world = load_world(cfg)?;
    let dir = cfg.out_dir.join("ablate");
    ensure_dir(&dir)?;
    archive_config(cfg, &dir)?;
    let mut out = Vec::with_capacity(cells.len());
    for (name, losses, siamese) in cells {
        let cell_cfg = RunConfig {
            losses: Some(losses.clone()),
            siamese,
            ..cfg.clone()
        };
        let mut pre = pretrain_encoder(&cell_cfg, &world)?;
        let (model, logs) = train_disentangler(&cell_cfg, &world, &mut pre, |_| Ok(()))?;
        let metrics = evaluate_stage1(&cell_cfg, &world, &pre, &model)?;
        out.push(AblationCell {
            name,
            losses,
            siamese,
            metrics,
            final_loss: logs.last().map(|l| l.total).unwrap_or(f64::NAN),
        });
        write_jsonl(&dir.join("cells.jsonl"), &out)?;
    }
    Ok(out)
}
