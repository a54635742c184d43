use std::fs;
use std::path::Path;

use s2dm::data::read_jsonl;
use s2dm::disentangler::{LossKind, LossSet, StepLog};
use s2dm::eval::EvalReport;
use s2dm::pipeline::{
    build_world, cmd_ablate, cmd_eval, cmd_export_pca, cmd_gen_data, cmd_train_stage1,
    cmd_train_stage2, load_world, RunConfig,
};

fn tiny(dir: &Path) -> RunConfig {
    RunConfig {
        out_dir: dir.to_path_buf(),
        train_pairs: 40,
        heldout_pairs: 12,
        sts_per_level: 4,
        mrc_train_examples: 16,
        mrc_test_examples: 8,
        encoder_dim: 8,
        encoder_blocks: 1,
        latent_dim: 6,
        hidden: 10,
        fixed_kappa: Some(20.0),
        stage1_lr: 1e-3,
        stage1_steps: 4,
        stage1_batch: 4,
        stage2_lr: 1e-3,
        stage2_epochs: 1,
        stage2_batch: 4,
        probe_steps: 3,
        probe_sentences: 12,
        ..RunConfig::default()
    }
}

fn files(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    out.sort();
    out
}

#[test]
fn generated_data_is_deterministic_and_complete() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let da = cmd_gen_data(&tiny(a.path())).unwrap();
    let db = cmd_gen_data(&tiny(b.path())).unwrap();
    let names = files(&da);
    assert_eq!(names.len(), 12, "{names:?}");
    assert_eq!(names, files(&db));
    for n in &names {
        assert_eq!(
            fs::read(da.join(n)).unwrap(),
            fs::read(db.join(n)).unwrap(),
            "{n}"
        );
    }
    let cfg = tiny(a.path());
    let world = load_world(&cfg).unwrap();
    let built = build_world(&cfg).unwrap();
    assert_eq!(world.train.len(), 40);
    assert_eq!(world.heldout.len(), 12);
    assert_eq!(world.mrc_test.l2.len(), built.mrc_test.l2.len());
    assert!(world.mrc_test.l2.iter().all(|x| x.id.starts_with("test-")));
    assert_eq!(RunConfig::load(&a.path().join("config.toml")).unwrap(), cfg);

    let other = tempfile::tempdir().unwrap();
    let dc = cmd_gen_data(&RunConfig {
        seed: 1,
        ..tiny(other.path())
    })
    .unwrap();
    assert_ne!(
        fs::read(da.join("train.l1.conllu")).unwrap(),
        fs::read(dc.join("train.l1.conllu")).unwrap()
    );
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let logs = cmd_train_stage1(&cfg).unwrap();
    assert_eq!(logs.len(), 4);
    let logged: Vec<StepLog> = read_jsonl(&dir.path().join("stage1/loss_log.jsonl")).unwrap();
    assert_eq!(logged, logs);

    let (s2dm, base) = cmd_train_stage2(&cfg).unwrap();
    for log in [&s2dm, &base] {
        assert_eq!(log.epoch_losses.len(), 1);
        assert_eq!(log.access.l2, 0);
        assert!(log.access.l1 > 0);
    }
    assert!(s2dm.disentangler_hash.is_some());
    assert!(base.disentangler_hash.is_none());

    // The stage-2 checkpoint carries the stage-1 disentangler unchanged.
    let text = fs::read_to_string(dir.path().join("stage1/checkpoint.json")).unwrap();
    let meta = &serde_json::from_str::<serde_json::Value>(&text).unwrap()["meta"];
    assert_eq!(
        meta["disentangler_hash"].as_str().unwrap(),
        s2dm.disentangler_hash.unwrap().to_string()
    );
    assert_eq!(meta["kind"], "stage1");

    let reports = cmd_eval(&cfg).unwrap();
    let metrics: std::collections::BTreeSet<&str> =
        reports.iter().map(|r| r.metric.as_str()).collect();
    for m in [
        "em",
        "f1",
        "constituent_consistency",
        "retrieval_top1",
        "sts_pearson",
        "probe_distance_spearman",
        "pca_top2_variance",
    ] {
        assert!(metrics.contains(m), "missing {m} in {metrics:?}");
    }
    let written: Vec<EvalReport> = read_jsonl(&dir.path().join("eval/reports.jsonl")).unwrap();
    assert_eq!(written, reports);
    for f in [
        "predictions.s2dm.l2.jsonl",
        "predictions.baseline.l2.jsonl",
        "pca.y.csv",
        "pca.z.csv",
        "config.toml",
    ] {
        assert!(dir.path().join("eval").join(f).exists(), "{f}");
    }
    let out = dir.path().join("extra/pca.csv");
    let share = cmd_export_pca(&cfg, "z", &out).unwrap();
    assert!(share > 0.0 && share <= 1.0 + 1e-12);
    assert_eq!(
        fs::read_to_string(&out).unwrap().lines().count(),
        1 + 2 * 12
    );
    assert!(cmd_export_pca(&cfg, "e", &out).is_err());
}

#[test]
fn reruns_reproduce_losses_and_metrics() {
    let run = |dir: &Path| {
        let cfg = tiny(dir);
        cmd_gen_data(&cfg).unwrap();
        let logs = cmd_train_stage1(&cfg).unwrap();
        cmd_train_stage2(&cfg).unwrap();
        (logs, cmd_eval(&cfg).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (la, ra) = run(a.path());
    let (lb, rb) = run(b.path());
    assert_eq!(la, lb);
    assert_eq!(ra, rb);
}

#[test]
fn missing_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    assert!(matches!(
        cmd_train_stage1(&cfg),
        Err(s2dm::Error::Missing(_))
    ));
    cmd_gen_data(&cfg).unwrap();
    assert!(matches!(
        cmd_train_stage2(&cfg),
        Err(s2dm::Error::Missing(_))
    ));
    assert!(matches!(cmd_eval(&cfg), Err(s2dm::Error::Missing(_))));
}

#[test]
fn ablation_checks_cells_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let bad = vec![
        ("ok".to_string(), LossSet::full(cfg.variant, true), true),
        (
            "bad".to_string(),
            LossSet::only(&[LossKind::Rl, LossKind::Crl]),
            false,
        ),
    ];
    let err = cmd_ablate(&cfg, Some(bad)).unwrap_err().to_string();
    assert!(err.contains("bad"), "{err}");
    assert!(!dir.path().join("ablate").exists());

    cmd_gen_data(&cfg).unwrap();
    let cells = cmd_ablate(&cfg, None).unwrap();
    let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "full",
            "no_crl",
            "no_sdl",
            "no_wpl",
            "no_stl",
            "single_network"
        ]
    );
    assert!(cells.iter().all(|c| c.final_loss.is_finite()));
    assert!(!cells[5].siamese);
}
