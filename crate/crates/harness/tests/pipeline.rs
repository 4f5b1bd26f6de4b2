use ovo_core::cohort::{CohortSpec, ModalitySpec};
use ovo_core::Error;
use ovo_harness::checkpoint::Checkpoint;
use ovo_harness::config::{LambdaSource, Regime, RunConfig};
use ovo_harness::data::RunData;
use ovo_harness::model::ENCODER_PREFIX;
use ovo_harness::train::{evaluate, finetune, pretrain};

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn small(regime: Regime, mods: &[&str], seed: u64) -> (RunConfig, RunData) {
    let mut cfg = RunConfig::new(RunConfig::default_spec(120, 5), names(mods), regime, seed);
    cfg.max_epochs = 12;
    cfg.patience = 3;
    cfg.learning_rate = 3e-3;
    let data = RunData::load(&cfg).unwrap();
    (cfg, data)
}

#[test]
fn two_modality_pretraining_has_no_lambda_and_five_lands_on_simplex() {
    let (cfg, data) = small(Regime::ContrastivePretrain, &["discharge", "image"], 0);
    let out = pretrain(&cfg, &data).unwrap();
    assert!(out.checkpoint.lambda.is_none());
    assert!(out.lambda_trace.is_empty());
    assert_eq!(out.epoch_losses.len(), 12);

    let five = ["discharge", "radiology", "image", "demographics", "timeseries"];
    let (cfg, data) = small(Regime::ContrastivePretrain, &five, 0);
    let out = pretrain(&cfg, &data).unwrap();
    let l = out.checkpoint.lambda.unwrap();
    assert_eq!(l.len(), 5);
    assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12 && l.iter().all(|&x| x > 0.0));
}

#[test]
fn pretraining_descends_on_aligned_noise_free_cohort() {
    let mods = vec![
        ModalitySpec { noise_sigma: 0.0, ..ModalitySpec::static_vector("a", 8, 1.0, 1) },
        ModalitySpec { noise_sigma: 0.0, ..ModalitySpec::static_vector("b", 8, 1.0, 2) },
    ];
    let mut descended = 0;
    for seed in 0..10 {
        let mut cfg = RunConfig::new(CohortSpec::new(60, mods.clone(), seed), names(&["a", "b"]), Regime::ContrastivePretrain, seed);
        cfg.max_epochs = 20;
        cfg.learning_rate = 1e-2;
        let data = RunData::load(&cfg).unwrap();
        let out = pretrain(&cfg, &data).unwrap();
        descended += (out.final_pool_loss < out.initial_pool_loss) as usize;
    }
    assert!(descended >= 9, "{descended}/10");
}

#[test]
fn nonfinite_loss_reports_divergence() {
    let (mut cfg, data) = small(Regime::ContrastivePretrain, &["discharge", "image"], 0);
    cfg.initial_tau = 1e-320;
    match pretrain(&cfg, &data) {
        Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn frozen_finetune_keeps_encoders_bitwise() {
    let mods = ["discharge", "image", "demographics"];
    let (cfg, data) = small(Regime::ContrastivePretrain, &mods, 1);
    let pre = pretrain(&cfg, &data).unwrap();
    let fcfg = cfg.with_regime(Regime::FrozenFinetune);
    let out = finetune(&fcfg, &data, Some(&pre.checkpoint)).unwrap();
    assert_eq!(out.encoder_fingerprint_before, out.encoder_fingerprint_after);
    assert_eq!(out.encoder_fingerprint_after, pre.model.store.fingerprint(ENCODER_PREFIX));

    // the supervised baseline does move its encoders
    let sup = finetune(&cfg.with_regime(Regime::SupervisedBaseline), &data, None).unwrap();
    assert_ne!(sup.encoder_fingerprint_before, sup.encoder_fingerprint_after);
}

#[test]
fn missing_or_mismatched_checkpoint_is_a_config_error() {
    let (cfg, data) = small(Regime::FrozenFinetune, &["discharge", "image"], 0);
    assert!(matches!(finetune(&cfg, &data, None), Err(Error::Config(_))));

    let (pcfg, pdata) = small(Regime::ContrastivePretrain, &["discharge", "radiology"], 0);
    let other = pretrain(&pcfg, &pdata).unwrap();
    assert!(matches!(finetune(&cfg, &data, Some(&other.checkpoint)), Err(Error::Config(_))));

    let (mut mcfg, mdata) = small(Regime::Mlstm, &["discharge", "image", "timeseries"], 0);
    assert!(matches!(finetune(&mcfg, &mdata, None), Err(Error::Config(_))));
    mcfg.lambda_source = LambdaSource::Literal(vec![0.5, 0.3, 0.2]);
    assert!(finetune(&mcfg, &mdata, None).is_ok());
}

#[test]
fn patience_zero_stops_after_first_non_improving_epoch() {
    let (mut cfg, data) = small(Regime::SupervisedBaseline, &["discharge", "image"], 2);
    cfg.patience = 0;
    cfg.max_epochs = 40;
    let out = finetune(&cfg, &data, None).unwrap();
    let h = &out.history;
    let first_miss = (1..h.len()).find(|&e| {
        let best = h[..e].iter().map(|p| p.val_auroc).fold(f64::NEG_INFINITY, f64::max);
        h[e].val_auroc <= best
    });
    assert_eq!(Some(out.epochs_run - 1), first_miss);
}

#[test]
fn early_stopping_waits_exactly_patience_epochs() {
    for seed in 0..4 {
        let (mut cfg, data) = small(Regime::SupervisedBaseline, &["discharge", "radiology"], seed);
        cfg.max_epochs = 60;
        cfg.patience = 4;
        let out = finetune(&cfg, &data, None).unwrap();
        assert!(out.epochs_run <= cfg.max_epochs);
        if out.epochs_run < cfg.max_epochs {
            assert_eq!(out.epochs_run, out.best_epoch + cfg.patience + 1);
        }
        let best = out.history.iter().map(|e| e.val_auroc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.history[out.best_epoch].val_auroc, best);
        assert!(out.history[..out.best_epoch].iter().all(|e| e.val_auroc < best));
    }
}

#[test]
fn reported_metrics_come_from_the_best_epoch() {
    let (mut cfg, data) = small(Regime::SupervisedBaseline, &["discharge", "image", "radiology"], 3);
    cfg.max_epochs = 30;
    cfg.patience = 30;
    let out = finetune(&cfg, &data, None).unwrap();
    assert_eq!(out.checkpoint.epoch, out.best_epoch);
    assert_eq!(out.checkpoint.best_validation_auroc, Some(out.history[out.best_epoch].val_auroc));
    // replaying the run to the best epoch only gives the same parameters and test metrics
    let mut replay_cfg = cfg.clone();
    replay_cfg.max_epochs = out.best_epoch + 1;
    let replay = finetune(&replay_cfg, &data, None).unwrap();
    assert_eq!(replay.metrics, out.metrics);
    let restored = out.checkpoint.restore(&data).unwrap();
    let again = evaluate(&restored, &data, cfg.task, cfg.seed, &data.split.finetune.test).unwrap();
    assert_eq!(again, out.metrics);
}

#[test]
fn checkpoint_reload_is_bitwise() {
    let (cfg, data) = small(Regime::ContrastivePretrain, &["discharge", "image", "timeseries"], 4);
    let pre = pretrain(&cfg, &data).unwrap();
    let mut mcfg = cfg.with_regime(Regime::Mlstm);
    mcfg.max_epochs = 4;
    let out = finetune(&mcfg, &data, Some(&pre.checkpoint)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt.json");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    let model = back.restore(&data).unwrap();
    let inputs = data.inputs(&data.held_out()).unwrap();
    let a = out.model.predict(&inputs).unwrap();
    let b = model.predict(&inputs).unwrap();
    let bits = |t: &ovo_core::autodiff::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(back.gate_lambdas, pre.checkpoint.lambda);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let (cfg, data) = small(Regime::ContrastivePretrain, &["discharge", "image"], 0);
    let pre = pretrain(&cfg, &data).unwrap();
    let mut c = pre.checkpoint.clone();
    c.config.seed += 1;
    assert!(matches!(Checkpoint::from_json(&c.to_json()), Err(Error::Parse(_))));
    let text = pre.checkpoint.to_json().replace("ovo-checkpoint v1", "ovo-checkpoint v9");
    assert!(matches!(Checkpoint::from_json(&text), Err(Error::Parse(_))));
}

#[test]
fn identical_configs_reproduce_metrics_bitwise() {
    let (cfg, data) = small(Regime::ContrastivePretrain, &["discharge", "radiology", "image"], 6);
    let a = pretrain(&cfg, &data).unwrap();
    let b = pretrain(&cfg, &RunData::load(&cfg).unwrap()).unwrap();
    assert_eq!(a.final_pool_loss.to_bits(), b.final_pool_loss.to_bits());
    assert_eq!(a.checkpoint, b.checkpoint);
    let m = cfg.with_regime(Regime::Mlstm);
    let x = finetune(&m, &data, Some(&a.checkpoint)).unwrap();
    let y = finetune(&m, &data, Some(&b.checkpoint)).unwrap();
    assert_eq!(x.metrics.auroc.to_bits(), y.metrics.auroc.to_bits());
    assert_eq!(x.metrics.auprc.to_bits(), y.metrics.auprc.to_bits());
}

#[test]
fn multilabel_task_trains_and_reports_macro_metrics() {
    let (mut cfg, data) = small(Regime::SupervisedBaseline, &["discharge", "image"], 0);
    cfg.task = ovo_core::fusion::Task::Multilabel;
    let out = finetune(&cfg, &data, None).unwrap();
    assert_eq!(out.metrics.task, "multilabel");
    assert!((0.0..=1.0).contains(&out.metrics.auroc));
}
