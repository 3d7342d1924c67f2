use super::*;
use crate::model::ModelConfig;

pub(crate) fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        n_blocks: 2,
        channels: 4,
        kernel: 3,
        steps: 2,
        ..ModelConfig::default()
    };
    cfg.ccc.hidden = 4;
    cfg.ccc.layers = 1;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 2;
    cfg.train.warmup_fraction = 0.25;
    cfg.data.train_utterances = 3;
    cfg.data.eval_utterances = 2;
    cfg.data.utterance_len = 4000;
    cfg.data.recording_len = 40_000;
    cfg
}

fn run(cfg: &RunConfig) -> TrainReport {
    let corpus = Corpus::build(&cfg.data).unwrap();
    train(cfg, &corpus, None, &mut |_| {}).unwrap()
}

#[test]
fn step_count_and_warmup_rows() {
    let cfg = tiny();
    let r = run(&cfg);
    assert_eq!(r.steps, 4 * 2);
    assert_eq!(r.loss_log.len(), 8);
    assert_eq!(r.epochs.len(), 4);
    for row in &r.loss_log {
        let l = &row.losses;
        if row.epoch == 1 {
            assert!(l.l_p_to_a.is_none() && l.l_a_to_p.is_none());
            assert_eq!(l.l_a_combined, l.l_a);
        } else {
            let pa = l.l_p_to_a.unwrap();
            let ap = l.l_a_to_p.unwrap();
            assert!((l.l_a_combined - l.l_a - cfg.ccc.lambda1 * pa).abs() < 1e-7);
            assert!((l.l_p_combined - l.l_p - cfg.ccc.lambda2 * ap).abs() < 1e-7);
        }
    }
    let csv = loss_log_csv(&r.loss_log);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LOSS_LOG_HEADER));
    assert_eq!(lines.next().unwrap().split(',').nth(4), Some(""));
}

#[test]
fn mapping_nets_frozen_during_warmup() {
    let cfg = tiny();
    let corpus = Corpus::build(&cfg.data).unwrap();
    let mut t = Trainer::new(&cfg, &corpus).unwrap();
    let before = t.ccc().store().clone();
    let model_before = t.model().store().clone();
    let (mut log, mut warn) = (Vec::new(), Vec::new());
    t.run_epoch(1, &mut log, &mut warn).unwrap();
    for (a, b) in before.params().iter().zip(t.ccc().store().params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert!(model_before.params().iter().zip(t.model().store().params()).any(|(a, b)| a.value != b.value));
    assert_eq!(t.optimizer_steps(), (2, 0));
    t.run_epoch(2, &mut log, &mut warn).unwrap();
    assert_eq!(t.optimizer_steps(), (4, 2));
    assert!(before.params().iter().zip(t.ccc().store().params()).any(|(a, b)| a.value != b.value));
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny();
    let a = run(&cfg);
    let b = run(&cfg);
    assert_eq!(checkpoint::to_bytes(&a.model), checkpoint::to_bytes(&b.model));
    assert_eq!(loss_log_csv(&a.loss_log), loss_log_csv(&b.loss_log));
    let mut other = cfg.clone();
    other.train.seed = 1;
    assert_ne!(checkpoint::to_bytes(&run(&other).model), checkpoint::to_bytes(&a.model));
}

#[test]
fn ablated_configurations_train() {
    let mut cfg = tiny();
    cfg.train.epochs = 2;
    for (diffusion, phase, mode, noise) in [
        (false, true, CrossMode::Both, NoiseMode::Real),
        (true, false, CrossMode::PToA, NoiseMode::Real),
        (true, true, CrossMode::None, NoiseMode::Gaussian),
        (true, true, CrossMode::AToP, NoiseMode::Real),
    ] {
        cfg.model.diffusion = diffusion;
        cfg.model.phase_aware = phase;
        cfg.train.cross_mode = mode;
        cfg.data.noise_mode = noise;
        let r = run(&cfg);
        assert!(r.epochs.iter().all(|e| e.loss.is_finite()));
        let last = r.loss_log.last().unwrap().losses;
        assert_eq!(last.l_p_to_a.is_some(), mode.p_to_a());
        assert_eq!(last.l_a_to_p.is_some(), mode.a_to_p());
    }
}

#[test]
fn writes_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path().join("run")).unwrap();
    let mut cfg = tiny();
    cfg.train.epochs = 2;
    cfg.train.checkpoint_every = 1;
    let corpus = Corpus::build(&cfg.data).unwrap();
    let mut seen = Vec::new();
    let r = train(&cfg, &corpus, Some(&out), &mut |s| seen.push(s.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    let loaded = checkpoint::load(&out.checkpoint()).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded), checkpoint::to_bytes(&r.model));
    assert!(out.epoch_checkpoint(1).exists());
    let metrics = std::fs::read_to_string(out.metrics()).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let dumped = std::fs::read_to_string(out.config()).unwrap();
    assert_eq!(RunConfig::parse(&dumped).unwrap(), cfg);
}

#[test]
fn nan_aborts_and_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path()).unwrap();
    let mut cfg = tiny();
    cfg.train.lr_init = 1e300;
    cfg.train.epochs = 3;
    let corpus = Corpus::build(&cfg.data).unwrap();
    let err = train(&cfg, &corpus, Some(&out), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let kept = checkpoint::load(&out.checkpoint()).unwrap();
    assert!(kept.store().all_finite());
}
