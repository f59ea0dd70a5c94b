use maskhead::mlp::{layer_dims, load_weights, MlpParams};
use maskhead::oracle_tasks::{gen_gaussian_bags, GaussianBagSpec};
use maskhead::trainer::{train_student, train_teacher, Bag, TrainConfig, TrainData};

fn task(bags: usize, seed: u64) -> TrainData<f64> {
    let spec = GaussianBagSpec {
        bag_count: bags,
        seed,
        embed_dim: 16,
        d: 10,
        positives_per_bag: 2,
        mask_h: 32,
        mask_w: 32,
        image_h: 32,
        image_w: 32,
        ..Default::default()
    };
    let records = gen_gaussian_bags(&spec).unwrap().records;
    TrainData::split(records.iter().map(Bag::from_record).collect(), 0.2, seed)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        batch_size: 16,
        seed: 5,
        hidden: vec![32, 16, 8],
        patience: None,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_head() {
    let data = task(40, 1);
    let cfg = TrainConfig {
        epochs: 0,
        ..small_cfg()
    };
    let (head, log) = train_teacher(&data, &cfg, None).unwrap();
    assert!(log.epochs.is_empty());
    assert_eq!(
        head,
        MlpParams::init(cfg.seed, &layer_dims(16, &cfg.hidden, 5)).unwrap()
    );
}

#[test]
fn same_seed_same_losses_and_weights() {
    let data = task(80, 2);
    let (a, la) = train_teacher(&data, &small_cfg(), None).unwrap();
    let (b, lb) = train_teacher(&data, &small_cfg(), None).unwrap();
    assert_eq!(la.losses(), lb.losses());
    assert_eq!(a.fingerprint(), b.fingerprint());
    let (c, _) = train_teacher(&data, &TrainConfig { seed: 6, ..small_cfg() }, None).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn student_without_uncertainty_term_retraces_the_teacher() {
    let data = task(80, 3);
    let cfg = TrainConfig {
        lambda2: 0.0,
        ..small_cfg()
    };
    let (teacher, tlog) = train_teacher(&data, &cfg, None).unwrap();
    let (student, slog) = train_student(&data, &teacher, &cfg, None).unwrap();
    assert_eq!(tlog.losses(), slog.losses());
    assert_eq!(teacher, student);
}

#[test]
fn teacher_is_untouched_by_student_training() {
    let data = task(80, 4);
    let (teacher, _) = train_teacher(&data, &small_cfg(), None).unwrap();
    let before = teacher.fingerprint();
    let _ = train_student(&data, &teacher, &small_cfg(), None).unwrap();
    assert_eq!(before, teacher.fingerprint());
}

#[test]
fn student_rejects_mismatched_teacher() {
    let data = task(40, 5);
    let wrong = MlpParams::<f64>::init(0, &[16, 8, 4]).unwrap();
    let err = train_student(&data, &wrong, &small_cfg(), None).unwrap_err();
    assert!(matches!(err, maskhead::Error::DimsMismatch(_)));
}

#[test]
fn loss_settles_after_burn_in_and_student_keeps_accuracy() {
    let data = task(300, 6);
    let cfg = TrainConfig {
        epochs: 30,
        ..small_cfg()
    };
    let (teacher, tlog) = train_teacher(&data, &cfg, None).unwrap();
    let losses = tlog.losses();
    for w in losses[5..].windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "loss rose from {} to {}", w[0], w[1]);
    }
    let t_acc = tlog.final_accuracy().unwrap();
    assert!(t_acc >= 0.95, "teacher accuracy {t_acc}");
    let (_, slog) = train_student(&data, &teacher, &cfg, None).unwrap();
    let s_acc = slog.final_accuracy().unwrap();
    assert!(s_acc >= t_acc - 0.02, "student {s_acc} vs teacher {t_acc}");
}

#[test]
fn checkpoints_are_written_with_hash_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let data = task(40, 7);
    let cfg = TrainConfig {
        epochs: 4,
        checkpoint_every: 2,
        ..small_cfg()
    };
    let (head, log) = train_teacher(&data, &cfg, Some(dir.path())).unwrap();
    let last = dir.path().join("epoch_0004.weights");
    assert!(dir.path().join("epoch_0002.weights").exists());
    let loaded: MlpParams<f64> = load_weights(&last).unwrap();
    assert_eq!(loaded, head.cast::<f32>().cast::<f64>());
    let hash = std::fs::read_to_string(dir.path().join("epoch_0004.weights.hash")).unwrap();
    assert_eq!(hash.trim(), log.config_hash);
    assert!(log.to_tsv().lines().count() == 2 + 4);
}
