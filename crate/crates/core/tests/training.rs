use tensorpot::autodiff::Fault;
use tensorpot::data::{generate_cluster_dataset, AtomicSystem, ClusterConfig};
use tensorpot::training::{load_model, save_model, Checkpoint, RunConfig, Trainer};
use tensorpot::Error;

fn dataset(frames: usize) -> Vec<AtomicSystem> {
    let mut c = ClusterConfig::charge_flip();
    c.frames = frames;
    generate_cluster_dataset(&c).unwrap()
}

fn small_config(epochs: usize) -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("embedding_dimension", "8"),
        ("num_rbf", "8"),
        ("num_layers", "1"),
        ("batch_size", "4"),
        ("lr", "5e-3"),
        ("attribute_mode", "total_charge"),
    ] {
        c.set(k, v).unwrap();
    }
    c.train.max_epochs = epochs;
    c
}

#[test]
fn training_reduces_validation_loss() {
    let mut t = Trainer::new(small_config(8), dataset(40)).unwrap();
    t.train(|_, _| Ok::<_, Error>(())).unwrap();
    let h = &t.checkpoint().history;
    assert_eq!(h.len(), 8);
    let best = h.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < h[0].val_loss, "{h:?}");
    assert_eq!(t.checkpoint().state.best_val_loss, Some(best));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = dataset(24);
    let mut straight = Trainer::new(small_config(4), data.clone()).unwrap();
    straight.train(|_, _| Ok::<_, Error>(())).unwrap();

    let mut first = Trainer::new(small_config(2), data.clone()).unwrap();
    first.train(|_, _| Ok::<_, Error>(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    first.checkpoint().save(&path).unwrap();
    let mut second = Trainer::resume(Checkpoint::load(&path).unwrap(), data).unwrap();
    second.set_max_epochs(4);
    second.train(|_, _| Ok::<_, Error>(())).unwrap();

    let (a, b) = (straight.checkpoint(), second.checkpoint());
    assert_eq!(a.model, b.model);
    assert_eq!(a.best, b.best);
    assert_eq!(a.state, b.state);
    assert_eq!(a.history, b.history);
}

#[test]
fn zero_epochs_gives_an_initial_checkpoint() {
    let mut t = Trainer::new(small_config(0), dataset(12)).unwrap();
    t.train(|_, _| -> Result<(), Error> { panic!("no epochs expected") }).unwrap();
    let ck = t.checkpoint();
    assert!(ck.history.is_empty());
    assert_eq!(ck.model, ck.best);
    assert_eq!(ck.model.config.elements, vec![47]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&ck.model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), ck.model);
    ck.save(&path).unwrap();
    assert_eq!(load_model(&path).unwrap(), ck.best);
}

#[test]
fn non_finite_loss_reports_the_batch() {
    let mut t = Trainer::new(small_config(1), dataset(12)).unwrap();
    t.inject_fault(Some(Fault {
        op: "exp",
        factor: f64::NAN,
    }));
    match t.run_epoch() {
        Err(Error::NonFiniteLoss { epoch, step, batch, .. }) => {
            assert_eq!((epoch, step), (0, 0));
            assert_eq!(batch.len(), 4);
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn rejects_corrupted_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"format_version": 99}"#).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, "not json").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn missing_force_labels_are_reported() {
    let mut data = dataset(12);
    data[3].forces = None;
    let mut c = small_config(1);
    c.train.train_size = tensorpot::training::SizeSpec::Fraction(1.0);
    c.train.val_size = tensorpot::training::SizeSpec::Fraction(0.0);
    let mut t = Trainer::new(c, data).unwrap();
    assert!(matches!(t.run_epoch(), Err(Error::MissingLabels(_))));
}

#[test]
fn zero_attribute_training_matches_baseline_bitwise() {
    let mut c = ClusterConfig::spin_pair();
    c.frames = 12;
    c.states.truncate(1);
    let data = generate_cluster_dataset(&c).unwrap();
    let run = |mode: &str| {
        let mut cfg = small_config(2);
        cfg.set("attribute_mode", mode).unwrap();
        let mut t = Trainer::new(cfg, data.clone()).unwrap();
        t.train(|_, _| Ok::<_, Error>(())).unwrap();
        t.into_checkpoint()
    };
    let base = run("none");
    for mode in ["total_charge", "spin"] {
        let ext = run(mode);
        assert_eq!(ext.history, base.history, "{mode}");
        for (name, t) in &base.model.params.tensors {
            assert_eq!(t, ext.model.params.get(name), "{mode} {name}");
        }
    }
}
