use super::*;
use crate::autodiff::{gradcheck, Activation};
use crate::cells::CellKind;
use crate::tasks::gen_noise_padded;

fn small_config(kind: CellKind) -> TrainConfig {
    let mut m = CellConfig::new(kind, 6, 2);
    m.k_steps = 2;
    m.rank = 2;
    m.activation = Activation::Tanh;
    let task = TaskSpec::noise_padded(8, 2, 2, 2, 0.5);
    let mut c = TrainConfig::new(m, task);
    c.batch_size = 8;
    c.epochs = 3;
    c.seed = 17;
    c
}

fn data(cfg: &TrainConfig, n: usize, seed: u64) -> SequenceDataset {
    gen_noise_padded(&cfg.task, n, &mut Rng::new(seed)).unwrap()
}

#[test]
fn cross_entropy_examples() {
    let u = Vector::filled(4, 0.3);
    assert!((cross_entropy(&u, 2).unwrap() - 4f64.ln()).abs() < 1e-15);
    let l = cross_entropy(&Vector::new(vec![10.0, -10.0]).unwrap(), 0).unwrap();
    assert!((l - 2.061_153_6e-9).abs() < 1e-15, "{l}");
    let z = Vector::new(vec![0.3, -1.2, 2.5]).unwrap();
    let shifted = z.map(|x| x + 123.0);
    assert!((cross_entropy(&z, 1).unwrap() - cross_entropy(&shifted, 1).unwrap()).abs() <= 1e-12);
    assert!(cross_entropy(&z, 3).is_err());
}

#[test]
fn lr_schedule_examples() {
    let mut c = small_config(CellKind::Ernn);
    assert_eq!(lr_schedule(&c, 0), c.lr);
    c.lr = 1e-2;
    c.lr_halve_every = 10;
    assert!((lr_schedule(&c, 25) - 2.5e-3).abs() < 1e-18);
    c.lr_halve_every = 100;
    assert_eq!(lr_schedule(&c, 99), c.lr);
}

#[test]
fn evaluate_is_pure_and_repeatable() {
    let c = small_config(CellKind::Ernn);
    let model = c.init_model(&mut Rng::new(1)).unwrap();
    let before = model.clone();
    let d = data(&c, 30, 2);
    let a = evaluate(&model, &d).unwrap();
    let b = evaluate(&model, &d).unwrap();
    assert_eq!(a, b);
    assert_eq!(model, before);
    assert_eq!(evaluate_with(&model, &d, true).unwrap(), a);
}

#[test]
fn random_readout_near_chance() {
    let mut c = small_config(CellKind::Vanilla);
    c.task = TaskSpec::noise_padded(5, 2, 2, 5, 1.0);
    let model = c.init_model(&mut Rng::new(3)).unwrap();
    // Labels independent of the inputs.
    let mut d = data(&c, 1000, 4);
    let mut rng = Rng::new(99);
    rng.shuffle(&mut d.labels);
    let acc = evaluate(&model, &d).unwrap().accuracy;
    assert!((0.44..=0.56).contains(&acc), "{acc}");
}

#[test]
fn one_sample_epoch_decreases_loss() {
    for kind in CellKind::ALL {
        let mut c = small_config(kind);
        c.epochs = 1;
        c.batch_size = 1;
        let d = data(&c, 1, 5);
        let start = c.init_model(&mut Rng::new(c.seed)).unwrap();
        let before = evaluate(&start, &d).unwrap().loss;
        let out = fit(&c, &d, &d).unwrap();
        assert!(out.history[0].test_loss < before, "{kind:?}");
    }
}

#[test]
fn memorizes_single_sample() {
    let mut c = small_config(CellKind::Ernn);
    c.epochs = 60;
    c.batch_size = 1;
    c.lr = 5e-2;
    let d = data(&c, 1, 6);
    let out = fit(&c, &d, &d).unwrap();
    assert_eq!(out.checkpoint.evaluate(&d).unwrap().accuracy, 1.0);
}

#[test]
fn seeded_runs_identical_and_parallel_matches() {
    let c = small_config(CellKind::Ernn);
    let tr = data(&c, 40, 7);
    let te = data(&c, 10, 8);
    let a = fit(&c, &tr, &te).unwrap();
    let b = fit(&c, &tr, &te).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(
        a.checkpoint.to_json().unwrap(),
        b.checkpoint.to_json().unwrap()
    );
    let mut p = c.clone();
    p.parallel = true;
    let par = fit(&p, &tr, &te).unwrap();
    assert_eq!(par.history, a.history);
    assert_eq!(par.checkpoint.params, a.checkpoint.params);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let mut c = small_config(CellKind::FastRnn);
    c.epochs = 4;
    let tr = data(&c, 24, 9);
    let te = data(&c, 6, 10);
    let full = fit(&c, &tr, &te).unwrap();

    let mut half = c.clone();
    half.epochs = 2;
    let first = fit(&half, &tr, &te).unwrap();
    let mut ckpt = Checkpoint::from_json(&first.checkpoint.to_json().unwrap()).unwrap();
    ckpt.config.epochs = 4;
    let rest = resume(&ckpt, &tr, &te, |_| {}).unwrap();
    assert_eq!(rest.history, full.history);
    assert_eq!(rest.checkpoint.params, full.checkpoint.params);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let c = small_config(CellKind::Antisymmetric);
    let tr = data(&c, 16, 11);
    let out = fit(&c, &tr, &tr).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.json");
    let p2 = dir.path().join("b.json");
    out.checkpoint.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    assert_eq!(loaded, out.checkpoint);
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    let text = std::fs::read_to_string(&p1).unwrap();
    std::fs::write(&p2, &text[..text.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::load(&p2), Err(Error::Checkpoint(_))));

    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    let err = Checkpoint::from_json(&bumped).unwrap_err();
    assert!(err.to_string().contains("schema version 99"));

    let mut wrong = out.checkpoint.clone();
    wrong.params[0].shape = [1, 1];
    assert!(Checkpoint::from_json(&wrong.to_json().unwrap()).is_err());
}

#[test]
fn small_step_reduces_batch_loss() {
    for kind in CellKind::ALL {
        let c = small_config(kind);
        let d = data(&c, 12, 12);
        let mut model = c.init_model(&mut Rng::new(1)).unwrap();
        let batch: Vec<usize> = (0..12).collect();
        let (before, grads) = batch_gradient(&model, &d, &batch, false).unwrap();
        let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
        let mut adam = AdamState::new(&sizes);
        adam_step(&mut adam, &mut model.params_mut(), &grads, 1e-4).unwrap();
        let (after, _) = batch_gradient(&model, &d, &batch, false).unwrap();
        assert!(after < before, "{kind:?}");
    }
}

#[test]
fn full_loss_passes_gradcheck_for_every_kind() {
    for kind in CellKind::ALL {
        let mut m = CellConfig::new(kind, 4, 3);
        m.k_steps = 2;
        m.rank = 2;
        m.activation = Activation::Tanh;
        m.eta_init = 0.3;
        let model = Model::init(&m, 3, &mut Rng::new(21)).unwrap();
        let seq: Vec<Vector> = (0..3)
            .map(|_| crate::numerics::gaussian(&mut Rng::new(5), 3, 1.0))
            .collect();
        let mut g = model.graph(3, Some(1));
        g.tape
            .forward(&model.param_refs(), &model.graph_inputs(&seq))
            .unwrap();
        let r = gradcheck(&mut g.tape, &model.param_refs(), 1e-5).unwrap();
        assert!(r.max_relative_error <= 1e-6, "{kind:?}: {r:?}");
    }
}

#[test]
fn overflow_keeps_last_good_checkpoint() {
    let mut c = small_config(CellKind::Vanilla);
    c.model.activation = Activation::Relu;
    c.lr = 1e300;
    c.epochs = 5;
    let d = data(&c, 8, 13);
    match fit(&c, &d, &d) {
        Err(e) => {
            assert!(e.error.is_numeric(), "{}", e.error);
            let good = e.last_good.expect("checkpoint");
            assert!(good.model().is_ok());
        }
        Ok(_) => panic!("expected overflow"),
    }
}

#[test]
fn invalid_config_names_field() {
    let mut c = small_config(CellKind::Ernn);
    c.lr = -1.0;
    assert!(c.validate().unwrap_err().to_string().contains("train.lr"));
}
