use super::synthetic::smoke_molecules;
use super::*;
use crate::chem_io::{Label, Structure};
use crate::model::Head;

fn tiny(head: Head) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        n_layers: 2,
        head,
        n_radial_global: 6,
        n_radial_local: 6,
        n_spherical: 3,
        n_radial_angular: 3,
        ..Default::default()
    }
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig {
        initial_lr: 1e-3,
        warmup_epochs: 1.0,
        decay_ratio: 0.1,
        decay_period_epochs: 600.0,
        ..Default::default()
    };
    assert!((cfg.lr_at(0.25) - 0.25e-3).abs() < 1e-18);
    assert_eq!(cfg.lr_at(1.0), 1e-3);
    assert_eq!(cfg.lr_at(599.9), 1e-3);
    assert!((cfg.lr_at(600.0) - 1e-4).abs() < 1e-18);
    assert!((cfg.lr_at(1250.0) - 1e-5).abs() < 1e-18);
    let flat = TrainConfig { warmup_epochs: 0.0, ..cfg };
    assert_eq!(flat.lr_at(0.0), 1e-3);
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { decay_ratio: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { decay_ratio: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
}

#[test]
fn target_stats_round_trip() {
    let (model, _) = PamNet::new(tiny(Head::Scalar), 0).unwrap();
    let mols = smoke_molecules(8, 5, 5.0, 3).unwrap();
    let ex = make_examples(&model, &mols).unwrap();
    let stats = TargetStats::fit(&ex, Head::Scalar).unwrap();
    let z: Vec<f64> = ex.iter().map(|e| stats.standardize(&e.target)[0]).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    for e in &ex {
        let back = stats.restore(&stats.standardize(&e.target));
        assert!((back[0] - e.target[0]).abs() < 1e-12);
    }
}

#[test]
fn vector_stats_never_shift() {
    let (model, _) = PamNet::new(tiny(Head::Vector), 0).unwrap();
    let s = Structure::from_parts("a", &[6, 8], vec![[0.0; 3], [1.2, 0.0, 0.0]])
        .unwrap()
        .with_label(Label::Vector([3.0, 0.0, 4.0]));
    let ex = make_examples(&model, std::slice::from_ref(&s)).unwrap();
    let stats = TargetStats::fit(&ex, Head::Vector).unwrap();
    assert_eq!(stats.mean, vec![0.0; 3]);
    assert!((stats.std[0] - (25.0f64 / 3.0).sqrt()).abs() < 1e-12);
    let scalar_label = s.with_label(Label::Scalar(1.0));
    assert!(make_examples(&model, &[scalar_label]).is_err());
}

#[test]
fn missing_labels_are_reported() {
    let (model, _) = PamNet::new(tiny(Head::Scalar), 0).unwrap();
    let s = Structure::from_parts("nolabel", &[6], vec![[0.0; 3]]).unwrap();
    match make_examples(&model, &[s]) {
        Err(Error::Dataset(m)) => assert!(m.contains("nolabel")),
        other => panic!("{other:?}"),
    }
}

fn short_run(seed: u64) -> TrainOutcome {
    let (model, store) = PamNet::new(tiny(Head::Scalar), seed).unwrap();
    let mols = smoke_molecules(6, 4, 5.0, 9).unwrap();
    let ex = make_examples(&model, &mols).unwrap();
    let cfg = TrainConfig {
        batch_size: 3,
        initial_lr: 1e-2,
        warmup_epochs: 0.0,
        max_epochs: 15,
        ema_decay: 0.5,
        seed,
        ..Default::default()
    };
    train(&model, store, &ex, &ex, &cfg).unwrap()
}

#[test]
fn training_is_deterministic_and_learns() {
    let a = short_run(4);
    let b = short_run(4);
    assert_eq!(a.history, b.history);
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.store, b.store);
    assert_eq!(a.history.len(), 15);
    assert_eq!(a.step_losses.len(), 30);
    let first = a.history.first().unwrap().train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert!(a.best_valid_mae.is_finite());
}

#[test]
fn early_stopping_triggers() {
    let (model, store) = PamNet::new(tiny(Head::Scalar), 1).unwrap();
    let ex = make_examples(&model, &smoke_molecules(4, 4, 5.0, 2).unwrap()).unwrap();
    // a learning rate this small leaves the EMA validation MAE flat
    let cfg = TrainConfig {
        initial_lr: 1e-12,
        warmup_epochs: 0.0,
        max_epochs: 50,
        early_stop_patience: 3,
        ema_decay: 1.0,
        ..Default::default()
    };
    let out = train(&model, store, &ex, &ex, &cfg).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.history.len(), 5);
}

#[test]
fn ema_evaluation_leaves_live_parameters_alone() {
    let out = short_run(5);
    let (model, _) = PamNet::new(tiny(Head::Scalar), 5).unwrap();
    let before = crate::nn::checkpoint::to_bytes(&out.store);
    let ex = make_examples(&model, &smoke_molecules(3, 4, 5.0, 9).unwrap()).unwrap();
    evaluate(&model, &out.store.with_ema_values(), &ex, &out.stats).unwrap();
    assert_eq!(crate::nn::checkpoint::to_bytes(&out.store), before);
}

#[test]
fn nonfinite_targets_abort_with_location() {
    let (model, store) = PamNet::new(tiny(Head::Scalar), 0).unwrap();
    let mut ex = make_examples(&model, &smoke_molecules(3, 4, 5.0, 1).unwrap()).unwrap();
    let valid = ex.clone();
    ex[1].target[0] = f64::INFINITY;
    let cfg = TrainConfig { max_epochs: 2, ..Default::default() };
    match train(&model, store, &ex, &valid, &cfg) {
        Err(Error::NonFinite(m)) => assert!(m.contains("epoch 0"), "{m}"),
        other => panic!("{:?}", other.map(|o| o.history)),
    }
}

#[test]
fn evaluate_perfect_and_empty() {
    let (model, store) = PamNet::new(tiny(Head::Scalar), 0).unwrap();
    let mut ex = make_examples(&model, &smoke_molecules(3, 4, 5.0, 1).unwrap()).unwrap();
    let stats = TargetStats::identity(1);
    let pred = predict_examples(&model, &store, &ex, &stats).unwrap();
    for (e, p) in ex.iter_mut().zip(&pred) {
        e.target = p.clone();
    }
    let r = evaluate(&model, &store, &ex, &stats).unwrap();
    assert_eq!(r.overall.mae, 0.0);
    assert!(evaluate(&model, &store, &[], &stats).is_err());
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let (model, store) = PamNet::new(tiny(Head::VectorMagnitude), 3).unwrap();
    let sidecar = Sidecar {
        model: model.config().clone(),
        target_stats: Some(TargetStats::identity(1)),
    };
    save_model(&path, &sidecar, &store).unwrap();
    let (model2, store2, side2) = load_model(&path).unwrap();
    assert_eq!(store2, store);
    assert_eq!(side2, sidecar);
    let s = smoke_molecules(1, 5, 5.0, 0).unwrap().remove(0);
    assert_eq!(model.predict(&store, &s).unwrap(), model2.predict(&store2, &s).unwrap());

    let wrong = Sidecar { model: tiny(Head::Scalar), ..sidecar.clone() };
    let other = tiny(Head::Scalar);
    let wrong = Sidecar { model: ModelConfig { hidden_dim: 4, ..other }, ..wrong };
    std::fs::write(sidecar_path(&path), serde_json::to_string(&wrong).unwrap()).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn symmetry_check_passes_for_model_and_fails_for_coordinate_leak() {
    let (model, store) = PamNet::new(tiny(Head::Scalar), 7).unwrap();
    let mols = smoke_molecules(4, 6, 5.0, 11).unwrap();
    let predict = |s: &Structure| Ok(model.predict(&store, s)?.values);
    let r = check_symmetry(predict, &mols, 10, 1, SymmetryKind::Invariant, 1e-9).unwrap();
    assert!(r.passed, "{}", r.max_deviation);
    let again = check_symmetry(predict, &mols, 10, 1, SymmetryKind::Invariant, 1e-9).unwrap();
    assert_eq!(r, again);

    let leaky = |s: &Structure| {
        let y = model.predict(&store, s)?.values[0];
        Ok(vec![y + 1e-3 * s.positions[0][0]])
    };
    let bad = check_symmetry(leaky, &mols, 10, 1, SymmetryKind::Invariant, 1e-9).unwrap();
    assert!(!bad.passed);

    let (vmodel, vstore) = PamNet::new(tiny(Head::Vector), 8).unwrap();
    let vec_out = |s: &Structure| Ok(vmodel.predict(&vstore, s)?.vector.unwrap().to_vec());
    let r = check_symmetry(vec_out, &mols, 10, 2, SymmetryKind::Equivariant, 1e-9).unwrap();
    assert!(r.passed, "{}", r.max_deviation);
    let frozen = |s: &Structure| Ok(vec![s.positions[1][0] - s.positions[0][0], 0.0, 0.0]);
    assert!(!check_symmetry(frozen, &mols, 10, 2, SymmetryKind::Equivariant, 1e-9).unwrap().passed);
}

#[test]
fn permutation_check() {
    let (model, store) = PamNet::new(tiny(Head::Scalar), 7).unwrap();
    let mols = smoke_molecules(3, 6, 5.0, 12).unwrap();
    let predict = |s: &Structure| Ok(model.predict(&store, s)?.values);
    assert!(check_permutation(predict, &mols, 20, 0).unwrap() < 1e-10);
    let first_atom = |s: &Structure| Ok(vec![s.atoms[0].atomic_number as f64]);
    let many = smoke_molecules(6, 6, 5.0, 13).unwrap();
    assert!(check_permutation(first_atom, &many, 20, 0).unwrap() > 0.0);
}

#[test]
fn permute_atoms_relabels_bonds() {
    let s = Structure::from_parts("b", &[6, 8, 1], vec![[0.0; 3], [1.2, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        .unwrap()
        .with_bonds(vec![(0, 1), (0, 2)])
        .unwrap();
    let p = permute_atoms(&s, &[2, 0, 1]).unwrap();
    assert_eq!(p.atomic_numbers(), vec![1, 6, 8]);
    assert_eq!(p.bonds, Some(vec![(1, 2), (0, 1)]));
    assert!(permute_atoms(&s, &[0, 0, 1]).is_err());
}

#[test]
fn attention_report_symmetric_fixture() {
    let (model, mut store) = PamNet::new(tiny(Head::Scalar), 3).unwrap();
    let (g, l) = model.layers();
    for (a, b) in g.iter().zip(l) {
        store.value_mut(a.attention.w).data_mut().fill(0.0);
        store.value_mut(b.attention.w).data_mut().fill(0.0);
    }
    let items: Vec<_> = smoke_molecules(3, 5, 5.0, 4)
        .unwrap()
        .iter()
        .map(|s| model.prepare(s).unwrap())
        .collect();
    let r = report_attention(&model, &store, &items).unwrap();
    assert_eq!((r.mean_global, r.mean_local), (0.5, 0.5));

    let (model, store) = PamNet::new(tiny(Head::Scalar), 4).unwrap();
    let r = report_attention(&model, &store, &items).unwrap();
    assert!((r.mean_global + r.mean_local - 1.0).abs() < 1e-9);
    assert!(r.max_normalization_error < 1e-9);
}

#[test]
fn micro_batch_size_only_changes_rounding() {
    let (model, store) = PamNet::new(tiny(Head::Scalar), 2).unwrap();
    let mols = smoke_molecules(6, 4, 5.0, 9).unwrap();
    let ex = make_examples(&model, &mols).unwrap();
    let run = |micro: usize| {
        let cfg = TrainConfig {
            batch_size: 6,
            micro_batch_size: micro,
            warmup_epochs: 0.0,
            max_epochs: 1,
            ..Default::default()
        };
        train(&model, store.clone(), &ex, &ex, &cfg).unwrap()
    };
    let (a, b) = (run(1), run(4));
    assert!((a.step_losses[0] - b.step_losses[0]).abs() < 1e-12);
    for id in a.store.ids() {
        let (x, y) = (a.store.value(id), b.store.value(id));
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() < 1e-9, "{}", a.store.name(id));
        }
    }
}

#[test]
fn unlabelled_predictions_match_labelled_path() {
    let mols = smoke_molecules(4, 5, 5.0, 6).unwrap();
    for (head, stats) in [
        (Head::Scalar, TargetStats { mean: vec![0.5], std: vec![2.0] }),
        (Head::VectorMagnitude, TargetStats { mean: vec![0.0], std: vec![3.0] }),
        (Head::Vector, TargetStats { mean: vec![0.0; 3], std: vec![3.0; 3] }),
    ] {
        let (model, store) = PamNet::new(tiny(head), 1).unwrap();
        let ex: Vec<Example> = mols
            .iter()
            .map(|s| Example { prepared: model.prepare(s).unwrap(), target: vec![0.0; stats.mean.len()] })
            .collect();
        let labelled = predict_examples(&model, &store, &ex, &stats).unwrap();
        let free = predict_structures(&model, &store, &mols, &stats).unwrap();
        for (p, want) in free.iter().zip(&labelled) {
            match head {
                Head::Vector => {
                    let v = p.vector.unwrap();
                    assert_eq!(v.to_vec(), *want);
                    assert!((p.values[0] - crate::geometry::norm(v)).abs() < 1e-15);
                }
                Head::VectorMagnitude => {
                    assert_eq!(p.values, *want);
                    let n = crate::geometry::norm(p.vector.unwrap());
                    assert!((n - p.values[0]).abs() < 1e-12 * n.max(1.0));
                }
                Head::Scalar => assert_eq!(p.values, *want),
            }
        }
    }
}
