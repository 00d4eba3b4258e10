mod common;

use limbrec::dataset::{make_folds, synth_generate};
use limbrec::features::{FeatureConfig, Modality};
use limbrec::models::ArchKind;
use limbrec::train::{train_fold, FoldOutcome};

use common::{perturb_subjects, quick_train, small_synth, toy_spec};

fn weights_bytes(model: &limbrec::models::Model) -> Vec<u8> {
    model.to_checkpoint().to_bytes()
}

#[test]
fn test_subjects_never_reach_training() {
    let ds = synth_generate(&small_synth(6, 2), Modality::Imu).unwrap();
    let plan = make_folds(ds.roster(), 3, 1, 5).unwrap();
    let features = FeatureConfig::default();
    let cfg = quick_train(3, 11);
    for kind in [ArchKind::Dnn, ArchKind::LstmAe] {
        let spec = toy_spec(kind);
        for fold in 0..plan.k {
            let (r0, m0) = train_fold(&ds, &features, &spec, &cfg, &plan, fold).unwrap();
            let mutated = perturb_subjects(&ds, &plan.folds[fold].test);
            let (r1, m1) = train_fold(&mutated, &features, &spec, &cfg, &plan, fold).unwrap();
            assert_eq!(weights_bytes(&m0.unwrap()), weights_bytes(&m1.unwrap()), "{kind} fold {fold}");
            match (&r0.outcome, &r1.outcome) {
                (FoldOutcome::Completed { history: h0, .. }, FoldOutcome::Completed { history: h1, .. }) => {
                    assert_eq!(h0, h1)
                }
                other => panic!("fold failed: {other:?}"),
            }
        }
    }
}

#[test]
fn perturbing_a_training_subject_changes_weights() {
    let ds = synth_generate(&small_synth(6, 2), Modality::Imu).unwrap();
    let plan = make_folds(ds.roster(), 3, 1, 5).unwrap();
    let features = FeatureConfig::default();
    let cfg = quick_train(2, 11);
    let spec = toy_spec(ArchKind::Dnn);
    let (_, m0) = train_fold(&ds, &features, &spec, &cfg, &plan, 0).unwrap();
    let mutated = perturb_subjects(&ds, &plan.folds[0].train[..1]);
    let (_, m1) = train_fold(&mutated, &features, &spec, &cfg, &plan, 0).unwrap();
    assert_ne!(weights_bytes(&m0.unwrap()), weights_bytes(&m1.unwrap()));
}
