#![allow(dead_code)]

use limbrec::autodiff::Tensor;
use limbrec::dataset::{Dataset, SynthConfig};
use limbrec::features::JointAngleSequence;
use limbrec::models::{ArchKind, ModelSpec};
use limbrec::train::TrainConfig;

pub fn small_synth(n_subjects: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_subjects,
        seed,
        ..SynthConfig::default()
    }
}

/// Toy widths; input shape and class count are filled in by the trainer.
pub fn toy_spec(kind: ArchKind) -> ModelSpec {
    ModelSpec::toy(kind, 1, 1, 1)
}

pub fn quick_train(max_epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs,
        seed,
        ..TrainConfig::default()
    }
}

/// Copy of `ds` where every recording of the listed subjects gets a large
/// deterministic distortion.
pub fn perturb_subjects(ds: &Dataset, subjects: &[String]) -> Dataset {
    let seqs = ds
        .sequences()
        .iter()
        .map(|s| {
            if !subjects.contains(&s.subject_id) {
                return s.clone();
            }
            let a = s.angles();
            let warped = Tensor::from_fn(a.shape(), |i| a.data()[i] * -3.0 + 40.0 * ((i % 17) as f64).sin());
            JointAngleSequence::new(
                s.subject_id.clone(),
                s.modality,
                s.activity.clone(),
                s.trial,
                s.sample_rate_hz,
                warped,
            )
            .unwrap()
        })
        .collect();
    Dataset::new(ds.modality(), ds.activities().to_vec(), ds.channel_names().to_vec(), seqs).unwrap()
}
