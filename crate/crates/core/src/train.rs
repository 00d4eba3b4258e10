//! Adam with decoupled weight decay, early stopping on validation loss, and
//! subject-wise cross-validation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Graph, NamedTensor, Tensor};
use crate::dataset::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::features::{apply_norm, extract, fit_norm, FeatureConfig, FeatureWindow, Modality};
use crate::metrics::{aggregate_cv, confusion, metrics, CvAggregate, MetricsReport};
use crate::models::{build, Mode, Model, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Decoupled: applied as `lr·weight_decay·θ`, outside the adaptive step.
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            adam: AdamConfig::default(),
            weight_decay: 1e-4,
            dropout: 0.2,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        let a = &self.adam;
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", a.beta1, a.beta2));
        }
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(a.eps > 0.0 && a.eps.is_finite()) {
            return bad("lr and eps must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be ≥ 1".into());
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad(format!("min_delta {}", self.min_delta));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[NamedTensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update at step `t ≥ 1`. Every gradient is checked for finiteness
/// before any parameter moves.
pub fn adam_step(
    params: &mut [NamedTensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    hyper: &AdamConfig,
    weight_decay: f64,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("adam step index starts at 1".into()));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} parameters, {} gradients, {} state buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "gradient {:?} for parameter {} {:?}",
                g.shape(),
                p.name,
                p.tensor.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for parameter {}", p.name)));
        }
    }
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((theta, &g), m), v) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            let step = hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
            let decay = hyper.lr * weight_decay * *theta;
            *theta -= step + decay;
        }
    }
    Ok(())
}

/// True when none of the last `patience` validation losses improved on the
/// running best by more than `min_delta`.
pub fn should_stop(val_losses: &[f64], patience: usize, min_delta: f64) -> bool {
    let mut best = f64::INFINITY;
    let mut wait = 0;
    for &loss in val_losses {
        if loss < best - min_delta {
            best = loss;
            wait = 0;
        } else {
            wait += 1;
        }
    }
    !val_losses.is_empty() && wait >= patience
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based; the earliest epoch with the minimum validation loss.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

/// Stacks window features into a `B × W × F` batch.
pub fn batch_tensor(windows: &[&FeatureWindow]) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let shape = first.features.shape().to_vec();
    let mut data = Vec::with_capacity(windows.len() * first.features.len());
    for w in windows {
        if w.features.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "window {:?} in a batch of {shape:?}",
                w.features.shape()
            )));
        }
        data.extend_from_slice(w.features.data());
    }
    Tensor::new(vec![windows.len(), shape[0], shape[1]], data)
}

fn labels_of(windows: &[&FeatureWindow]) -> Vec<usize> {
    windows.iter().map(|w| w.label.index).collect()
}

const EVAL_BATCH: usize = 64;

/// Mean training objective (eval mode) and classification metrics.
pub fn evaluate(model: &Model, windows: &[FeatureWindow]) -> Result<(f64, MetricsReport)> {
    if windows.is_empty() {
        return Err(Error::Contract("evaluate on zero windows".into()));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(windows.len());
    let refs: Vec<&FeatureWindow> = windows.iter().collect();
    for chunk in refs.chunks(EVAL_BATCH) {
        let mut g = Graph::new();
        let params: Vec<_> = model.params().iter().map(|p| g.constant(p.tensor.clone())).collect();
        let x = g.constant(batch_tensor(chunk)?);
        let out = model.forward(&mut g, &params, x, Mode::Eval)?;
        let labels = labels_of(chunk);
        let loss = model.loss(&mut g, &out, x, &labels)?;
        loss_sum += g.value(loss).item() * chunk.len() as f64;
        let n = model.spec().n_classes;
        predictions.extend(g.value(out.logits).data().chunks(n).map(argmax));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index).collect();
    let cm = confusion(&predictions, &labels, model.spec().n_classes)?;
    Ok((loss_sum / windows.len() as f64, metrics(&cm)?))
}

/// Mini-batch training state; one [`Trainer::epoch`] is one pass over the
/// training windows in a freshly shuffled order.
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    state: AdamState,
    rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(model: Model, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            state: AdamState::new(model.params()),
            model,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Returns the mean training loss over the epoch.
    pub fn epoch(&mut self, train: &[FeatureWindow]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Contract("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&FeatureWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let vars = self.model.bind(&mut g);
            let x = g.constant(batch_tensor(&batch)?);
            let mode = Mode::Train {
                dropout_seed: self.rng.next_u64(),
            };
            let out = self.model.forward(&mut g, &vars, x, mode)?;
            let loss = self.model.loss(&mut g, &out, x, &labels_of(&batch))?;
            loss_sum += g.value(loss).item() * batch.len() as f64;
            let grads = g.backward(loss)?;
            let grads: Vec<&Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            self.step += 1;
            adam_step(
                self.model.params_mut(),
                &grads,
                &mut self.state,
                &self.cfg.adam,
                self.cfg.weight_decay,
                self.step,
            )?;
        }
        Ok(loss_sum / train.len() as f64)
    }
}

fn subjects(windows: &[FeatureWindow]) -> BTreeSet<&str> {
    windows.iter().map(|w| w.subject_id.as_str()).collect()
}

/// Trains until early stopping or `max_epochs`, then restores the weights of
/// the best validation epoch.
pub fn train_one(
    model: Model,
    train: &[FeatureWindow],
    val: &[FeatureWindow],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(format!(
            "empty split: {} training and {} validation windows",
            train.len(),
            val.len()
        )));
    }
    let shared: Vec<&str> = subjects(train).intersection(&subjects(val)).copied().collect();
    if !shared.is_empty() {
        return Err(Error::Leakage(format!(
            "subjects in both training and validation: {shared:?}"
        )));
    }
    let mut trainer = Trainer::new(model, cfg)?;
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, Vec<NamedTensor>)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = trainer.epoch(train)?;
        let (val_loss, report) = evaluate(trainer.model(), val)?;
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} f1 {:.4}", report.macro_f1);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1: report.macro_f1,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, trainer.model().params().to_vec()));
        }
        let losses: Vec<f64> = epochs.iter().map(|e| e.val_loss).collect();
        if should_stop(&losses, cfg.patience, cfg.min_delta) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch ran");
    let mut model = trainer.into_model();
    model.params_mut().clone_from_slice(&weights);
    Ok((
        model,
        TrainHistory {
            epochs,
            best_epoch,
            stop_reason,
        },
    ))
}

/// Feature windows of every recording, in canonical
/// (subject, activity, trial, offset) order.
pub fn dataset_windows(dataset: &Dataset, features: &FeatureConfig) -> Result<Vec<FeatureWindow>> {
    let per_seq: Vec<Vec<FeatureWindow>> = dataset
        .sequences()
        .par_iter()
        .map(|s| extract(s, features))
        .collect::<Result<_>>()?;
    let mut windows: Vec<FeatureWindow> = per_seq.into_iter().flatten().collect();
    windows.sort_by(|a, b| {
        (&a.subject_id, a.label.index, a.trial, a.offset).cmp(&(&b.subject_id, b.label.index, b.trial, b.offset))
    });
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldOutcome {
    Completed {
        metrics: MetricsReport,
        history: TrainHistory,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub index: usize,
    pub seed: u64,
    pub test_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_windows: usize,
    #[serde(flatten)]
    pub outcome: FoldOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub features: FeatureConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub folds: usize,
    pub n_val: usize,
    pub fold_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub arch: String,
    pub modality: Modality,
    pub seed: u64,
    pub config: ConfigEcho,
    pub folds: Vec<FoldReport>,
    /// Absent when every fold failed.
    pub aggregate: Option<CvAggregate>,
}

impl CvReport {
    pub fn failed_folds(&self) -> usize {
        self.folds
            .iter()
            .filter(|f| matches!(f.outcome, FoldOutcome::Failed { .. }))
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct CrossvalOutput {
    pub report: CvReport,
    /// Trained weights per fold; `None` for failed folds.
    pub models: Vec<Option<Model>>,
}

/// The model spec actually trained: input shape from the feature windows,
/// dropout from the training config.
pub fn fold_spec(spec: &ModelSpec, features: &FeatureConfig, channels: usize, n_classes: usize, cfg: &TrainConfig) -> ModelSpec {
    ModelSpec {
        input_len: features.window_len(),
        input_channels: features.feature_channels(channels),
        n_classes,
        dropout: cfg.dropout,
        ..spec.clone()
    }
}

fn run_fold(
    windows: &[FeatureWindow],
    plan: &FoldPlan,
    index: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> (FoldReport, Option<Model>) {
    let fold = &plan.folds[index];
    let member = |list: &[String], w: &FeatureWindow| list.binary_search(&w.subject_id).is_ok();
    let pick = |list: &[String]| -> Vec<FeatureWindow> {
        let mut sorted = list.to_vec();
        sorted.sort();
        windows.iter().filter(|w| member(&sorted, w)).cloned().collect()
    };
    let (train, val, test) = (pick(&fold.train), pick(&fold.validation), pick(&fold.test));
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut report = FoldReport {
        index,
        seed,
        test_subjects: fold.test.clone(),
        validation_subjects: fold.validation.clone(),
        train_windows: train.len(),
        validation_windows: val.len(),
        test_windows: test.len(),
        outcome: FoldOutcome::Failed { error: String::new() },
    };
    let result = (|| -> Result<(MetricsReport, TrainHistory, Model)> {
        let stats = fit_norm(&train)?;
        let norm = |ws: &[FeatureWindow]| ws.iter().map(|w| apply_norm(w, &stats)).collect::<Result<Vec<_>>>();
        let (train, val, test) = (norm(&train)?, norm(&val)?, norm(&test)?);
        if test.is_empty() {
            return Err(Error::Contract("test split is empty".into()));
        }
        let fold_cfg = TrainConfig { seed, ..cfg.clone() };
        let model = build(spec, seed)?;
        let (model, history) = train_one(model, &train, &val, &fold_cfg)?;
        let (_, metrics) = evaluate(&model, &test)?;
        Ok((metrics, history, model))
    })();
    match result {
        Ok((metrics, history, model)) => {
            report.outcome = FoldOutcome::Completed { metrics, history };
            (report, Some(model))
        }
        Err(e) => {
            log::warn!("fold {index} failed: {e}");
            report.outcome = FoldOutcome::Failed { error: e.to_string() };
            (report, None)
        }
    }
}

/// One fold of `plan` trained and scored exactly as inside [`run_crossval`].
pub fn train_fold(
    dataset: &Dataset,
    features: &FeatureConfig,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    index: usize,
) -> Result<(FoldReport, Option<Model>)> {
    features.validate()?;
    cfg.validate()?;
    plan.validate()?;
    plan.check_roster(dataset.roster())?;
    if index >= plan.k {
        return Err(Error::Config(format!("fold {index} out of range for a {}-fold plan", plan.k)));
    }
    let spec = fold_spec(spec, features, dataset.channels(), dataset.n_classes(), cfg);
    spec.validate()?;
    let windows = dataset_windows(dataset, features)?;
    Ok(run_fold(&windows, plan, index, &spec, cfg))
}

/// Subject-wise cross-validation: per fold, normalisation statistics are fit
/// on the training windows only, the model is trained with seed
/// `cfg.seed + fold` and scored on the test subjects. Folds run on a pool of
/// `workers` threads; results do not depend on the worker count.
pub fn run_crossval(
    dataset: &Dataset,
    features: &FeatureConfig,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    workers: usize,
) -> Result<CrossvalOutput> {
    features.validate()?;
    cfg.validate()?;
    plan.validate()?;
    plan.check_roster(dataset.roster())?;
    let spec = fold_spec(spec, features, dataset.channels(), dataset.n_classes(), cfg);
    spec.validate()?;
    let windows = dataset_windows(dataset, features)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
    let results: Vec<(FoldReport, Option<Model>)> = pool.install(|| {
        (0..plan.k)
            .into_par_iter()
            .map(|i| run_fold(&windows, plan, i, &spec, cfg))
            .collect()
    });
    let (folds, models): (Vec<FoldReport>, Vec<Option<Model>>) = results.into_iter().unzip();
    let completed: Vec<MetricsReport> = folds
        .iter()
        .filter_map(|f| match &f.outcome {
            FoldOutcome::Completed { metrics, .. } => Some(metrics.clone()),
            FoldOutcome::Failed { .. } => None,
        })
        .collect();
    let aggregate = if completed.is_empty() {
        None
    } else {
        Some(aggregate_cv(&completed)?)
    };
    Ok(CrossvalOutput {
        report: CvReport {
            arch: spec.kind.as_str().to_string(),
            modality: dataset.modality(),
            seed: cfg.seed,
            config: ConfigEcho {
                features: features.clone(),
                model: spec,
                train: cfg.clone(),
                folds: plan.k,
                n_val: plan.n_val,
                fold_seed: plan.seed,
            },
            folds,
            aggregate,
        },
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_folds, synth_generate, ActivityLabel, SynthConfig};
    use crate::models::ArchKind;

    fn scalar_param(v: f64) -> Vec<NamedTensor> {
        vec![NamedTensor {
            name: "theta".into(),
            tensor: Tensor::scalar(v),
        }]
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let mut p = scalar_param(0.5);
        let mut s = AdamState::new(&p);
        let g = Tensor::scalar(2.0);
        let hyper = AdamConfig::default();
        adam_step(&mut p, &[&g], &mut s, &hyper, 0.0, 1).unwrap();
        // m̂ = g, v̂ = g², so Δθ = −lr·g/(|g| + ε)
        let want = 0.5 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((p[0].tensor.item() - want).abs() < 1e-15);
        assert!((p[0].tensor.item() - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar_param(0.25);
        let mut s = AdamState::new(&p);
        let g = Tensor::scalar(0.0);
        for t in 1..=5 {
            adam_step(&mut p, &[&g], &mut s, &AdamConfig::default(), 0.0, t).unwrap();
        }
        assert_eq!(p[0].tensor.item(), 0.25);
    }

    #[test]
    fn decoupled_decay_formula() {
        let hyper = AdamConfig::default();
        let mut p = scalar_param(0.8);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[&Tensor::scalar(0.0)], &mut s, &hyper, 0.1, 1).unwrap();
        assert_eq!(p[0].tensor.item(), 0.8 - (0.0 + 1e-3 * 0.1 * 0.8));

        let mut p = scalar_param(0.8);
        let mut q = scalar_param(0.8);
        let (mut s1, mut s2) = (AdamState::new(&p), AdamState::new(&q));
        let g = Tensor::scalar(-0.3);
        adam_step(&mut p, &[&g], &mut s1, &hyper, 0.0, 1).unwrap();
        let m_hat = 0.1 * -0.3 / (1.0 - 0.9);
        let v_hat = 0.001 * 0.09 / (1.0 - 0.999);
        let step = 1e-3 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert_eq!(p[0].tensor.item(), 0.8 - (step + 0.0));
        adam_step(&mut q, &[&g], &mut s2, &hyper, 0.0, 1).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = scalar_param(1.0);
        let mut s = AdamState::new(&p);
        let hyper = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        for t in 1..=500 {
            let g = Tensor::scalar(2.0 * p[0].tensor.item());
            adam_step(&mut p, &[&g], &mut s, &hyper, 0.0, t).unwrap();
        }
        assert!(p[0].tensor.item().abs() < 1e-2, "{}", p[0].tensor.item());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_param(1.0);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &[&Tensor::scalar(f64::NAN)], &mut s, &AdamConfig::default(), 0.0, 1).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("theta")));
        assert_eq!(p[0].tensor.item(), 1.0);
    }

    #[test]
    fn stopping_rule_examples() {
        let l = [1.0, 0.9, 0.95, 0.96, 0.97];
        assert!(!should_stop(&l[..3], 2, 1e-4));
        assert!(should_stop(&l[..4], 2, 1e-4));
        let decreasing: Vec<f64> = (0..50).map(|i| 1.0 - 0.01 * i as f64).collect();
        for n in 1..=50 {
            assert!(!should_stop(&decreasing[..n], 3, 1e-4));
        }
        // exactly min_delta is not an improvement
        assert!(should_stop(&[1.0, 0.5], 1, 0.5));
        assert!(!should_stop(&[1.0, 0.25], 1, 0.5));
        assert!(should_stop(&[2.0, 2.0], 1, 1e-4));
        assert!(!should_stop(&[2.0], 1, 1e-4));
    }

    fn toy_windows(n: usize, subject: &str, classes: usize, seed: u64) -> Vec<FeatureWindow> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % classes;
                FeatureWindow {
                    features: Tensor::from_fn(&[6, 2], |k| {
                        (label as f64 + 1.0) * (((k / 2) as f64) * 0.5).sin() + 0.3 * rng.random_range(-1.0..1.0)
                    }),
                    label: ActivityLabel::new(label, format!("A{label}")),
                    subject_id: subject.into(),
                    modality: Modality::Imu,
                    trial: 1,
                    offset: i,
                }
            })
            .collect()
    }

    fn toy_model(seed: u64) -> Model {
        build(&ModelSpec::toy(ArchKind::Dnn, 6, 2, 3), seed).unwrap()
    }

    #[test]
    fn train_one_is_deterministic_and_restores_best() {
        let train = toy_windows(30, "S01", 3, 1);
        let val = toy_windows(9, "S02", 3, 2);
        let cfg = TrainConfig {
            max_epochs: 12,
            patience: 3,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let (m1, h1) = train_one(toy_model(0), &train, &val, &cfg).unwrap();
        let (m2, h2) = train_one(toy_model(0), &train, &val, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        let best = h1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        let first_best = h1.epochs.iter().position(|e| e.val_loss == best).unwrap() + 1;
        assert_eq!(h1.best_epoch, first_best);
        let (restored, _) = evaluate(&m1, &val).unwrap();
        assert_eq!(restored, h1.epochs[h1.best_epoch - 1].val_loss);
    }

    #[test]
    fn constant_validation_stops_at_epoch_two() {
        let train = toy_windows(10, "S01", 3, 1);
        let val = toy_windows(6, "S02", 3, 2);
        let cfg = TrainConfig {
            patience: 1,
            adam: AdamConfig {
                lr: 1e-300,
                ..AdamConfig::default()
            },
            weight_decay: 0.0,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        let (_, h) = train_one(toy_model(0), &train, &val, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert_eq!(h.stop_reason, StopReason::EarlyStop);
        assert_eq!(h.best_epoch, 1);
    }

    #[test]
    fn split_errors() {
        let a = toy_windows(6, "S01", 3, 1);
        let b = toy_windows(6, "S01", 3, 2);
        let cfg = TrainConfig::default();
        assert!(matches!(train_one(toy_model(0), &a, &b, &cfg), Err(Error::Leakage(_))));
        assert!(matches!(train_one(toy_model(0), &a, &[], &cfg), Err(Error::Contract(_))));
        assert!(matches!(train_one(toy_model(0), &[], &a, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn small_step_decreases_loss() {
        for seed in 0..20 {
            let windows = toy_windows(8, "S01", 3, seed);
            let refs: Vec<&FeatureWindow> = windows.iter().collect();
            let model = toy_model(seed);
            let loss_of = |m: &Model| {
                let mut g = Graph::new();
                let v = m.bind(&mut g);
                let x = g.constant(batch_tensor(&refs).unwrap());
                let out = m.forward(&mut g, &v, x, Mode::Eval).unwrap();
                let l = m.loss(&mut g, &out, x, &labels_of(&refs)).unwrap();
                let grads = g.backward(l).unwrap();
                let grads: Vec<Tensor> = v.iter().map(|&v| grads.wrt(v).clone()).collect();
                (g.value(l).item(), grads)
            };
            let (before, grads) = loss_of(&model);
            let mut stepped = model.clone();
            let mut state = AdamState::new(stepped.params());
            let refs_g: Vec<&Tensor> = grads.iter().collect();
            let hyper = AdamConfig {
                lr: 1e-5,
                ..AdamConfig::default()
            };
            adam_step(stepped.params_mut(), &refs_g, &mut state, &hyper, 0.0, 1).unwrap();
            let (after, _) = loss_of(&stepped);
            assert!(after < before, "seed {seed}: {after} ≥ {before}");
        }
    }

    fn tiny_synth() -> (Dataset, FeatureConfig) {
        let synth = SynthConfig {
            n_subjects: 6,
            n_activities: 3,
            channels: 3,
            duration_seconds: 3.0,
            ..SynthConfig::default()
        };
        let features = FeatureConfig {
            window_seconds: 1.0,
            sample_rate_hz: 20.0,
            ..FeatureConfig::default()
        };
        (synth_generate(&synth, Modality::Imu).unwrap(), features)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 3,
            patience: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn crossval_cardinality_and_aggregate() {
        let (data, features) = tiny_synth();
        let plan = make_folds(data.roster(), 3, 1, 4).unwrap();
        let spec = ModelSpec::toy(ArchKind::Dnn, 1, 1, 1);
        let out = run_crossval(&data, &features, &spec, &tiny_cfg(), &plan, 1).unwrap();
        let r = &out.report;
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.failed_folds(), 0);
        let f1: Vec<f64> = r
            .folds
            .iter()
            .map(|f| match &f.outcome {
                FoldOutcome::Completed { metrics, .. } => metrics.macro_f1,
                FoldOutcome::Failed { .. } => unreachable!(),
            })
            .collect();
        let mean = f1.iter().sum::<f64>() / 3.0;
        assert!((r.aggregate.as_ref().unwrap().macro_f1.mean - mean).abs() < 1e-12);
        for (i, f) in r.folds.iter().enumerate() {
            assert_eq!(f.seed, i as u64);
        }
    }

    #[test]
    fn crossval_parallel_matches_serial() {
        let (data, features) = tiny_synth();
        let plan = make_folds(data.roster(), 3, 1, 4).unwrap();
        let spec = ModelSpec::toy(ArchKind::Lstm, 1, 1, 1);
        let a = run_crossval(&data, &features, &spec, &tiny_cfg(), &plan, 1).unwrap();
        let b = run_crossval(&data, &features, &spec, &tiny_cfg(), &plan, 3).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.models, b.models);
    }

    #[test]
    fn crossval_ignores_sequence_order() {
        let (data, features) = tiny_synth();
        let mut seqs = data.sequences().to_vec();
        seqs.reverse();
        let shuffled = Dataset::new(data.modality(), data.activities().to_vec(), data.channel_names().to_vec(), seqs).unwrap();
        let plan = make_folds(data.roster(), 3, 1, 4).unwrap();
        let spec = ModelSpec::toy(ArchKind::Dnn, 1, 1, 1);
        let a = run_crossval(&data, &features, &spec, &tiny_cfg(), &plan, 1).unwrap();
        let b = run_crossval(&shuffled, &features, &spec, &tiny_cfg(), &plan, 1).unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn crossval_rejects_foreign_plan() {
        let (data, features) = tiny_synth();
        let roster: Vec<String> = (1..=7).map(crate::dataset::subject_name).collect();
        let plan = make_folds(&roster, 3, 1, 4).unwrap();
        let spec = ModelSpec::toy(ArchKind::Dnn, 1, 1, 1);
        assert!(run_crossval(&data, &features, &spec, &tiny_cfg(), &plan, 1).is_err());
    }
}
