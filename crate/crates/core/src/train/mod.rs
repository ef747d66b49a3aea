//! Empirical risk minimization over the unrolled graph: Adam with a halving
//! schedule, seeded shuffling, deterministic gradient reduction, checkpoints.

mod adam;
mod checkpoint;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross_entropy_value, Tape};
use crate::cells::{CellConfig, Model};
use crate::equilibrium::bptt_norm_profile;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};
use crate::tasks::{SequenceDataset, TaskSpec};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, NamedArray, SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_halve_every: usize,
    pub seed: u64,
    pub model: CellConfig,
    pub task: TaskSpec,
    /// Per-sample gradients on the rayon pool, reduced in sample order.
    #[serde(default)]
    pub parallel: bool,
    /// Record wall-clock seconds per epoch (breaks byte-level reproducibility).
    #[serde(default)]
    pub timing: bool,
}

impl TrainConfig {
    pub fn new(model: CellConfig, task: TaskSpec) -> Self {
        Self {
            lr: 1e-2,
            batch_size: 128,
            epochs: 10,
            lr_halve_every: 10,
            seed: 0,
            model,
            task,
            parallel: false,
            timing: false,
        }
    }

    /// Checks ranges; messages name the offending config key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::invalid(format!("{key}: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr", "must be a positive finite number");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1");
        }
        if self.lr_halve_every == 0 {
            return bad("train.lr_halve_every", "must be at least 1");
        }
        let m = &self.model;
        if m.k_steps == 0 {
            return bad("model.k_steps", "must be at least 1");
        }
        if m.hidden_dim == 0 {
            return bad("model.hidden_dim", "must be at least 1");
        }
        if m.input_dim == 0 {
            return bad("data.input_dim", "must be at least 1");
        }
        if m.kind == crate::cells::CellKind::Ernn && (m.rank == 0 || m.rank > m.hidden_dim) {
            return bad("model.rank", "must be between 1 and model.hidden_dim");
        }
        if !(m.gamma > 0.0 && m.gamma.is_finite()) {
            return bad("model.gamma", "must be positive");
        }
        if !m.eta_init.is_finite() {
            return bad("model.eta_init", "must be finite");
        }
        if self.task.classes < 2 {
            return bad("data.classes", "must be at least 2");
        }
        if self.task.kind == crate::tasks::TaskKind::NoisePadded
            && self.task.informative_steps > self.task.seq_len
        {
            return bad("data.informative_steps", "must not exceed data.seq_len");
        }
        if !(self.task.noise_std >= 0.0 && self.task.noise_std.is_finite()) {
            return bad("data.noise_std", "must be finite and non-negative");
        }
        Ok(())
    }

    pub fn init_model(&self, rng: &mut Rng) -> Result<Model> {
        Model::init(&self.model, self.task.classes, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample loss seen during the epoch, before each batch update.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub seconds: Option<f64>,
    /// Mean of ‖∂h_T/∂h_n‖₂ over n on the first test sequence.
    pub bptt_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// −log softmax(logits)[label], with max subtraction.
pub fn cross_entropy(logits: &Vector, label: usize) -> Result<f64> {
    if label >= logits.dim() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.dim()
        )));
    }
    Ok(cross_entropy_value(logits.as_slice(), label))
}

/// lr · 0.5^⌊epoch / lr_halve_every⌋.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * 0.5f64.powi((epoch / config.lr_halve_every.max(1)) as i32)
}

fn check_data(model: &Model, data: &SequenceDataset) -> Result<()> {
    if data.input_dim != model.cell.input_dim() {
        return Err(Error::invalid(format!(
            "data has input dimension {}, model expects {}",
            data.input_dim,
            model.cell.input_dim()
        )));
    }
    if data.classes > model.classes() {
        return Err(Error::invalid(format!(
            "data has {} classes, readout has {}",
            data.classes,
            model.classes()
        )));
    }
    if data.seq_len == 0 {
        return Err(Error::invalid("sequences are empty"));
    }
    Ok(())
}

fn argmax(v: &Vector) -> usize {
    let mut best = 0;
    for (i, &x) in v.as_slice().iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and argmax accuracy; never mutates the model.
pub fn evaluate(model: &Model, data: &SequenceDataset) -> Result<Evaluation> {
    evaluate_with(model, data, false)
}

pub fn evaluate_with(model: &Model, data: &SequenceDataset, parallel: bool) -> Result<Evaluation> {
    check_data(model, data)?;
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let one = |i: usize| -> Result<(f64, bool)> {
        let z = model.logits(&data.sequences[i])?;
        Ok((
            cross_entropy(&z, data.labels[i])?,
            argmax(&z) == data.labels[i],
        ))
    };
    let per: Vec<(f64, bool)> = if parallel {
        (0..data.len())
            .into_par_iter()
            .map(one)
            .collect::<Result<_>>()?
    } else {
        (0..data.len()).map(one).collect::<Result<_>>()?
    };
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        accuracy: per.iter().filter(|p| p.1).count() as f64 / n,
    })
}

impl Checkpoint {
    pub fn evaluate(&self, data: &SequenceDataset) -> Result<Evaluation> {
        evaluate(&self.model()?, data)
    }
}

/// Loss and parameter gradients of one labelled sequence. Graphs are cached
/// per label because the label is baked into the loss node.
fn sample_gradient(
    model: &Model,
    tapes: &mut [Option<Tape>],
    seq: &[Vector],
    label: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = tapes[label].get_or_insert_with(|| model.graph(seq.len(), Some(label)).tape);
    let loss = tape.forward(&model.param_refs(), &model.graph_inputs(seq))?[0];
    let grads = tape.backward(&Vector::filled(1, 1.0))?;
    Ok((loss, grads.into_params()))
}

/// Summed loss and mean gradient over `batch`, reduced in batch order.
pub fn batch_gradient(
    model: &Model,
    data: &SequenceDataset,
    batch: &[usize],
    parallel: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let classes = model.classes();
    let per: Vec<(f64, Vec<Vec<f64>>)> = if parallel {
        batch
            .par_iter()
            .map_init(
                || vec![None; classes],
                |tapes, &i| sample_gradient(model, tapes, &data.sequences[i], data.labels[i]),
            )
            .collect::<Result<_>>()?
    } else {
        let mut tapes = vec![None; classes];
        batch
            .iter()
            .map(|&i| sample_gradient(model, &mut tapes, &data.sequences[i], data.labels[i]))
            .collect::<Result<_>>()?
    };
    let mut loss = 0.0;
    let mut sum: Vec<Vec<f64>> = model
        .param_refs()
        .iter()
        .map(|p| vec![0.0; p.data.len()])
        .collect();
    for (l, g) in &per {
        loss += l;
        for (s, gi) in sum.iter_mut().zip(g) {
            for (a, b) in s.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    let n = batch.len() as f64;
    sum.iter_mut().flatten().for_each(|v| *v /= n);
    Ok((loss, sum))
}

/// A run that stopped early, with the newest checkpoint that is known good.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct FitError {
    #[source]
    pub error: Error,
    pub last_good: Option<Box<Checkpoint>>,
}

impl From<Error> for FitError {
    fn from(error: Error) -> Self {
        Self {
            error,
            last_good: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

/// Trains from a fresh seeded initialization.
pub fn fit(
    config: &TrainConfig,
    train: &SequenceDataset,
    test: &SequenceDataset,
) -> Result<FitOutcome, FitError> {
    fit_with(config, train, test, |_| {})
}

pub fn fit_with(
    config: &TrainConfig,
    train: &SequenceDataset,
    test: &SequenceDataset,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitOutcome, FitError> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let model = config.init_model(&mut rng)?;
    let sizes: Vec<usize> = model.param_refs().iter().map(|p| p.data.len()).collect();
    let start = Checkpoint::capture(config, &model, &AdamState::new(&sizes), &rng, 0, &[]);
    run(start, model, train, test, on_epoch)
}

/// Continues a run from `ckpt` up to `ckpt.config.epochs`.
pub fn resume(
    ckpt: &Checkpoint,
    train: &SequenceDataset,
    test: &SequenceDataset,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitOutcome, FitError> {
    ckpt.config.validate()?;
    let model = ckpt.model()?;
    run(ckpt.clone(), model, train, test, on_epoch)
}

fn run(
    start: Checkpoint,
    mut model: Model,
    train: &SequenceDataset,
    test: &SequenceDataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitOutcome, FitError> {
    let config = start.config.clone();
    check_data(&model, train)?;
    check_data(&model, test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("train and test sets must be non-empty").into());
    }
    let mut adam = start.adam.clone();
    let mut rng = start.rng_state.clone();
    let mut history = start.metrics.clone();
    let mut last_good = start;

    for epoch in last_good.epoch..config.epochs {
        let fail = |error: Error, good: &Checkpoint| FitError {
            error,
            last_good: Some(Box::new(good.clone())),
        };
        let clock = Instant::now();
        let lr = lr_schedule(&config, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&model, train, batch, config.parallel)
                .map_err(|e| fail(e, &last_good))?;
            loss_sum += loss;
            adam_step(&mut adam, &mut model.params_mut(), &grads, lr)
                .map_err(|e| fail(e, &last_good))?;
        }
        let eval = evaluate_with(&model, test, config.parallel).map_err(|e| fail(e, &last_good))?;
        let bptt_norm = bptt_norm_profile(&model.cell, &test.sequences[0], model.k_steps)
            .ok()
            .filter(|p| !p.is_empty())
            .map(|p| p.iter().sum::<f64>() / p.len() as f64);
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_loss: eval.loss,
            test_acc: eval.accuracy,
            lr,
            seconds: config.timing.then(|| clock.elapsed().as_secs_f64()),
            bptt_norm,
        };
        on_epoch(&metrics);
        history.push(metrics);
        last_good = Checkpoint::capture(&config, &model, &adam, &rng, epoch + 1, &history);
    }
    Ok(FitOutcome {
        checkpoint: last_good,
        model,
        history,
    })
}

#[cfg(test)]
mod tests;
