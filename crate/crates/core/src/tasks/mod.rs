//! Synthetic long-term-dependency tasks and a flattened-CSV sequence loader.

mod csv_io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

pub use csv_io::{load_csv_sequences, read_csv_sequences, save_csv_sequences, write_csv_sequences};

/// Standard deviation of the jitter added to informative steps.
pub const JITTER_STD: f64 = 0.1;
/// Magnitude of each coordinate of a class mean.
pub const CLASS_MEAN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NoisePadded,
    RandomWalk,
    Csv,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "noise_padded" => Some(TaskKind::NoisePadded),
            "random_walk" => Some(TaskKind::RandomWalk),
            "csv" => Some(TaskKind::Csv),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::NoisePadded => "noise_padded",
            TaskKind::RandomWalk => "random_walk",
            TaskKind::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seq_len: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub informative_steps: usize,
    /// Padding noise std; for random walks, the increment std.
    pub noise_std: f64,
    pub seed: u64,
    /// Start the informative segment at a uniformly random offset.
    #[serde(default)]
    pub random_offset: bool,
}

impl TaskSpec {
    pub fn noise_padded(
        seq_len: usize,
        input_dim: usize,
        classes: usize,
        informative_steps: usize,
        noise_std: f64,
    ) -> Self {
        Self {
            kind: TaskKind::NoisePadded,
            seq_len,
            input_dim,
            classes,
            informative_steps,
            noise_std,
            seed: 0,
            random_offset: false,
        }
    }

    pub fn random_walk(variance: f64) -> Self {
        Self {
            kind: TaskKind::RandomWalk,
            seq_len: 1000,
            input_dim: 1,
            classes: 2,
            informative_steps: 0,
            noise_std: variance.sqrt(),
            seed: 0,
            random_offset: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == TaskKind::NoisePadded && self.informative_steps > self.seq_len {
            return Err(Error::invalid(format!(
                "informative_steps {} exceeds seq_len {}",
                self.informative_steps, self.seq_len
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-input-dimension z-score statistics, pooled over time steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Zero-variance dimensions left unscaled.
    pub passthrough: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    /// N sequences of T steps, each a d-vector.
    pub sequences: Vec<Vec<Vector>>,
    pub labels: Vec<usize>,
    pub seq_len: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub normalization: Option<Normalization>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Vec<Vector>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if sequences.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} sequences but {} labels",
                sequences.len(),
                labels.len()
            )));
        }
        let seq_len = sequences.first().map_or(0, Vec::len);
        let input_dim = sequences
            .first()
            .and_then(|s| s.first())
            .map_or(0, Vector::dim);
        for (i, s) in sequences.iter().enumerate() {
            if s.len() != seq_len || s.iter().any(|x| x.dim() != input_dim) {
                return Err(Error::invalid(format!(
                    "sequence {i} has a different shape"
                )));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            sequences,
            labels,
            seq_len,
            input_dim,
            classes,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> SequenceDataset {
        SequenceDataset {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            seq_len: self.seq_len,
            input_dim: self.input_dim,
            classes: self.classes,
            normalization: self.normalization.clone(),
        }
    }
}

fn class_means(classes: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    if classes == 2 {
        let base: Vec<f64> = (0..dim)
            .map(|j| if j % 2 == 0 { CLASS_MEAN } else { -CLASS_MEAN })
            .collect();
        let neg = base.iter().map(|v| -v).collect();
        return vec![base, neg];
    }
    let distinct_possible = dim >= usize::BITS as usize || (1usize << dim) >= classes;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while means.len() < classes {
        let m: Vec<f64> = (0..dim)
            .map(|_| {
                if rng.below(2) == 0 {
                    CLASS_MEAN
                } else {
                    -CLASS_MEAN
                }
            })
            .collect();
        if !distinct_possible || !means.contains(&m) {
            means.push(m);
        }
    }
    means
}

/// Class-conditional informative segment (±0.5 per coordinate plus N(0, 0.1²)
/// jitter) followed, or surrounded, by N(0, noise_std²) padding.
pub fn gen_noise_padded(spec: &TaskSpec, n: usize, rng: &mut Rng) -> Result<SequenceDataset> {
    spec.validate()?;
    if spec.kind != TaskKind::NoisePadded {
        return Err(Error::invalid("gen_noise_padded needs a noise_padded spec"));
    }
    if spec.classes < 2 {
        return Err(Error::invalid("noise-padded task needs at least 2 classes"));
    }
    if spec.informative_steps == 0 {
        return Err(Error::invalid("informative_steps must be positive"));
    }
    if spec.input_dim == 0 {
        return Err(Error::invalid("input_dim must be positive"));
    }
    let means = class_means(spec.classes, spec.input_dim, rng);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);
    let (t_len, tau) = (spec.seq_len, spec.informative_steps);
    let mut sequences = Vec::with_capacity(n);
    for &y in &labels {
        let start = if spec.random_offset {
            rng.below(t_len - tau + 1)
        } else {
            0
        };
        let seq = (0..t_len)
            .map(|t| {
                let data = if (start..start + tau).contains(&t) {
                    means[y]
                        .iter()
                        .map(|m| m + rng.normal(JITTER_STD))
                        .collect()
                } else {
                    (0..spec.input_dim)
                        .map(|_| rng.normal(spec.noise_std))
                        .collect()
                };
                Vector::from_vec_unchecked(data)
            })
            .collect();
        sequences.push(seq);
    }
    let mut ds = SequenceDataset::new(sequences, labels, spec.classes)?;
    ds.seq_len = t_len;
    ds.input_dim = spec.input_dim;
    Ok(ds)
}

/// Scalar random walk x_k = x_{k−1} + N(0, noise_std²) from x_0 = 0;
/// returns x_1..x_steps.
pub fn gen_random_walk(spec: &TaskSpec, steps: usize, rng: &mut Rng) -> Result<Vec<Vector>> {
    spec.validate()?;
    if spec.kind != TaskKind::RandomWalk || spec.input_dim != 1 {
        return Err(Error::invalid(
            "gen_random_walk needs a random_walk spec with input_dim 1",
        ));
    }
    let mut x = 0.0;
    Ok((0..steps)
        .map(|_| {
            x += rng.normal(spec.noise_std);
            Vector::from_vec_unchecked(vec![x])
        })
        .collect())
}

/// Seeded shuffle split with z-score statistics from the train side only.
pub fn split_normalize(
    data: &SequenceDataset,
    train_fraction: f64,
    rng: &mut Rng,
) -> Result<(SequenceDataset, SequenceDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "split of {n} samples at {train_fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut train = data.subset(&idx[..n_train]);
    let mut test = data.subset(&idx[n_train..]);
    let stats = fit_normalization(&train);
    apply_normalization(&mut train, &stats);
    apply_normalization(&mut test, &stats);
    Ok((train, test))
}

/// Pooled per-dimension mean and population std.
pub fn fit_normalization(data: &SequenceDataset) -> Normalization {
    let d = data.input_dim;
    let count = (data.len() * data.seq_len) as f64;
    let mut mean = vec![0.0; d];
    for x in data.sequences.iter().flatten() {
        for (m, v) in mean.iter_mut().zip(x.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; d];
    for x in data.sequences.iter().flatten() {
        for ((s, v), m) in var.iter_mut().zip(x.as_slice()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / count).sqrt()).collect();
    let passthrough = std
        .iter()
        .zip(&mean)
        .enumerate()
        .filter(|(_, (s, m))| **s <= 1e-12 * (1.0 + m.abs()))
        .map(|(j, _)| j)
        .collect();
    Normalization {
        mean,
        std,
        passthrough,
    }
}

pub fn apply_normalization(data: &mut SequenceDataset, stats: &Normalization) {
    for x in data.sequences.iter_mut().flatten() {
        for (j, v) in x.as_mut_slice().iter_mut().enumerate() {
            if !stats.passthrough.contains(&j) {
                *v = (*v - stats.mean[j]) / stats.std[j];
            }
        }
    }
    data.normalization = Some(stats.clone());
}
