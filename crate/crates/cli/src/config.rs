//! Flat dotted-key run configuration.
//!
//! A config file is a single JSON object whose keys are paths such as
//! `"model.kind"` or `"train.lr"`. Every key is optional; unknown keys are
//! rejected so that typos surface instead of silently falling back to
//! defaults.

use std::path::{Path, PathBuf};

use ernn::autodiff::Activation;
use ernn::cells::{CellConfig, CellKind, Projection};
use ernn::tasks::{TaskKind, TaskSpec};
use ernn::train::TrainConfig;
use serde_json::{Map, Value};

/// A configuration problem tied to one key.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_halve_every: usize,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub task: TaskSpec,
    pub csv_path: Option<PathBuf>,
    pub csv_header: bool,
    pub n_train: usize,
    pub n_test: usize,
    /// Share of a CSV dataset used for training.
    pub train_fraction: f64,
}

/// Which configuration the fixed-point command analyses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Random dense-U cell built from the model and analysis keys.
    Random,
    /// The closed-form scalar linear cell driven by x = 1.
    ScalarLinear,
}

/// Where the fixed-point iteration starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Start {
    Zero,
    Equilibrium,
}

/// Settings for the diagnostic commands.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    /// Euler step size of the analysed ERNN (and of FastRNN in phase space).
    pub eta: f64,
    /// Spectral norm of the random recurrence matrix.
    pub u_norm: f64,
    /// Evaluation points for the stability spectrum.
    pub samples: usize,
    /// Sequences averaged by grad-flow.
    pub batch: usize,
    /// Length of the phase-space input walk.
    pub steps: usize,
    pub walk_variance: f64,
    /// Fixed-point iterations recorded by the convergence trace.
    pub iterations: usize,
    pub preset: Preset,
    pub start: Start,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: CellConfig,
    pub train: TrainSettings,
    pub data: DataConfig,
    pub analysis: AnalysisConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: CellConfig::new(CellKind::Ernn, 32, 4),
            train: TrainSettings {
                lr: 1e-2,
                batch_size: 128,
                epochs: 10,
                lr_halve_every: 10,
                parallel: false,
            },
            data: DataConfig {
                task: TaskSpec::noise_padded(200, 4, 2, 10, 1.0),
                csv_path: None,
                csv_header: false,
                n_train: 2000,
                n_test: 1000,
                train_fraction: 0.8,
            },
            analysis: AnalysisConfig {
                eta: 1.0,
                u_norm: 0.5,
                samples: 100,
                batch: 4,
                steps: 1000,
                walk_variance: 10.0,
                iterations: 50,
                preset: Preset::Random,
                start: Start::Zero,
            },
            seed: 0,
        }
    }
}

/// Every key the parser accepts.
pub const KEYS: &[&str] = &[
    "model.kind",
    "model.hidden_dim",
    "model.rank",
    "model.k_steps",
    "model.activation",
    "model.gamma",
    "model.projection",
    "model.eta_init",
    "model.eta_per_timestep",
    "train.lr",
    "train.batch_size",
    "train.epochs",
    "train.lr_halve_every",
    "train.parallel",
    "data.task",
    "data.seq_len",
    "data.input_dim",
    "data.classes",
    "data.informative_steps",
    "data.noise_std",
    "data.csv_path",
    "data.csv_header",
    "data.n_train",
    "data.n_test",
    "data.train_fraction",
    "data.random_offset",
    "analysis.eta",
    "analysis.u_norm",
    "analysis.samples",
    "analysis.batch",
    "analysis.steps",
    "analysis.walk_variance",
    "analysis.iterations",
    "analysis.preset",
    "analysis.start",
    "seed",
];

fn usize_of(key: &str, v: &Value) -> Result<usize, ConfigError> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| ConfigError::new(key, format!("expected a non-negative integer, got {v}")))
}

fn f64_of(key: &str, v: &Value) -> Result<f64, ConfigError> {
    v.as_f64()
        .ok_or_else(|| ConfigError::new(key, format!("expected a number, got {v}")))
}

fn bool_of(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool()
        .ok_or_else(|| ConfigError::new(key, format!("expected true or false, got {v}")))
}

fn str_of<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str()
        .ok_or_else(|| ConfigError::new(key, format!("expected a string, got {v}")))
}

fn choice<T>(
    key: &str,
    v: &Value,
    parse: impl Fn(&str) -> Option<T>,
    allowed: &str,
) -> Result<T, ConfigError> {
    let s = str_of(key, v)?;
    parse(s).ok_or_else(|| {
        ConfigError::new(
            key,
            format!("unknown value {s:?} (expected one of {allowed})"),
        )
    })
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("<file>", format!("not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(ConfigError::new(
                "<file>",
                "expected a JSON object of dotted keys",
            ));
        };
        Self::from_map(&map)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_map(map: &Map<String, Value>) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let mut rank_given = false;
        let mut per_timestep = false;
        for (key, v) in map {
            let k = key.as_str();
            match k {
                "model.kind" => {
                    c.model.kind = choice(
                        k,
                        v,
                        CellKind::parse,
                        "vanilla, fastrnn, antisymmetric, ernn",
                    )?
                }
                "model.hidden_dim" => c.model.hidden_dim = usize_of(k, v)?,
                "model.rank" => {
                    c.model.rank = usize_of(k, v)?;
                    rank_given = true;
                }
                "model.k_steps" => c.model.k_steps = usize_of(k, v)?,
                "model.activation" => {
                    c.model.activation =
                        choice(k, v, Activation::parse, "tanh, sigmoid, relu, identity")?
                }
                "model.gamma" => c.model.gamma = f64_of(k, v)?,
                "model.projection" => {
                    c.model.projection = choice(k, v, Projection::parse, "tied, identity")?
                }
                "model.eta_init" => c.model.eta_init = f64_of(k, v)?,
                "model.eta_per_timestep" => per_timestep = bool_of(k, v)?,
                "train.lr" => c.train.lr = f64_of(k, v)?,
                "train.batch_size" => c.train.batch_size = usize_of(k, v)?,
                "train.epochs" => c.train.epochs = usize_of(k, v)?,
                "train.lr_halve_every" => c.train.lr_halve_every = usize_of(k, v)?,
                "train.parallel" => c.train.parallel = bool_of(k, v)?,
                "data.task" => {
                    c.data.task.kind =
                        choice(k, v, TaskKind::parse, "noise_padded, random_walk, csv")?
                }
                "data.seq_len" => c.data.task.seq_len = usize_of(k, v)?,
                "data.input_dim" => c.data.task.input_dim = usize_of(k, v)?,
                "data.classes" => c.data.task.classes = usize_of(k, v)?,
                "data.informative_steps" => c.data.task.informative_steps = usize_of(k, v)?,
                "data.noise_std" => c.data.task.noise_std = f64_of(k, v)?,
                "data.csv_path" => c.data.csv_path = Some(PathBuf::from(str_of(k, v)?)),
                "data.csv_header" => c.data.csv_header = bool_of(k, v)?,
                "data.n_train" => c.data.n_train = usize_of(k, v)?,
                "data.n_test" => c.data.n_test = usize_of(k, v)?,
                "data.train_fraction" => c.data.train_fraction = f64_of(k, v)?,
                "data.random_offset" => c.data.task.random_offset = bool_of(k, v)?,
                "analysis.eta" => c.analysis.eta = f64_of(k, v)?,
                "analysis.u_norm" => c.analysis.u_norm = f64_of(k, v)?,
                "analysis.samples" => c.analysis.samples = usize_of(k, v)?,
                "analysis.batch" => c.analysis.batch = usize_of(k, v)?,
                "analysis.steps" => c.analysis.steps = usize_of(k, v)?,
                "analysis.walk_variance" => c.analysis.walk_variance = f64_of(k, v)?,
                "analysis.iterations" => c.analysis.iterations = usize_of(k, v)?,
                "analysis.preset" => {
                    c.analysis.preset = choice(
                        k,
                        v,
                        |s| match s {
                            "random" => Some(Preset::Random),
                            "scalar_linear" => Some(Preset::ScalarLinear),
                            _ => None,
                        },
                        "random, scalar_linear",
                    )?
                }
                "analysis.start" => {
                    c.analysis.start = choice(
                        k,
                        v,
                        |s| match s {
                            "zero" => Some(Start::Zero),
                            "equilibrium" => Some(Start::Equilibrium),
                            _ => None,
                        },
                        "zero, equilibrium",
                    )?
                }
                "seed" => {
                    c.seed = v.as_u64().ok_or_else(|| {
                        ConfigError::new(k, format!("expected an unsigned 64-bit integer, got {v}"))
                    })?
                }
                _ => {
                    let hint = if v.is_object() {
                        " (nested objects are not supported; use dotted keys)"
                    } else {
                        ""
                    };
                    return Err(ConfigError::new(k, format!("unknown key{hint}")));
                }
            }
        }
        c.model.input_dim = c.data.task.input_dim;
        if !rank_given {
            c.model.rank = c.model.hidden_dim.div_ceil(4).max(1);
        }
        c.model.eta_per_timestep = per_timestep.then_some(c.data.task.seq_len);
        c.validate()?;
        Ok(c)
    }

    /// Overrides the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.task.seed = seed;
    }

    /// The training configuration these settings describe.
    pub fn train_config(&self, timing: bool) -> TrainConfig {
        let mut task = self.data.task.clone();
        task.seed = self.seed;
        let mut t = TrainConfig::new(self.model.clone(), task);
        t.lr = self.train.lr;
        t.batch_size = self.train.batch_size;
        t.epochs = self.train.epochs;
        t.lr_halve_every = self.train.lr_halve_every;
        t.seed = self.seed;
        t.parallel = self.train.parallel;
        t.timing = timing;
        t
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config(false).validate().map_err(|e| match e {
            ernn::Error::InvalidInput(msg) => match msg.split_once(": ") {
                Some((key, why)) => ConfigError::new(key, why),
                None => ConfigError::new("<config>", msg),
            },
            other => ConfigError::new("<config>", other.to_string()),
        })?;
        let d = &self.data;
        if d.task.seq_len == 0 {
            return Err(ConfigError::new("data.seq_len", "must be at least 1"));
        }
        match d.task.kind {
            TaskKind::NoisePadded => {
                if d.task.informative_steps == 0 {
                    return Err(ConfigError::new(
                        "data.informative_steps",
                        "must be at least 1",
                    ));
                }
            }
            TaskKind::RandomWalk => {
                if d.task.input_dim != 1 {
                    return Err(ConfigError::new(
                        "data.input_dim",
                        "random_walk inputs are scalar; set it to 1",
                    ));
                }
            }
            TaskKind::Csv => {
                if d.csv_path.is_none() {
                    return Err(ConfigError::new(
                        "data.csv_path",
                        "required when data.task is csv",
                    ));
                }
            }
        }
        if d.n_train == 0 {
            return Err(ConfigError::new("data.n_train", "must be at least 1"));
        }
        if d.n_test == 0 {
            return Err(ConfigError::new("data.n_test", "must be at least 1"));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(ConfigError::new(
                "data.train_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        let a = &self.analysis;
        if !a.eta.is_finite() {
            return Err(ConfigError::new("analysis.eta", "must be finite"));
        }
        if !(a.u_norm >= 0.0 && a.u_norm.is_finite()) {
            return Err(ConfigError::new(
                "analysis.u_norm",
                "must be finite and non-negative",
            ));
        }
        if !(a.walk_variance >= 0.0 && a.walk_variance.is_finite()) {
            return Err(ConfigError::new(
                "analysis.walk_variance",
                "must be finite and non-negative",
            ));
        }
        for (key, n) in [
            ("analysis.samples", a.samples),
            ("analysis.batch", a.batch),
            ("analysis.steps", a.steps),
            ("analysis.iterations", a.iterations),
        ] {
            if n == 0 {
                return Err(ConfigError::new(key, "must be at least 1"));
            }
        }
        Ok(())
    }
}
