//! The subcommands. Each writes its artifacts into the output directory and
//! reports progress to the supplied writer.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use ernn::autodiff::{gradcheck, OpKind};
use ernn::cells::{cell_step, CellConfig, CellKind, CellParams, Model, Recurrence};
use ernn::equilibrium::{
    bptt_norm_profile, iterate_euler_from, oracle_equilibrium, stability_spectrum,
};
use ernn::numerics::{spectral_norm, Matrix, Rng, Vector};
use ernn::tasks::{
    gen_noise_padded, gen_random_walk, load_csv_sequences, split_normalize, SequenceDataset,
    TaskKind, TaskSpec,
};
use ernn::train::{fit_with, FitError};

use crate::config::{Preset, RunConfig, Start};
use crate::error::CliError;

// Independent random streams derived from the run seed.
const DATA_STREAM: u64 = 1;
const PARAM_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const SAMPLE_STREAM: u64 = 4;

/// Finite-difference step and pass threshold of the gradient check.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-6;
pub const GRADCHECK_MAX_HIDDEN: usize = 8;
pub const GRADCHECK_MAX_STEPS: usize = 4;

/// Distance below which the convergence trace stops.
pub const CONVERGED_DISTANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    PhaseSpace,
    GradFlow,
    FixedPoint,
    Stability,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::PhaseSpace => "phase-space",
            Command::GradFlow => "grad-flow",
            Command::FixedPoint => "fixed-point",
            Command::Stability => "stability",
            Command::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Record wall-clock seconds per epoch.
    pub timing: bool,
    /// Corrupt the activation backward rule (negative control for gradcheck).
    pub inject_fault: bool,
}

/// Files written so far, relative to the output directory.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvOut, CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
        w.write_record(header)
            .map_err(|e| CliError::output(&path, e))?;
        Ok(CsvOut { w, path })
    }
}

struct CsvOut {
    w: csv::Writer<File>,
    path: PathBuf,
}

impl CsvOut {
    fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.w
            .write_record(fields)
            .map_err(|e| CliError::output(&self.path, e))
    }

    fn flush(&mut self) -> Result<(), CliError> {
        self.w.flush().map_err(|e| CliError::output(&self.path, e))
    }
}

/// Shortest decimal that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Runs `cmd`, appending every file it creates to `out`.
pub fn run_command(
    cmd: Command,
    cfg: &RunConfig,
    opts: RunOptions,
    out: &mut Outputs,
    log: &mut dyn Write,
) -> Result<(), CliError> {
    match cmd {
        Command::Train => train(cfg, opts, out, log),
        Command::PhaseSpace => phase_space(cfg, out, log),
        Command::GradFlow => grad_flow(cfg, out, log),
        Command::FixedPoint => fixed_point(cfg, out, log),
        Command::Stability => stability(cfg, out, log),
        Command::Gradcheck => gradient_check(cfg, opts, log),
    }
}

// Progress lines are best effort; a closed stdout must not abort a run.
macro_rules! say {
    ($log:expr, $($arg:tt)*) => {
        let _ = writeln!($log, $($arg)*);
    };
}

/// Train and test sets for the configured classification task.
pub fn labelled_data(cfg: &RunConfig) -> Result<(SequenceDataset, SequenceDataset), CliError> {
    let d = &cfg.data;
    let root = Rng::new(cfg.seed);
    match d.task.kind {
        TaskKind::NoisePadded => {
            // One draw so both sides share the class means.
            let all =
                gen_noise_padded(&d.task, d.n_train + d.n_test, &mut root.derive(DATA_STREAM))?;
            let idx: Vec<usize> = (0..all.len()).collect();
            Ok((all.subset(&idx[..d.n_train]), all.subset(&idx[d.n_train..])))
        }
        TaskKind::Csv => {
            let path = d.csv_path.as_ref().expect("validated");
            let all = load_csv_sequences(path, d.task.seq_len, d.task.input_dim, d.csv_header)?;
            Ok(split_normalize(
                &all,
                d.train_fraction,
                &mut root.derive(SPLIT_STREAM),
            )?)
        }
        TaskKind::RandomWalk => Err(crate::config::ConfigError::new(
            "data.task",
            "random_walk has no labels; use noise_padded or csv for training",
        )
        .into()),
    }
}

/// `n` input sequences from the configured task (CSV files may yield fewer).
pub fn analysis_sequences(cfg: &RunConfig, n: usize) -> Result<Vec<Vec<Vector>>, CliError> {
    let d = &cfg.data;
    let mut rng = Rng::new(cfg.seed).derive(DATA_STREAM);
    Ok(match d.task.kind {
        TaskKind::NoisePadded => gen_noise_padded(&d.task, n, &mut rng)?.sequences,
        TaskKind::RandomWalk => (0..n)
            .map(|_| gen_random_walk(&d.task, d.task.seq_len, &mut rng))
            .collect::<Result<_, _>>()?,
        TaskKind::Csv => {
            let path = d.csv_path.as_ref().expect("validated");
            let mut all =
                load_csv_sequences(path, d.task.seq_len, d.task.input_dim, d.csv_header)?.sequences;
            all.truncate(n);
            all
        }
    })
}

fn train(
    cfg: &RunConfig,
    opts: RunOptions,
    out: &mut Outputs,
    log: &mut dyn Write,
) -> Result<(), CliError> {
    let (train, test) = labelled_data(cfg)?;
    let mut tc = cfg.train_config(opts.timing);
    if train.classes > tc.task.classes {
        tc.task.classes = train.classes;
    }
    say!(
        log,
        "training {} on {} samples, testing on {}",
        tc.model.kind.name(),
        train.len(),
        test.len()
    );

    let mut metrics = out.csv(
        "metrics.csv",
        &[
            "epoch",
            "train_loss",
            "test_loss",
            "test_acc",
            "lr",
            "seconds",
        ],
    )?;
    let mut write_error = None;
    let result = fit_with(&tc, &train, &test, |m| {
        let row = [
            m.epoch.to_string(),
            num(m.train_loss),
            num(m.test_loss),
            num(m.test_acc),
            num(m.lr),
            opt_num(m.seconds),
        ];
        // Flushed per epoch so an interrupted run keeps its history.
        if write_error.is_none() {
            write_error = metrics.row(&row).and_then(|_| metrics.flush()).err();
        }
        say!(
            log,
            "epoch {:>4}  train_loss {:.5}  test_loss {:.5}  test_acc {:.4}  lr {:.3e}",
            m.epoch,
            m.train_loss,
            m.test_loss,
            m.test_acc,
            m.lr
        );
    });
    metrics.flush()?;
    let (checkpoint, failure) = match result {
        Ok(done) => (Some(done.checkpoint), None),
        Err(FitError { error, last_good }) => (last_good.map(|b| *b), Some(error)),
    };
    if let Some(ckpt) = checkpoint {
        let path = out.path("checkpoint.json");
        ckpt.save(&path)?;
    }
    if let Some(e) = write_error {
        return Err(e);
    }
    match failure {
        Some(e) => {
            say!(log, "training stopped: {e}; kept the last good checkpoint");
            Err(e.into())
        }
        None => Ok(()),
    }
}

fn scaled_to_norm(m: Matrix, target: f64) -> Matrix {
    let norm = spectral_norm(&m);
    if norm > 0.0 {
        m.scale(target / norm)
    } else {
        m
    }
}

/// The random dense-U ERNN the analysis commands study: spectral norm
/// `analysis.u_norm`, step size `analysis.eta`, drawn from the run seed.
pub fn analysis_cell(cfg: &RunConfig) -> Result<CellParams, CliError> {
    let m = &cfg.model;
    let mut p = CellParams::ernn_random_u(
        &mut Rng::new(cfg.seed).derive(PARAM_STREAM),
        m.hidden_dim,
        m.input_dim,
        cfg.analysis.u_norm,
        &[cfg.analysis.eta],
        m.activation,
    )?;
    p.gamma = m.gamma;
    p.projection = m.projection;
    p.validate()?;
    Ok(p)
}

/// Same input weights, bias and U as `ernn`, as a plain recurrent cell.
pub fn vanilla_twin(ernn: &CellParams) -> Result<CellParams, CliError> {
    let p = CellParams {
        kind: CellKind::Vanilla,
        recurrence: Recurrence::Full {
            u: ernn.effective_u()?,
        },
        step_sizes: Matrix::zeros(0, 0),
        ..ernn.clone()
    };
    p.validate()?;
    Ok(p)
}

fn phase_space(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn Write) -> Result<(), CliError> {
    let a = &cfg.analysis;
    let m = &cfg.model;
    let mut rng = Rng::new(cfg.seed).derive(PARAM_STREAM);
    let w = rng.gaussian_matrix(2, 1, 1.0);
    let u = scaled_to_norm(rng.gaussian_matrix(2, 2, 1.0), a.u_norm);
    let mut ernn = CellParams::ernn_from_u(
        &u,
        w,
        Vector::zeros(2),
        &vec![a.eta; m.k_steps],
        m.activation,
        m.projection,
    )?;
    ernn.gamma = m.gamma;
    ernn.validate()?;
    let vanilla = vanilla_twin(&ernn)?;
    let fast = CellParams {
        kind: CellKind::FastRnn,
        step_sizes: Matrix::new(1, 1, vec![a.eta])?,
        ..vanilla.clone()
    };
    fast.validate()?;

    let walk_spec = TaskSpec::random_walk(a.walk_variance);
    let walk = gen_random_walk(
        &walk_spec,
        a.steps,
        &mut Rng::new(cfg.seed).derive(DATA_STREAM),
    )?;
    let mut csv = out.csv("trajectories.csv", &["step", "model", "h1", "h2"])?;
    for p in [&vanilla, &fast, &ernn] {
        let mut h = Vector::zeros(2);
        for (t, x) in walk.iter().enumerate() {
            h = cell_step(p, &h, x, m.k_steps, t)?;
            let s = h.as_slice();
            csv.row(&[
                (t + 1).to_string(),
                p.kind.name().into(),
                num(s[0]),
                num(s[1]),
            ])?;
        }
        say!(
            log,
            "{:<8} final state ({:.4}, {:.4})",
            p.kind.name(),
            h.as_slice()[0],
            h.as_slice()[1]
        );
    }
    csv.flush()
}

fn grad_flow(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn Write) -> Result<(), CliError> {
    let seq_len = cfg.data.task.seq_len;
    if seq_len < 2 {
        return Err(crate::config::ConfigError::new(
            "data.seq_len",
            "grad-flow needs at least 2 steps",
        )
        .into());
    }
    let ernn = analysis_cell(cfg)?;
    let vanilla = vanilla_twin(&ernn)?;
    let seqs = analysis_sequences(cfg, cfg.analysis.batch)?;
    let mut csv = out.csv("gradnorms.csv", &["n", "model", "spectral_norm_dhT_dhn"])?;
    for (p, k) in [(&ernn, cfg.model.k_steps), (&vanilla, 1)] {
        let mut mean = vec![0.0; seq_len - 1];
        for s in &seqs {
            for (acc, v) in mean.iter_mut().zip(bptt_norm_profile(p, s, k)?) {
                *acc += v / seqs.len() as f64;
            }
        }
        for (i, v) in mean.iter().enumerate() {
            csv.row(&[(i + 1).to_string(), p.kind.name().into(), num(*v)])?;
        }
        let (lo, hi) = mean.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        say!(
            log,
            "{:<8} ‖∂h_T/∂h_n‖₂ over n: min {lo:.4e}  max {hi:.4e}",
            p.kind.name()
        );
    }
    csv.flush()
}

fn fixed_point(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn Write) -> Result<(), CliError> {
    let a = &cfg.analysis;
    let (p, h_prev, x) = match a.preset {
        Preset::ScalarLinear => (
            CellParams::scalar_linear(),
            Vector::zeros(1),
            Vector::new(vec![1.0])?,
        ),
        Preset::Random => {
            let p = analysis_cell(cfg)?;
            let x = analysis_sequences(cfg, 1)?
                .into_iter()
                .next()
                .and_then(|s| s.into_iter().next())
                .ok_or_else(|| CliError::Check("dataset is empty".into()))?;
            let h_prev = Vector::zeros(p.hidden_dim());
            (p, h_prev, x)
        }
    };
    let oracle = oracle_equilibrium(&p, &h_prev, &x)?;
    let start = match a.start {
        Start::Zero => Vector::zeros(p.hidden_dim()),
        Start::Equilibrium => oracle.h_star.clone(),
    };
    let report = iterate_euler_from(&p, &h_prev, &x, a.iterations, &oracle, &start)?;
    let mut csv = out.csv(
        "convergence.csv",
        &[
            "i",
            "residual_norm",
            "oracle_distance",
            "ratio",
            "descent_condition",
        ],
    )?;
    let mut rows = 0;
    for i in 0..=a.iterations {
        let descent = report.descent_condition_holds[i]
            .map(|b| b.to_string())
            .unwrap_or_default();
        csv.row(&[
            i.to_string(),
            num(report.residual_norms[i]),
            num(report.oracle_distances[i]),
            opt_num(report.contraction_ratios[i]),
            descent,
        ])?;
        rows += 1;
        if report.oracle_distances[i] <= CONVERGED_DISTANCE {
            break;
        }
    }
    say!(
        log,
        "oracle residual {:.3e} after {} newton steps; {rows} iterates recorded, largest ratio {:.6}",
        oracle.residual_norm,
        oracle.newton_iterations,
        report.tau_bound
    );
    csv.flush()
}

fn stability(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn Write) -> Result<(), CliError> {
    let a = &cfg.analysis;
    let p = analysis_cell(cfg)?;
    let seqs = analysis_sequences(cfg, a.samples)?;
    if seqs.is_empty() {
        return Err(CliError::Check("dataset is empty".into()));
    }
    let mut pick = Rng::new(cfg.seed).derive(SAMPLE_STREAM);
    let mut csv = out.csv("spectrum.csv", &["sample", "eig_index", "re", "im"])?;
    let mut abscissa = f64::NEG_INFINITY;
    for s in 0..a.samples {
        let seq = &seqs[s % seqs.len()];
        let t = pick.below(seq.len());
        let mut h_prev = Vector::zeros(p.hidden_dim());
        for (j, x) in seq[..t].iter().enumerate() {
            h_prev = cell_step(&p, &h_prev, x, cfg.model.k_steps, j)?;
        }
        let eq = oracle_equilibrium(&p, &h_prev, &seq[t])?;
        let spectrum = stability_spectrum(&p, &eq.h_star, &h_prev, &seq[t])?;
        abscissa = abscissa.max(spectrum.abscissa());
        for (j, e) in spectrum.eigenvalues.iter().enumerate() {
            csv.row(&[s.to_string(), j.to_string(), num(e.re), num(e.im)])?;
        }
    }
    say!(
        log,
        "{} sample points, largest real part {abscissa:.6}",
        a.samples
    );
    csv.flush()
}

fn gradient_check(cfg: &RunConfig, opts: RunOptions, log: &mut dyn Write) -> Result<(), CliError> {
    let hidden = cfg.model.hidden_dim.min(GRADCHECK_MAX_HIDDEN);
    let steps = cfg.data.task.seq_len.min(GRADCHECK_MAX_STEPS);
    if hidden != cfg.model.hidden_dim || steps != cfg.data.task.seq_len {
        say!(
            log,
            "note: checking at hidden_dim {hidden}, seq_len {steps}"
        );
    }
    let seq: Vec<Vector> = analysis_sequences(cfg, 1)?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Check("dataset is empty".into()))?
        .into_iter()
        .take(steps)
        .collect();
    let classes = cfg.data.task.classes;
    let label = (cfg.seed % classes as u64) as usize;
    let root = Rng::new(cfg.seed).derive(PARAM_STREAM);

    let mut failures = Vec::new();
    for (i, kind) in CellKind::ALL.into_iter().enumerate() {
        let mc = CellConfig {
            kind,
            hidden_dim: hidden,
            rank: cfg.model.rank.min(hidden),
            eta_per_timestep: cfg.model.eta_per_timestep.map(|_| steps),
            ..cfg.model.clone()
        };
        let model = Model::init(&mc, classes, &mut root.derive(i as u64))?;
        let refs = model.param_refs();
        let mut g = model.graph(seq.len(), Some(label));
        g.tape.forward(&refs, &model.graph_inputs(&seq))?;
        if opts.inject_fault {
            g.tape.inject_backward_fault(OpKind::Activation);
        }
        let report = gradcheck(&mut g.tape, &refs, GRADCHECK_STEP)?;
        let offenders = report.offenders(GRADCHECK_TOL);
        let ok = offenders.is_empty();
        say!(
            log,
            "{:<14} max_rel_err {:.3e}  checked {:>4}  excluded {:>3}  {}",
            kind.name(),
            report.max_relative_error,
            report.checked,
            report.excluded,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            let names: Vec<&str> = offenders.iter().map(|&k| model.param_names()[k]).collect();
            say!(log, "  offending blocks: {}", names.join(", "));
            failures.push(format!("{} [{}]", kind.name(), names.join(", ")));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient mismatch above {GRADCHECK_TOL:e} in {}",
            failures.join("; ")
        )))
    }
}
