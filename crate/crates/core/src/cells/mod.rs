//! Recurrent cells (vanilla, FastRNN, antisymmetric, ERNN) and the readout.
//!
//! Every cell has two realizations that must agree: direct vector arithmetic
//! in [`step`] for analysis, and tape emission in [`emit`] for training.

mod emit;
mod step;

use serde::{Deserialize, Serialize};

pub use crate::autodiff::Activation;
use crate::autodiff::ParamRef;
use crate::error::{Error, Result};
use crate::numerics::{matmul, spectral_norm, Matrix, Rng, Vector};

pub use emit::{emit_step, Model, SequenceGraph};
pub use step::{
    antisymmetric_step, cell_step, ernn_iterates, ernn_pre_activation, ernn_residual, ernn_step,
    fastrnn_step, readout_logits, vanilla_step,
};

/// Default initial value of every learnable step size.
pub const ETA_INIT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    FastRnn,
    Antisymmetric,
    Ernn,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [
        CellKind::Vanilla,
        CellKind::FastRnn,
        CellKind::Antisymmetric,
        CellKind::Ernn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Vanilla => "vanilla",
            CellKind::FastRnn => "fastrnn",
            CellKind::Antisymmetric => "antisymmetric",
            CellKind::Ernn => "ernn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vanilla" | "rnn" => Some(CellKind::Vanilla),
            "fastrnn" => Some(CellKind::FastRnn),
            "antisymmetric" => Some(CellKind::Antisymmetric),
            "ernn" => Some(CellKind::Ernn),
            _ => None,
        }
    }

    fn has_step_sizes(self) -> bool {
        self != CellKind::Vanilla
    }
}

/// What multiplies the pre-activation of an ERNN iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// P = U, the tied form used for training.
    #[default]
    Tied,
    /// P = I, which gives closed-form scalar configurations.
    Identity,
}

impl Projection {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tied" => Some(Projection::Tied),
            "identity" | "none" => Some(Projection::Identity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Projection::Tied => "tied",
            Projection::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Recurrence {
    /// Free transition matrix U (vanilla, FastRNN).
    Full { u: Matrix },
    /// V with effective transition V − Vᵀ − γI.
    Antisymmetric { v: Matrix },
    /// U = I + V·H, never stored as a dense parameter.
    LowRank { v: Matrix, h: Matrix },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub activation: Activation,
    pub projection: Projection,
    pub gamma: f64,
    pub w: Matrix,
    pub b: Vector,
    pub recurrence: Recurrence,
    /// One row of per-iteration step sizes, or one row per time step.
    /// Vanilla cells carry a 0×0 block.
    pub step_sizes: Matrix,
}

/// Hyper-parameters needed to initialize a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub rank: usize,
    pub k_steps: usize,
    pub activation: Activation,
    pub gamma: f64,
    pub projection: Projection,
    pub eta_init: f64,
    /// `Some(T)` gives each time step its own step sizes.
    pub eta_per_timestep: Option<usize>,
}

impl CellConfig {
    pub fn new(kind: CellKind, hidden_dim: usize, input_dim: usize) -> Self {
        Self {
            kind,
            hidden_dim,
            input_dim,
            rank: hidden_dim.div_ceil(4).max(1),
            k_steps: 1,
            activation: Activation::Relu,
            gamma: 1.0,
            projection: Projection::Tied,
            eta_init: ETA_INIT,
            eta_per_timestep: None,
        }
    }
}

impl CellParams {
    /// Random initialization: W ~ N(0, 1/d), b = 0, low-rank factors ~ N(0, 0.05²),
    /// full baseline transitions ~ N(0, 0.25/D).
    pub fn init(cfg: &CellConfig, rng: &mut Rng) -> Result<Self> {
        let (dh, di) = (cfg.hidden_dim, cfg.input_dim);
        if dh == 0 || di == 0 {
            return Err(Error::invalid(
                "hidden and input dimensions must be positive",
            ));
        }
        if cfg.k_steps == 0 {
            return Err(Error::invalid("k_steps must be at least 1"));
        }
        if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if !cfg.eta_init.is_finite() {
            return Err(Error::invalid("eta_init must be finite"));
        }
        let w = rng.gaussian_matrix(dh, di, 1.0 / (di as f64).sqrt());
        let b = Vector::zeros(dh);
        let full_std = 0.5 / (dh as f64).sqrt();
        let recurrence = match cfg.kind {
            CellKind::Vanilla | CellKind::FastRnn => Recurrence::Full {
                u: rng.gaussian_matrix(dh, dh, full_std),
            },
            CellKind::Antisymmetric => Recurrence::Antisymmetric {
                v: rng.gaussian_matrix(dh, dh, full_std),
            },
            CellKind::Ernn => {
                if cfg.rank == 0 || cfg.rank > dh {
                    return Err(Error::invalid(format!(
                        "rank must be in 1..={dh}, got {}",
                        cfg.rank
                    )));
                }
                Recurrence::LowRank {
                    v: rng.gaussian_matrix(dh, cfg.rank, 0.05),
                    h: rng.gaussian_matrix(cfg.rank, dh, 0.05),
                }
            }
        };
        let iterations = if cfg.kind == CellKind::Ernn {
            cfg.k_steps
        } else {
            1
        };
        let rows = cfg.eta_per_timestep.unwrap_or(1).max(1);
        let step_sizes = if cfg.kind.has_step_sizes() {
            Matrix::new(rows, iterations, vec![cfg.eta_init; rows * iterations])?
        } else {
            Matrix::zeros(0, 0)
        };
        let p = Self {
            kind: cfg.kind,
            activation: cfg.activation,
            projection: cfg.projection,
            gamma: cfg.gamma,
            w,
            b,
            recurrence,
            step_sizes,
        };
        p.validate()?;
        Ok(p)
    }

    /// ERNN with an explicit dense U, stored as V = U − I, H = I.
    pub fn ernn_from_u(
        u: &Matrix,
        w: Matrix,
        b: Vector,
        step_sizes: &[f64],
        activation: Activation,
        projection: Projection,
    ) -> Result<Self> {
        let n = u.rows();
        let p = Self {
            kind: CellKind::Ernn,
            activation,
            projection,
            gamma: 1.0,
            w,
            b,
            recurrence: Recurrence::LowRank {
                v: u.sub(&Matrix::identity(n))?,
                h: Matrix::identity(n),
            },
            step_sizes: Matrix::new(1, step_sizes.len(), step_sizes.to_vec())?,
        };
        p.validate()?;
        Ok(p)
    }

    /// The closed-form scalar configuration: φ = identity, u = 0.5, w = 1,
    /// b = 0, γ = 1, P = I and constant step size 0.1. Its iteration map is
    /// h ← 0.95·h + 0.1 for x = 1, h_prev = 0, with fixed point 2.
    pub fn scalar_linear() -> Self {
        Self::ernn_from_u(
            &Matrix::diagonal(&[0.5]),
            Matrix::diagonal(&[1.0]),
            Vector::zeros(1),
            &[0.1],
            Activation::Identity,
            Projection::Identity,
        )
        .expect("valid scalar configuration")
    }

    /// Random dense-U ERNN for analysis: U has spectral norm `u_norm`,
    /// W ~ N(0, 1/d), b ~ N(0, 0.1²).
    pub fn ernn_random_u(
        rng: &mut Rng,
        hidden_dim: usize,
        input_dim: usize,
        u_norm: f64,
        step_sizes: &[f64],
        activation: Activation,
    ) -> Result<Self> {
        let raw = rng.gaussian_matrix(hidden_dim, hidden_dim, 1.0);
        let norm = spectral_norm(&raw);
        let u = if norm > 0.0 {
            raw.scale(u_norm / norm)
        } else {
            raw
        };
        let w = rng.gaussian_matrix(hidden_dim, input_dim, 1.0 / (input_dim as f64).sqrt());
        let b = crate::numerics::gaussian(rng, hidden_dim, 0.1);
        Self::ernn_from_u(&u, w, b, step_sizes, activation, Projection::Tied)
    }

    pub fn validate(&self) -> Result<()> {
        let dh = self.w.rows();
        if dh == 0 || self.w.cols() == 0 {
            return Err(Error::invalid("empty input weight"));
        }
        if self.b.dim() != dh {
            return Err(Error::invalid(format!(
                "bias has dimension {}, expected {dh}",
                self.b.dim()
            )));
        }
        if !self.gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite"));
        }
        let square = |m: &Matrix, name: &str| {
            if m.rows() != dh || m.cols() != dh {
                Err(Error::invalid(format!(
                    "{name} is {}x{}, expected {dh}x{dh}",
                    m.rows(),
                    m.cols()
                )))
            } else {
                Ok(())
            }
        };
        match (&self.recurrence, self.kind) {
            (Recurrence::Full { u }, CellKind::Vanilla | CellKind::FastRnn) => square(u, "U")?,
            (Recurrence::Antisymmetric { v }, CellKind::Antisymmetric) => square(v, "V")?,
            (Recurrence::LowRank { v, h }, CellKind::Ernn) => {
                if v.rows() != dh || h.cols() != dh || v.cols() != h.rows() || v.cols() == 0 {
                    return Err(Error::invalid(format!(
                        "low-rank factors {}x{} and {}x{} do not fit hidden dimension {dh}",
                        v.rows(),
                        v.cols(),
                        h.rows(),
                        h.cols()
                    )));
                }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "recurrence does not match cell kind {}",
                    self.kind.name()
                )))
            }
        }
        if self.kind.has_step_sizes() && self.step_sizes.as_slice().is_empty() {
            return Err(Error::invalid("step sizes are empty"));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn rank(&self) -> Option<usize> {
        match &self.recurrence {
            Recurrence::LowRank { v, .. } => Some(v.cols()),
            _ => None,
        }
    }

    /// Step size for time step `t` (0-based) and iteration `i` (0-based).
    /// Indices past the stored range reuse the last row or column.
    pub fn eta(&self, t: usize, i: usize) -> f64 {
        let (r, c) = self.eta_index(t, i);
        self.step_sizes.get(r, c)
    }

    pub(crate) fn eta_index(&self, t: usize, i: usize) -> (usize, usize) {
        let rows = self.step_sizes.rows();
        let cols = self.step_sizes.cols();
        (t.min(rows.saturating_sub(1)), i.min(cols.saturating_sub(1)))
    }

    /// Dense U = I + V·H (ERNN) or U (vanilla, FastRNN). Analysis only.
    pub fn effective_u(&self) -> Result<Matrix> {
        match &self.recurrence {
            Recurrence::Full { u } => Ok(u.clone()),
            Recurrence::LowRank { v, h } => Matrix::identity(v.rows()).add(&matmul(v, h)?),
            Recurrence::Antisymmetric { v } => v
                .sub(&v.transpose())?
                .sub(&Matrix::identity(v.rows()).scale(self.gamma)),
        }
    }

    /// Names of the parameter blocks, in the order of [`CellParams::param_refs`].
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["W", "b"];
        match &self.recurrence {
            Recurrence::Full { .. } => names.push("U"),
            Recurrence::Antisymmetric { .. } => names.push("V"),
            Recurrence::LowRank { .. } => names.extend(["V", "H"]),
        }
        if self.kind.has_step_sizes() {
            names.push("eta");
        }
        names
    }

    pub fn param_refs(&self) -> Vec<ParamRef<'_>> {
        let mut refs: Vec<ParamRef<'_>> = vec![(&self.w).into(), (&self.b).into()];
        match &self.recurrence {
            Recurrence::Full { u } => refs.push(u.into()),
            Recurrence::Antisymmetric { v } => refs.push(v.into()),
            Recurrence::LowRank { v, h } => refs.extend([ParamRef::from(v), h.into()]),
        }
        if self.kind.has_step_sizes() {
            refs.push((&self.step_sizes).into());
        }
        refs
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.w.as_mut_slice(), self.b.as_mut_slice()];
        match &mut self.recurrence {
            Recurrence::Full { u } => out.push(u.as_mut_slice()),
            Recurrence::Antisymmetric { v } => out.push(v.as_mut_slice()),
            Recurrence::LowRank { v, h } => {
                out.push(v.as_mut_slice());
                out.push(h.as_mut_slice());
            }
        }
        if self.kind.has_step_sizes() {
            out.push(self.step_sizes.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_names().len()
    }
}

/// Affine classification head: logits = W_out·h + b_out.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams {
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl ReadoutParams {
    pub fn new(w_out: Matrix, b_out: Vector) -> Result<Self> {
        if w_out.rows() != b_out.dim() {
            return Err(Error::invalid(format!(
                "readout has {} rows but bias dimension {}",
                w_out.rows(),
                b_out.dim()
            )));
        }
        if w_out.rows() < 2 {
            return Err(Error::invalid("readout needs at least 2 classes"));
        }
        Ok(Self { w_out, b_out })
    }

    /// W_out ~ N(0, 1/D), b_out = 0.
    pub fn init(classes: usize, hidden_dim: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(
            rng.gaussian_matrix(classes, hidden_dim, 1.0 / (hidden_dim.max(1) as f64).sqrt()),
            Vector::zeros(classes),
        )
    }

    pub fn classes(&self) -> usize {
        self.w_out.rows()
    }

    pub fn param_names(&self) -> [&'static str; 2] {
        ["W_out", "b_out"]
    }

    pub fn param_refs(&self) -> [ParamRef<'_>; 2] {
        [(&self.w_out).into(), (&self.b_out).into()]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [self.w_out.as_mut_slice(), self.b_out.as_mut_slice()]
    }
}
