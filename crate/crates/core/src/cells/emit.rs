use super::step::{cell_step, readout_logits};
use super::{CellConfig, CellKind, CellParams, Projection, ReadoutParams, Recurrence};
use crate::autodiff::{NodeId, ParamId, ParamRef, Tape};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

// Cell parameter blocks sit at fixed tape slots: W, b, then the recurrent
// block(s), then step sizes. The readout follows the cell.
const W: ParamId = ParamId(0);
const B: ParamId = ParamId(1);
const R1: ParamId = ParamId(2);
const R2: ParamId = ParamId(3);

fn eta_id(p: &CellParams) -> ParamId {
    ParamId(p.param_count() - 1)
}

fn emit_recurrence(p: &CellParams, tape: &mut Tape, z: NodeId) -> NodeId {
    match &p.recurrence {
        Recurrence::Full { .. } => tape.matvec(R1, z),
        Recurrence::LowRank { .. } => {
            let hz = tape.matvec(R2, z);
            let vhz = tape.matvec(R1, hz);
            tape.add(z, vhz)
        }
        Recurrence::Antisymmetric { .. } => {
            let vz = tape.matvec(R1, z);
            let vtz = tape.matvec_transposed(R1, z);
            let skew = tape.sub(vz, vtz);
            let damp = tape.scale(z, p.gamma);
            tape.sub(skew, damp)
        }
    }
}

/// Appends one time step of `p` to `tape` and returns the new state node.
/// `x` must already be on the tape; `t` selects per-timestep step sizes.
pub fn emit_step(
    p: &CellParams,
    tape: &mut Tape,
    h_prev: NodeId,
    x: NodeId,
    k: usize,
    t: usize,
) -> NodeId {
    let wx = tape.matvec(W, x);
    let bias = tape.param(B);
    let drive = tape.add(wx, bias);
    match p.kind {
        CellKind::Vanilla => {
            let uh = emit_recurrence(p, tape, h_prev);
            let pre = tape.add(uh, drive);
            tape.activation(p.activation, pre)
        }
        CellKind::FastRnn | CellKind::Antisymmetric => {
            let uh = emit_recurrence(p, tape, h_prev);
            let pre = tape.add(uh, drive);
            let act = tape.activation(p.activation, pre);
            let (r, c) = p.eta_index(t, 0);
            let eta = tape.param_entry(eta_id(p), r * p.step_sizes.cols() + c);
            let step = tape.scale_by(act, eta);
            tape.add(h_prev, step)
        }
        CellKind::Ernn => {
            let mut h: Option<NodeId> = None;
            for i in 0..k {
                // h⁽⁰⁾ = 0, so the first iteration starts from z = h_prev.
                let z = match h {
                    Some(hi) => tape.add(hi, h_prev),
                    None => h_prev,
                };
                let uz = emit_recurrence(p, tape, z);
                let mut pre = tape.add(uz, drive);
                if p.projection == Projection::Tied {
                    pre = emit_recurrence(p, tape, pre);
                }
                let act = tape.activation(p.activation, pre);
                let damp = tape.scale(z, p.gamma);
                let resid = tape.sub(act, damp);
                let (r, c) = p.eta_index(t, i);
                let eta = tape.param_entry(eta_id(p), r * p.step_sizes.cols() + c);
                let step = tape.scale_by(resid, eta);
                h = Some(match h {
                    Some(hi) => tape.add(hi, step),
                    None => step,
                });
            }
            h.expect("k >= 1")
        }
    }
}

/// A recurrent cell with its classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cell: CellParams,
    pub readout: ReadoutParams,
    /// Euler iterations per time step (ERNN only).
    pub k_steps: usize,
}

/// The unrolled graph of one sequence. Input slot 0 is the initial state,
/// slots 1..=T are the inputs; state `t` is marked on the tape at step `t`.
pub struct SequenceGraph {
    pub tape: Tape,
    pub states: Vec<NodeId>,
    pub logits: NodeId,
    pub loss: Option<NodeId>,
}

impl Model {
    pub fn init(cfg: &CellConfig, classes: usize, rng: &mut Rng) -> Result<Self> {
        let cell = CellParams::init(cfg, rng)?;
        let readout = ReadoutParams::init(classes, cfg.hidden_dim, rng)?;
        Ok(Self {
            cell,
            readout,
            k_steps: cfg.k_steps,
        })
    }

    pub fn classes(&self) -> usize {
        self.readout.classes()
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = self.cell.param_names();
        names.extend(self.readout.param_names());
        names
    }

    pub fn param_refs(&self) -> Vec<ParamRef<'_>> {
        let mut refs = self.cell.param_refs();
        refs.extend(self.readout.param_refs());
        refs
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cell.params_mut();
        out.extend(self.readout.params_mut());
        out
    }

    /// Builds the unrolled graph for sequences of length `seq_len`, ending in
    /// a cross-entropy node when `label` is given.
    pub fn graph(&self, seq_len: usize, label: Option<usize>) -> SequenceGraph {
        let p = &self.cell;
        let mut tape = Tape::new();
        let h0 = tape.input(p.hidden_dim());
        tape.mark_state(0, h0);
        let mut states = vec![h0];
        let mut h = h0;
        for t in 0..seq_len {
            let x = tape.input(p.input_dim());
            h = emit_step(p, &mut tape, h, x, self.k_steps, t);
            tape.mark_state(t + 1, h);
            states.push(h);
        }
        let n = p.param_count();
        let logits = tape.readout(ParamId(n), ParamId(n + 1), h);
        let loss = label.map(|y| tape.cross_entropy(logits, y));
        SequenceGraph {
            tape,
            states,
            logits,
            loss,
        }
    }

    /// Tape inputs for a sequence: a zero initial state followed by the steps.
    pub fn graph_inputs(&self, seq: &[Vector]) -> Vec<Vector> {
        let mut inputs = Vec::with_capacity(seq.len() + 1);
        inputs.push(Vector::zeros(self.cell.hidden_dim()));
        inputs.extend(seq.iter().cloned());
        inputs
    }

    /// Final state h_T of a sequence, computed without a tape.
    pub fn final_state(&self, seq: &[Vector]) -> Result<Vector> {
        let mut h = Vector::zeros(self.cell.hidden_dim());
        for (t, x) in seq.iter().enumerate() {
            h = cell_step(&self.cell, &h, x, self.k_steps, t)?;
        }
        Ok(h)
    }

    pub fn logits(&self, seq: &[Vector]) -> Result<Vector> {
        if seq.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        readout_logits(&self.readout, &self.final_state(seq)?)
    }
}
