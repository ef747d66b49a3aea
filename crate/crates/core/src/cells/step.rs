use super::{CellKind, CellParams, Projection, ReadoutParams, Recurrence};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Vector};

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), x)).collect()
}

fn check_kind(p: &CellParams, kind: CellKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::invalid(format!(
            "{} step called on a {} cell",
            kind.name(),
            p.kind.name()
        )));
    }
    Ok(())
}

fn check_dims(p: &CellParams, h_prev: &Vector, x: &Vector) -> Result<()> {
    if h_prev.dim() != p.hidden_dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, cell expects {}",
            h_prev.dim(),
            p.hidden_dim()
        )));
    }
    if x.dim() != p.input_dim() {
        return Err(Error::invalid(format!(
            "input has dimension {}, cell expects {}",
            x.dim(),
            p.input_dim()
        )));
    }
    Ok(())
}

/// W·x + b.
fn drive(p: &CellParams, x: &[f64]) -> Vec<f64> {
    let mut out = matvec(&p.w, x);
    for (o, b) in out.iter_mut().zip(p.b.as_slice()) {
        *o += b;
    }
    out
}

/// U·z for the recurrence of `p` (for the antisymmetric cell, the effective
/// V − Vᵀ − γI).
fn apply_recurrence(p: &CellParams, z: &[f64]) -> Vec<f64> {
    match &p.recurrence {
        Recurrence::Full { u } => matvec(u, z),
        Recurrence::LowRank { v, h } => {
            let inner = matvec(h, z);
            let mut out = matvec(v, &inner);
            for (o, zi) in out.iter_mut().zip(z) {
                *o += zi;
            }
            out
        }
        Recurrence::Antisymmetric { v } => (0..v.rows())
            .map(|i| {
                let mut s = 0.0;
                for j in 0..v.cols() {
                    s += (v.get(i, j) - v.get(j, i)) * z[j];
                }
                s - p.gamma * z[i]
            })
            .collect(),
    }
}

fn finite(v: Vec<f64>, location: impl FnOnce() -> String) -> Result<Vector> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vector::from_vec_unchecked(v))
    } else {
        Err(Error::overflow(location()))
    }
}

/// φ(U·h_prev + W·x + b).
pub fn vanilla_step(p: &CellParams, h_prev: &Vector, x: &Vector) -> Result<Vector> {
    check_kind(p, CellKind::Vanilla)?;
    check_dims(p, h_prev, x)?;
    let mut a = apply_recurrence(p, h_prev.as_slice());
    for (ai, di) in a.iter_mut().zip(drive(p, x.as_slice())) {
        *ai = p.activation.apply(*ai + di);
    }
    finite(a, || "vanilla step".into())
}

fn residual_step(p: &CellParams, h_prev: &Vector, x: &Vector, t: usize) -> Result<Vector> {
    let eta = p.eta(t, 0);
    let mut a = apply_recurrence(p, h_prev.as_slice());
    for ((ai, di), hi) in a
        .iter_mut()
        .zip(drive(p, x.as_slice()))
        .zip(h_prev.as_slice())
    {
        *ai = hi + eta * p.activation.apply(*ai + di);
    }
    finite(a, || format!("{} step", p.kind.name()))
}

/// h_prev + η·φ(U·h_prev + W·x + b).
pub fn fastrnn_step(p: &CellParams, h_prev: &Vector, x: &Vector) -> Result<Vector> {
    check_kind(p, CellKind::FastRnn)?;
    check_dims(p, h_prev, x)?;
    residual_step(p, h_prev, x, 0)
}

/// h_prev + η·φ((V − Vᵀ − γI)·h_prev + W·x + b).
pub fn antisymmetric_step(p: &CellParams, h_prev: &Vector, x: &Vector) -> Result<Vector> {
    check_kind(p, CellKind::Antisymmetric)?;
    check_dims(p, h_prev, x)?;
    residual_step(p, h_prev, x, 0)
}

/// P[U·z + W·x + b] for z = h + h_prev.
pub fn ernn_pre_activation(p: &CellParams, z: &[f64], x: &Vector) -> Vec<f64> {
    let mut inner = apply_recurrence(p, z);
    for (a, d) in inner.iter_mut().zip(drive(p, x.as_slice())) {
        *a += d;
    }
    match p.projection {
        Projection::Tied => apply_recurrence(p, &inner),
        Projection::Identity => inner,
    }
}

fn residual_at(p: &CellParams, h: &[f64], h_prev: &Vector, x: &Vector) -> Vec<f64> {
    let z: Vec<f64> = h
        .iter()
        .zip(h_prev.as_slice())
        .map(|(a, b)| a + b)
        .collect();
    let a = ernn_pre_activation(p, &z, x);
    a.iter()
        .zip(&z)
        .map(|(ai, zi)| p.activation.apply(*ai) - p.gamma * zi)
        .collect()
}

/// F(h) = φ(P[U(h + h_prev) + W·x + b]) − γ(h + h_prev).
pub fn ernn_residual(p: &CellParams, h: &Vector, h_prev: &Vector, x: &Vector) -> Result<Vector> {
    check_kind(p, CellKind::Ernn)?;
    check_dims(p, h_prev, x)?;
    if h.dim() != p.hidden_dim() {
        return Err(Error::invalid(format!(
            "iterate has dimension {}, cell expects {}",
            h.dim(),
            p.hidden_dim()
        )));
    }
    finite(residual_at(p, h.as_slice(), h_prev, x), || {
        "residual".into()
    })
}

/// All iterates h⁽⁰⁾ = `start`, …, h⁽ᴷ⁾ of h ← h + η⁽ⁱ⁺¹⁾·F(h), using the
/// step sizes of time step `t`.
pub fn ernn_iterates(
    p: &CellParams,
    h_prev: &Vector,
    x: &Vector,
    k: usize,
    start: &Vector,
    t: usize,
) -> Result<Vec<Vector>> {
    check_kind(p, CellKind::Ernn)?;
    check_dims(p, h_prev, x)?;
    if start.dim() != p.hidden_dim() {
        return Err(Error::invalid("start iterate has the wrong dimension"));
    }
    let mut out = Vec::with_capacity(k + 1);
    out.push(start.clone());
    for i in 0..k {
        let h = out[i].as_slice();
        let eta = p.eta(t, i);
        let f = residual_at(p, h, h_prev, x);
        let next: Vec<f64> = h.iter().zip(&f).map(|(hi, fi)| hi + eta * fi).collect();
        out.push(finite(next, || format!("ernn iteration {}", i + 1))?);
    }
    Ok(out)
}

/// K Euler fixed-point iterations from h⁽⁰⁾ = 0; returns h⁽ᴷ⁾.
pub fn ernn_step(p: &CellParams, h_prev: &Vector, x: &Vector, k: usize) -> Result<Vector> {
    if k == 0 {
        return Err(Error::invalid("ernn step needs K >= 1"));
    }
    let zero = Vector::zeros(p.hidden_dim());
    let mut it = ernn_iterates(p, h_prev, x, k, &zero, 0)?;
    Ok(it.pop().expect("k >= 1 iterates"))
}

/// One time step of any cell kind at time index `t` (selects per-timestep
/// step sizes when present).
pub fn cell_step(
    p: &CellParams,
    h_prev: &Vector,
    x: &Vector,
    k: usize,
    t: usize,
) -> Result<Vector> {
    match p.kind {
        CellKind::Vanilla => vanilla_step(p, h_prev, x),
        CellKind::FastRnn | CellKind::Antisymmetric => {
            check_dims(p, h_prev, x)?;
            residual_step(p, h_prev, x, t)
        }
        CellKind::Ernn => {
            if k == 0 {
                return Err(Error::invalid("ernn step needs K >= 1"));
            }
            let zero = Vector::zeros(p.hidden_dim());
            let mut it = ernn_iterates(p, h_prev, x, k, &zero, t)?;
            Ok(it.pop().expect("k >= 1 iterates"))
        }
    }
}

/// W_out·h_T + b_out.
pub fn readout_logits(r: &ReadoutParams, h_t: &Vector) -> Result<Vector> {
    if h_t.dim() != r.w_out.cols() {
        return Err(Error::invalid(format!(
            "readout expects dimension {}, got {}",
            r.w_out.cols(),
            h_t.dim()
        )));
    }
    let mut z = matvec(&r.w_out, h_t.as_slice());
    for (zi, bi) in z.iter_mut().zip(r.b_out.as_slice()) {
        *zi += bi;
    }
    finite(z, || "readout".into())
}
