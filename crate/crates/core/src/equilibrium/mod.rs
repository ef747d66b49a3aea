//! Verification suite for ERNN cells: true fixed points by damped Newton,
//! measured convergence of the Euler iteration, the implicit state Jacobian,
//! stability spectra and BPTT gradient-norm profiles.
//!
//! Everything here works on direct vector arithmetic, independent of the
//! tape, except [`bptt_norm_profile`] and [`unrolled_step_jacobian`], which
//! exist to measure what the tape produces.

use serde::Serialize;

use crate::autodiff::Tape;
use crate::cells::{
    emit_step, ernn_iterates, ernn_pre_activation, ernn_residual, CellKind, CellParams, Projection,
};
use crate::error::{Error, Result};
use crate::numerics::{eig, lu_solve, matmul, spectral_norm, Lu, Matrix, Spectrum, Vector};

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITERS: usize = 100;
pub const MAX_HALVINGS: usize = 40;
/// Residual an equilibrium must reach before implicit differentiation is allowed.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
/// Relative distance to the oracle below which contraction ratios are not reported.
pub const RATIO_FLOOR: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub h_star: Vector,
    /// ‖F(h*)‖∞.
    pub residual_norm: f64,
    pub newton_iterations: usize,
}

/// Per-iteration record of the Euler fixed-point iteration. All sequences are
/// indexed by iterate, h⁽⁰⁾ through h⁽ᴷ⁾.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub iterates: Vec<Vector>,
    /// ‖F(h⁽ⁱ⁾)‖₂.
    pub residual_norms: Vec<f64>,
    /// ‖h⁽ⁱ⁾ − h*‖₂.
    pub oracle_distances: Vec<f64>,
    /// distance[i+1] / distance[i]; `None` for the last iterate and wherever
    /// either distance is too close to the oracle's own error to be a rate.
    pub contraction_ratios: Vec<Option<f64>>,
    /// Largest defined ratio (0 when none is defined).
    pub tau_bound: f64,
    /// η²‖∇F·F‖² + 2η·Fᵀ∇F·F < 0 for the step leaving iterate i.
    pub descent_condition_holds: Vec<Option<bool>>,
    /// Norm of I + η∇F at each iterate (the contraction check), `None` for the last.
    pub contraction_checks: Vec<Option<f64>>,
}

fn require_ernn(p: &CellParams) -> Result<()> {
    if p.kind != CellKind::Ernn {
        return Err(Error::invalid(format!(
            "equilibrium analysis needs an ernn cell, got {}",
            p.kind.name()
        )));
    }
    Ok(())
}

/// F(h) = φ(P[U(h + h_prev) + W·x + b]) − γ(h + h_prev).
pub fn residual_f(p: &CellParams, h: &Vector, h_prev: &Vector, x: &Vector) -> Result<Vector> {
    ernn_residual(p, h, h_prev, x)
}

/// Analytic ∇F = diag(φ′)·P·U − γI together with the indices of relu
/// entries evaluated exactly at their kink (subgradient 0 used there).
pub fn residual_jacobian_with_kinks(
    p: &CellParams,
    h: &Vector,
    h_prev: &Vector,
    x: &Vector,
) -> Result<(Matrix, Vec<usize>)> {
    require_ernn(p)?;
    // Validates dimensions as a side effect.
    ernn_residual(p, h, h_prev, x)?;
    let z: Vec<f64> = h
        .as_slice()
        .iter()
        .zip(h_prev.as_slice())
        .map(|(a, b)| a + b)
        .collect();
    let pre = ernn_pre_activation(p, &z, x);
    let deriv: Vec<f64> = pre.iter().map(|&a| p.activation.derivative(a)).collect();
    let kinks = match p.activation {
        crate::autodiff::Activation::Relu => pre
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 0.0)
            .map(|(i, _)| i)
            .collect(),
        _ => Vec::new(),
    };
    let u = p.effective_u()?;
    let pu = match p.projection {
        Projection::Tied => matmul(&u, &u)?,
        Projection::Identity => u,
    };
    let n = p.hidden_dim();
    let jac = pu
        .scale_rows(&deriv)?
        .sub(&Matrix::identity(n).scale(p.gamma))?;
    Ok((jac, kinks))
}

pub fn residual_jacobian(
    p: &CellParams,
    h: &Vector,
    h_prev: &Vector,
    x: &Vector,
) -> Result<Matrix> {
    residual_jacobian_with_kinks(p, h, h_prev, x).map(|(j, _)| j)
}

/// Damped Newton from h = 0 with step halving until ‖F‖₂ decreases.
pub fn oracle_equilibrium(p: &CellParams, h_prev: &Vector, x: &Vector) -> Result<EquilibriumPoint> {
    require_ernn(p)?;
    let mut h = Vector::zeros(p.hidden_dim());
    let mut f = residual_f(p, &h, h_prev, x)?;
    let mut best = (f.norm_inf(), h.clone());
    for iter in 0..=NEWTON_MAX_ITERS {
        let r = f.norm_inf();
        if r < best.0 {
            best = (r, h.clone());
        }
        if r <= NEWTON_TOL {
            return Ok(EquilibriumPoint {
                h_star: h,
                residual_norm: r,
                newton_iterations: iter,
            });
        }
        if iter == NEWTON_MAX_ITERS {
            break;
        }
        let jac = residual_jacobian(p, &h, h_prev, x)?;
        let step = lu_solve(&jac, &f.scale(-1.0))?;
        let f_norm = f.norm2();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = h.add(&step.scale(t))?;
            if let Ok(fc) = residual_f(p, &cand, h_prev, x) {
                if fc.norm2() < f_norm {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((hn, fnew)) => {
                h = hn;
                f = fnew;
            }
            // No decrease along the Newton direction: rounding floor or a
            // genuinely stuck iterate; either way report the best point.
            None => {
                return Err(Error::NewtonNoConvergence {
                    iterations: iter + 1,
                    best_residual: best.0,
                    best: Box::new(best.1),
                })
            }
        }
    }
    Err(Error::NewtonNoConvergence {
        iterations: NEWTON_MAX_ITERS,
        best_residual: best.0,
        best: Box::new(best.1),
    })
}

/// Runs the cell's K Euler iterations from h⁽⁰⁾ = 0 and measures them
/// against `oracle`.
pub fn iterate_euler(
    p: &CellParams,
    h_prev: &Vector,
    x: &Vector,
    k: usize,
    oracle: &EquilibriumPoint,
) -> Result<ConvergenceReport> {
    iterate_euler_from(p, h_prev, x, k, oracle, &Vector::zeros(p.hidden_dim()))
}

/// As [`iterate_euler`] but starting from `start`.
pub fn iterate_euler_from(
    p: &CellParams,
    h_prev: &Vector,
    x: &Vector,
    k: usize,
    oracle: &EquilibriumPoint,
    start: &Vector,
) -> Result<ConvergenceReport> {
    require_ernn(p)?;
    if k == 0 {
        return Err(Error::invalid("iterate_euler needs K >= 1"));
    }
    let iterates = ernn_iterates(p, h_prev, x, k, start, 0)?;
    let h_star = &oracle.h_star;
    // Newton leaves h* accurate to roughly 1e-14; three more digits keep the
    // ratios meaningful.
    let floor = RATIO_FLOOR * (1.0 + h_star.norm_inf());
    let mut residual_norms = Vec::with_capacity(k + 1);
    let mut oracle_distances = Vec::with_capacity(k + 1);
    let mut descent = Vec::with_capacity(k + 1);
    let mut checks = Vec::with_capacity(k + 1);
    for (i, h) in iterates.iter().enumerate() {
        let f = residual_f(p, h, h_prev, x)?;
        residual_norms.push(f.norm2());
        oracle_distances.push(h.sub(h_star)?.norm2());
        if i < k {
            let eta = p.eta(0, i);
            let jac = residual_jacobian(p, h, h_prev, x)?;
            let jf = jac.matvec(&f)?;
            let lhs = eta * eta * jf.norm2().powi(2) + 2.0 * eta * f.dot(&jf)?;
            descent.push(Some(lhs < 0.0));
            checks.push(Some(spectral_norm(&step_matrix(&jac, eta))));
        } else {
            descent.push(None);
            checks.push(None);
        }
    }
    let contraction_ratios: Vec<Option<f64>> = (0..=k)
        .map(|i| {
            if i < k && oracle_distances[i] > floor && oracle_distances[i + 1] > floor {
                Some(oracle_distances[i + 1] / oracle_distances[i])
            } else {
                None
            }
        })
        .collect();
    let tau_bound = contraction_ratios
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max);
    Ok(ConvergenceReport {
        iterates,
        residual_norms,
        oracle_distances,
        contraction_ratios,
        tau_bound,
        descent_condition_holds: descent,
        contraction_checks: checks,
    })
}

fn step_matrix(jac: &Matrix, eta: f64) -> Matrix {
    Matrix::identity(jac.rows())
        .add(&jac.scale(eta))
        .expect("square jacobian")
}

/// ‖I + η∇F‖₂ at h; the iteration contracts locally when this is below 1.
pub fn contraction_check(
    p: &CellParams,
    h: &Vector,
    h_prev: &Vector,
    x: &Vector,
    eta: f64,
) -> Result<f64> {
    let jac = residual_jacobian(p, h, h_prev, x)?;
    Ok(spectral_norm(&step_matrix(&jac, eta)))
}

/// ∂h*/∂h_prev from ∇F·(J + I) = 0, solved as ∇F·J = −∇F so that a
/// singular ∇F is reported rather than assumed away.
pub fn implicit_state_jacobian(
    p: &CellParams,
    eq: &EquilibriumPoint,
    h_prev: &Vector,
    x: &Vector,
) -> Result<Matrix> {
    if eq.residual_norm > EQUILIBRIUM_TOL {
        return Err(Error::invalid(format!(
            "point is not an equilibrium (residual {:e})",
            eq.residual_norm
        )));
    }
    let jac = residual_jacobian(p, &eq.h_star, h_prev, x)?;
    Lu::factor(&jac)?.solve_matrix(&jac.scale(-1.0))
}

/// Eigenvalues of ∇F at h.
pub fn stability_spectrum(
    p: &CellParams,
    h: &Vector,
    h_prev: &Vector,
    x: &Vector,
) -> Result<Spectrum> {
    eig(&residual_jacobian(p, h, h_prev, x)?)
}

/// The cell unrolled over `seq_len` steps on a fresh tape: input slot 0 is
/// h_0, slots 1..=T are the inputs, state t is marked at step t.
pub fn unroll(p: &CellParams, seq_len: usize, k: usize) -> Tape {
    let mut tape = Tape::new();
    let mut h = tape.input(p.hidden_dim());
    tape.mark_state(0, h);
    for t in 0..seq_len {
        let x = tape.input(p.input_dim());
        h = emit_step(p, &mut tape, h, x, k, t);
        tape.mark_state(t + 1, h);
    }
    tape
}

/// One-step ∂h_k/∂h_{k−1} of the cell as built on the tape.
pub fn unrolled_step_jacobian(
    p: &CellParams,
    h_prev: &Vector,
    x: &Vector,
    k: usize,
) -> Result<Matrix> {
    let mut tape = unroll(p, 1, k);
    tape.forward(&p.param_refs(), &[h_prev.clone(), x.clone()])?;
    tape.state_jacobian(0, 1)
}

/// Spectral norms of ∂h_T/∂h_n for n = 1..T−1, starting from h_0 = 0.
pub fn bptt_norm_profile(p: &CellParams, inputs: &[Vector], k: usize) -> Result<Vec<f64>> {
    let t = inputs.len();
    if t < 2 {
        return Err(Error::invalid("bptt profile needs T >= 2"));
    }
    let mut tape = unroll(p, t, k);
    let mut feed = Vec::with_capacity(t + 1);
    feed.push(Vector::zeros(p.hidden_dim()));
    feed.extend(inputs.iter().cloned());
    tape.forward(&p.param_refs(), &feed)?;
    Ok(tape
        .state_jacobians_into(t)?
        .into_iter()
        .filter(|(n, _)| *n >= 1)
        .map(|(_, j)| spectral_norm(&j))
        .collect())
}
