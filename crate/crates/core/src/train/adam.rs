use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments shaped like `sizes`.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }
}

/// One bias-corrected Adam update. On a non-finite gradient or update the
/// parameters and moments are left as they were.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam got {} parameter blocks, {} gradients, {} moment blocks",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(Error::invalid(format!("adam shape mismatch in block {k}")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::overflow(format!("gradient of parameter block {k}")));
        }
    }
    let t = state.t + 1;
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    let mut next_m = state.m.clone();
    let mut next_v = state.v.clone();
    let mut next_p: Vec<Vec<f64>> = Vec::with_capacity(params.len());
    for (k, g) in grads.iter().enumerate() {
        let mut out = params[k].to_vec();
        for j in 0..g.len() {
            let m = BETA1 * next_m[k][j] + (1.0 - BETA1) * g[j];
            let v = BETA2 * next_v[k][j] + (1.0 - BETA2) * g[j] * g[j];
            next_m[k][j] = m;
            next_v[k][j] = v;
            out[j] -= lr * (m / c1) / ((v / c2).sqrt() + EPSILON);
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::overflow(format!(
                "adam update of parameter block {k}"
            )));
        }
        next_p.push(out);
    }
    for (p, n) in params.iter_mut().zip(next_p) {
        p.copy_from_slice(&n);
    }
    state.m = next_m;
    state.v = next_v;
    state.t = t;
    Ok(())
}
