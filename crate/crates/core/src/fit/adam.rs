//! First/second-moment adaptive gradient descent with monotone acceptance:
//! a proposed iterate that raises the (frozen-sample) loss is rejected and
//! the step size halved, down to a floor.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdamParams {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_floor: f64,
}

pub(crate) struct Adam {
    pub cfg: AdamParams,
    pub step: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamParams) -> Adam {
        Adam {
            cfg,
            step: cfg.step,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Folds `grad` into the moments and writes the proposed iterate.
    pub fn propose(&mut self, params: &[f64], grad: &[f64], out: &mut [f64]) {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = self.step;
        let eps = self.cfg.epsilon;
        out.par_chunks_mut(65536)
            .zip(params.par_chunks(65536))
            .zip(grad.par_chunks(65536))
            .zip(self.m.par_chunks_mut(65536))
            .zip(self.v.par_chunks_mut(65536))
            .for_each(|((((out, p), g), m), v)| {
                for i in 0..out.len() {
                    if g[i] == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                        out[i] = p[i];
                        continue;
                    }
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    out[i] = p[i] - step * mh / (vh.sqrt() + eps);
                }
            });
    }

    /// Re-proposes from the already-updated moments (after a halving),
    /// without folding the gradient in again.
    pub fn repropose(&self, params: &[f64], grad: &[f64], out: &mut [f64]) {
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let step = self.step;
        let eps = self.cfg.epsilon;
        out.par_chunks_mut(65536)
            .zip(params.par_chunks(65536))
            .zip(grad.par_chunks(65536))
            .zip(self.m.par_chunks(65536))
            .zip(self.v.par_chunks(65536))
            .for_each(|((((out, p), g), m), v)| {
                for i in 0..out.len() {
                    if g[i] == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                        out[i] = p[i];
                        continue;
                    }
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    out[i] = p[i] - step * mh / (vh.sqrt() + eps);
                }
            });
    }

    /// Undoes the last `propose` moment update (used when an iterate is
    /// rejected outright).
    pub fn rollback(&mut self, grad: &[f64]) {
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        self.m
            .par_chunks_mut(65536)
            .zip(self.v.par_chunks_mut(65536))
            .zip(grad.par_chunks(65536))
            .for_each(|((m, v), g)| {
                for i in 0..m.len() {
                    if g[i] == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                        continue;
                    }
                    m[i] = (m[i] - (1.0 - b1) * g[i]) / b1;
                    v[i] = ((v[i] - (1.0 - b2) * g[i] * g[i]) / b2).max(0.0);
                }
            });
        self.t -= 1;
    }

    /// Halves the step; returns false once the floor is reached.
    pub fn halve(&mut self) -> bool {
        let next = self.step * 0.5;
        if next < self.cfg.step_floor {
            return false;
        }
        self.step = next;
        true
    }
}

pub(crate) struct MinimizeOutcome {
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Shared outer loop: evaluate loss+gradient, propose, accept when the loss
/// (under the same per-iteration sampling) does not increase, otherwise halve
/// the step and retry. Stops on the relative-change window or the iteration
/// cap.
///
/// `eval(params, iter, want_grad)` returns the loss and, when asked, the
/// gradient. A gradient evaluation and a value-only evaluation at the same
/// `iter` must use identical sampling.
#[allow(clippy::too_many_arguments)]
pub(crate) fn minimize<E>(
    params: &mut Vec<f64>,
    adam_cfg: AdamParams,
    max_iters: usize,
    tol_rel_change: f64,
    tol_window: usize,
    project: impl Fn(&mut [f64]),
    mut eval: E,
) -> crate::Result<MinimizeOutcome>
where
    E: FnMut(&[f64], usize, bool) -> crate::Result<(f64, Option<Vec<f64>>)>,
{
    let n = params.len();
    let mut adam = Adam::new(n, adam_cfg);
    let mut candidate = vec![0.0; n];
    let mut trace = Vec::with_capacity(max_iters);
    let mut converged = false;

    for iter in 0..max_iters {
        let (loss, grad) = eval(params, iter, true)?;
        if !loss.is_finite() {
            return Err(crate::CoreError::Diverged {
                iteration: iter,
                detail: format!("non-finite loss {loss}"),
            });
        }
        let grad = grad.expect("gradient requested");

        adam.propose(params, &grad, &mut candidate);
        project(&mut candidate);
        let mut accepted = false;
        loop {
            let (cand_loss, _) = eval(&candidate, iter, false)?;
            if cand_loss.is_finite() && cand_loss <= loss {
                std::mem::swap(params, &mut candidate);
                trace.push(cand_loss);
                accepted = true;
                break;
            }
            if !adam.halve() {
                break;
            }
            adam.repropose(params, &grad, &mut candidate);
            project(&mut candidate);
        }
        if !accepted {
            // keep the current iterate; new sampling next iteration may move
            adam.rollback(&grad);
            trace.push(loss);
        }

        if trace.len() > tol_window {
            let prev = trace[trace.len() - 1 - tol_window];
            let cur = trace[trace.len() - 1];
            if (prev - cur).abs() / prev.abs().max(1e-12) < tol_rel_change {
                converged = true;
                break;
            }
        }
    }

    Ok(MinimizeOutcome { trace, converged })
}
