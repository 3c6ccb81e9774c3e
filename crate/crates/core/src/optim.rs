//! Projected gradient descent with backtracking, shared by the MLE and the
//! phase-retrieval baselines.

use crate::linalg::{c, CMat};
use crate::metrics::procrustes_rel_change;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    RelTol,
    /// No step size decreased the objective.
    NoDescent,
}

#[derive(Debug, Clone, Copy)]
pub struct DescentSettings {
    pub initial_step: f64,
    /// Frobenius-ball radius; `None` leaves the iterate unconstrained.
    pub radius: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub x: CMat,
    pub value: f64,
    pub iterations: usize,
    pub rel_change: f64,
    pub stop: StopReason,
    /// Objective at the initial point and after each accepted step.
    pub trace: Vec<f64>,
}

/// Largest step relative to the initial one.
const MAX_GROWTH: f64 = 1048576.0;

fn project(x: &mut CMat, radius: Option<f64>) {
    if let Some(r) = radius {
        let n = x.norm();
        if n > r {
            x.scale_mut(r / n);
        }
    }
}

/// Minimizes `f` from `x0`. Each iteration halves the step until the
/// objective does not increase, then doubles it while the objective keeps
/// strictly decreasing; the next iteration starts from twice that step. Stops when the phase/unitary-aligned relative change drops below
/// `rel_tol`.
pub fn descend<V, G>(value: V, value_grad: G, x0: CMat, s: &DescentSettings) -> Result<DescentResult>
where
    V: Fn(&CMat) -> Result<f64>,
    G: Fn(&CMat) -> Result<(f64, CMat)>,
{
    let mut x = x0;
    project(&mut x, s.radius);
    let (mut f, mut g) = value_grad(&x)?;
    if !f.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            detail: format!("objective is {f} at the initial point"),
        });
    }
    let mut step = s.initial_step;
    let cap = s.initial_step * MAX_GROWTH;
    let mut trace = vec![f];
    let mut rel = f64::INFINITY;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;
    for it in 1..=s.max_iters {
        iterations = it;
        let mut accepted = None;
        for _ in 0..=s.max_halvings {
            let mut trial = &x - &g * c(step, 0.0);
            project(&mut trial, s.radius);
            let ft = value(&trial)?;
            if !ft.is_finite() {
                return Err(Error::Numerical {
                    iteration: it,
                    detail: format!("objective is {ft} at a trial point"),
                });
            }
            if ft <= f {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        // Forward tracking: keep doubling while the objective strictly improves.
        if let Some((_, mut best)) = accepted.clone() {
            while step < cap {
                let bigger = (step * 2.0).min(cap);
                let mut trial = &x - &g * c(bigger, 0.0);
                project(&mut trial, s.radius);
                let ft = value(&trial)?;
                if !(ft.is_finite() && ft < best) {
                    break;
                }
                step = bigger;
                best = ft;
                accepted = Some((trial, ft));
            }
        }
        let Some((x_new, _)) = accepted else {
            stop = StopReason::NoDescent;
            rel = 0.0;
            break;
        };
        rel = if x.norm() == 0.0 {
            if x_new.norm() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            procrustes_rel_change(&x_new, &x)?
        };
        x = x_new;
        let (fv, gv) = value_grad(&x)?;
        f = fv;
        g = gv;
        trace.push(f);
        step = (step * 2.0).min(cap);
        if rel < s.rel_tol {
            stop = StopReason::RelTol;
            break;
        }
    }
    Ok(DescentResult {
        x,
        value: f,
        iterations,
        rel_change: rel,
        stop,
        trace,
    })
}
