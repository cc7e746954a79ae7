//! Box-constrained projected quasi-Newton descent.
//!
//! Single shooting leaves only the input bounds `|u| <= u_bound` as
//! constraints, so each iterate is projected back onto the box. Curvature
//! comes from a BFGS inverse-Hessian approximation restricted to the
//! variables that are not held at an active bound, and steps are accepted by
//! an Armijo backtracking search along the projected path.

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{GradientMethod, InputSequence, ShootingProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop when the projected-gradient infinity norm falls below
    /// `kkt_tol_rel * (1 + |J|)`.
    pub kkt_tol_rel: f64,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
    /// Largest move of any input on the first (steepest-descent) step, volts.
    pub initial_step_v: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iter: 50, kkt_tol_rel: 1e-6, armijo_c1: 1e-4, max_backtracks: 30, initial_step_v: 10.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_backtracks == 0 {
            return Err(Error::invalid("ocp.solver.max_backtracks", "must be >= 1"));
        }
        crate::plant::positive("ocp.solver.kkt_tol_rel", self.kkt_tol_rel)?;
        crate::plant::positive("ocp.solver.initial_step_v", self.initial_step_v)?;
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::invalid("ocp.solver.armijo_c1", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// The line search found no acceptable step, even along steepest descent.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub useq_opt: InputSequence,
    pub j_opt: f64,
    /// Cost at the (projected) starting point.
    pub j_init: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub solve_time_s: f64,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn project(x: &mut [f64], bound: f64) {
    for v in x.iter_mut() {
        *v = v.clamp(-bound, bound);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bound: f64) -> f64 {
    x.iter()
        .zip(g)
        .map(|(xi, gi)| (xi - (xi - gi).clamp(-bound, bound)).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense inverse-Hessian approximation.
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
    updated: bool,
}

impl InverseHessian {
    fn identity(n: usize) -> Self {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        Self { n, h, updated: false }
    }

    fn reset(&mut self) {
        *self = Self::identity(self.n);
    }

    /// `-H_FF g_F` on the free set, zero elsewhere.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                if !free[i] {
                    return 0.0;
                }
                -(0..n).filter(|&j| free[j]).map(|j| self.h[i * n + j] * g[j]).sum::<f64>()
            })
            .collect()
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let n = self.n;
        let sy = dot(s, y);
        if !(sy > 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt()) {
            return;
        }
        if !self.updated {
            let gamma = sy / dot(y, y);
            for v in self.h.iter_mut() {
                *v *= gamma;
            }
            self.updated = true;
        }
        let rho = 1.0 / sy;
        // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
        let hy: Vec<f64> = (0..n).map(|i| dot(&self.h[i * n..(i + 1) * n], y)).collect();
        let yhy = dot(y, &hy);
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                    + (rho * rho * yhy + rho) * s[i] * s[j];
            }
        }
    }
}

/// Minimize the shooting cost over `|u| <= problem.u_bound()` starting from
/// `u_init` (projected onto the box first). The best iterate is returned even
/// when the iteration cap is hit or the line search stalls.
pub fn solve(
    problem: &ShootingProblem,
    u_init: &InputSequence,
    cfg: &SolverConfig,
    gradient: &dyn GradientMethod,
) -> Result<SolveResult> {
    let start = Instant::now();
    let n = problem.dim();
    if u_init.values().len() != n {
        return Err(Error::HorizonMismatch { expected: n, actual: u_init.values().len() });
    }
    let bound = problem.u_bound();
    let mut x = u_init.values().to_vec();
    project(&mut x, bound);

    let (mut f, mut g) = gradient.cost_and_gradient(problem, &x)?;
    let j_init = f;
    let mut hess = InverseHessian::identity(n);
    let mut iterations = 0;
    let mut kkt = projected_gradient_norm(&x, &g, bound);
    let status = loop {
        if kkt <= cfg.kkt_tol_rel * (1.0 + f.abs()) {
            break SolveStatus::Converged;
        }
        if iterations >= cfg.max_iter {
            break SolveStatus::MaxIterations;
        }
        iterations += 1;

        let at_bound = 1e-12 * bound;
        let free: Vec<bool> = x
            .iter()
            .zip(&g)
            .map(|(xi, gi)| !((*xi <= -bound + at_bound && *gi > 0.0) || (*xi >= bound - at_bound && *gi < 0.0)))
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = hess.direction(&g, &free);
            if !hess.updated || dot(&g, &d) >= 0.0 {
                hess.reset();
                d = hess.direction(&g, &free);
                let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if dmax > cfg.initial_step_v {
                    let scale = cfg.initial_step_v / dmax;
                    d.iter_mut().for_each(|v| *v *= scale);
                }
            }
            if let Some(step) = line_search(problem, &x, f, &g, &d, bound, cfg) {
                accepted = Some(step);
                break;
            }
            if attempt == 0 && hess.updated {
                debug!("line search failed on quasi-Newton direction; restarting from steepest descent");
                hess.reset();
            } else {
                break;
            }
        }
        let Some((x_new, f_new)) = accepted else {
            break SolveStatus::Diverged;
        };
        let (f_chk, g_new) = gradient.cost_and_gradient(problem, &x_new)?;
        debug_assert!((f_chk - f_new).abs() <= 1e-9 * (1.0 + f_new.abs()));
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        hess.update(&s, &y);
        x = x_new;
        f = f_new;
        g = g_new;
        kkt = projected_gradient_norm(&x, &g, bound);
    };

    Ok(SolveResult {
        useq_opt: InputSequence::new(problem.mode(), x)?,
        j_opt: f,
        j_init,
        iterations,
        status,
        kkt_residual: kkt,
        solve_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Armijo backtracking along the projected path `P(x + alpha d)`.
fn line_search(
    problem: &ShootingProblem,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    bound: f64,
    cfg: &SolverConfig,
) -> Option<(Vec<f64>, f64)> {
    let mut alpha = 1.0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..cfg.max_backtracks {
        for i in 0..x.len() {
            trial[i] = x[i] + alpha * d[i];
        }
        project(&mut trial, bound);
        let decrease: f64 = trial.iter().zip(x).zip(g).map(|((t, xi), gi)| gi * (t - xi)).sum();
        if decrease >= 0.0 {
            // the projected step no longer points downhill
            alpha *= 0.5;
            continue;
        }
        // a collapsed prediction counts as infinite cost
        if let Ok(ft) = problem.cost(&trial) {
            if ft <= f + cfg.armijo_c1 * decrease {
                return Some((trial, ft));
            }
        }
        alpha *= 0.5;
    }
    None
}
