use std::io::Write;

use super::{project_onto_face, CellProblem, Duals, PowerAllocation, SolverParams};

/// One solver iteration, for convergence plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub omega: f64,
    pub beta_residual: f64,
    /// Best feasible objective so far.
    pub objective: f64,
}

pub fn write_trace_csv<W: Write>(out: &mut W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "iteration,omega,beta_residual,objective")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iteration, r.omega, r.beta_residual, r.objective)?;
    }
    Ok(())
}

/// Principal branch of the Lambert W function for `k >= 0`.
fn lambert_w0(k: f64) -> f64 {
    if k <= 0.0 {
        return 0.0;
    }
    let l = k.ln_1p();
    let mut w = l * (1.0 - (l.ln_1p()) / (2.0 + l));
    for _ in 0..64 {
        let e = w.exp();
        let f = w * e - k;
        let wp1 = w + 1.0;
        let dw = f / (e * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= dw;
        if dw.abs() <= 1e-15 * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Marginal log-utility `a / ((1 + a P) ln(1 + a P))`.
fn marginal(a: f64, p: f64) -> f64 {
    let x = a * p;
    if x <= 0.0 {
        return f64::INFINITY;
    }
    a / ((1.0 + x) * x.ln_1p())
}

/// Maximizer of `ln ln(1 + a P) - price * P` over `[lo, hi]`.
fn best_response(a: f64, price: f64, lo: f64, hi: f64) -> f64 {
    if a <= 0.0 {
        return lo;
    }
    if price <= 0.0 {
        return hi;
    }
    // (1 + aP) ln(1 + aP) = a / price  =>  ln(1 + aP) = W(a / price)
    (lambert_w0(a / price).exp_m1() / a).clamp(lo, hi)
}

fn respond(problem: &CellProblem, duals: &Duals, out: &mut [f64]) {
    for (i, p) in out.iter_mut().enumerate() {
        let price = duals.omega + duals.beta_max[i] - duals.beta_min[i];
        *p = best_response(problem.coeff[i], price, problem.p_min_w[i], problem.p_max_w[i]);
    }
}

pub fn per_cell_dual_gradient(problem: &CellProblem, params: &SolverParams) -> PowerAllocation {
    per_cell_dual_gradient_traced(problem, params, None)
}

/// Projected dual gradient on the budget and bound multipliers.
///
/// The primal step maximizes the Lagrangian in closed form per user. The
/// budget multiplier takes diminishing steps `phi0 / sqrt(i)`, kept inside a
/// bracket `[omega_lo, omega_hi]` that must halve every two iterations or the
/// step falls back to bisection. The best projected-feasible iterate is
/// returned.
pub fn per_cell_dual_gradient_traced(
    problem: &CellProblem,
    params: &SolverParams,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> PowerAllocation {
    let n = problem.len();
    if n == 0 {
        return PowerAllocation::from_powers(problem, vec![], 0, true);
    }
    let budget = problem.budget_w;
    if !problem.admission_feasible() {
        let p = project_onto_face(&problem.p_min_w, &problem.p_min_w, &problem.p_max_w, budget);
        return PowerAllocation::from_powers(problem, p, 0, false);
    }
    let mut duals = Duals::zero(n);
    let mut p = vec![0.0; n];
    respond(problem, &duals, &mut p);
    if p.iter().sum::<f64>() <= budget {
        let mut a = PowerAllocation::from_powers(problem, p, 1, true);
        a.duals = duals;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow { iteration: 1, omega: 0.0, beta_residual: 0.0, objective: a.objective });
        }
        return a;
    }

    // At omega_hi every user sits at P_min, which fits the budget.
    let mut omega_hi = (0..n)
        .map(|i| marginal(problem.coeff[i], problem.p_min_w[i]))
        .filter(|m| m.is_finite())
        .fold(0.0, f64::max);
    if omega_hi == 0.0 || {
        let mut q = vec![0.0; n];
        respond(problem, &Duals { omega: omega_hi, ..Duals::zero(n) }, &mut q);
        q.iter().sum::<f64>() > budget
    } {
        omega_hi = omega_hi.max(1.0);
        let mut q = vec![0.0; n];
        for _ in 0..2048 {
            respond(problem, &Duals { omega: omega_hi, ..Duals::zero(n) }, &mut q);
            if q.iter().sum::<f64>() <= budget {
                break;
            }
            omega_hi *= 2.0;
        }
    }
    let phi0_omega = params.phi0_omega.unwrap_or(omega_hi / budget);
    let max_hi = problem.p_max_w.iter().copied().fold(0.0, f64::max);
    let phi0_beta = params.phi0_beta.unwrap_or(if max_hi > 0.0 { 1.0 / max_hi } else { 1.0 });
    let committed = problem.committed_w();

    let mut bracket: (f64, f64) = (0.0, omega_hi);
    let mut widths = [f64::INFINITY; 2];
    let mut best_obj = f64::NEG_INFINITY;
    let mut best_p = p.clone();
    let mut converged = false;
    let mut iterations = 0;

    for i in 1..=params.max_iters {
        iterations = i;
        respond(problem, &duals, &mut p);
        let g = p.iter().sum::<f64>() - budget;
        if g > 0.0 {
            bracket.0 = bracket.0.max(duals.omega);
        } else {
            bracket.1 = bracket.1.min(duals.omega);
        }

        let proj = project_onto_face(&p, &problem.p_min_w, &problem.p_max_w, committed);
        let obj = problem.utility(&proj);
        if obj > best_obj {
            best_obj = obj;
            best_p = proj;
        }

        let mut beta_res: f64 = 0.0;
        for k in 0..n {
            beta_res = beta_res
                .max((duals.beta_max[k] * (p[k] - problem.p_max_w[k])).abs())
                .max((duals.beta_min[k] * (problem.p_min_w[k] - p[k])).abs());
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow { iteration: i, omega: duals.omega, beta_residual: beta_res, objective: best_obj });
        }

        let scale = best_obj.abs().max(1.0);
        let primal = if duals.omega > 0.0 { g.abs() } else { g.max(0.0) } / budget;
        let slack = (duals.omega * g).abs() / scale;
        if primal <= params.tol && slack <= params.tol && beta_res <= params.tol * scale {
            converged = true;
            break;
        }
        let width = bracket.1 - bracket.0;
        if width <= 4.0 * f64::EPSILON * bracket.1 {
            converged = true;
            break;
        }

        let step = 1.0 / (i as f64).sqrt();
        for k in 0..n {
            duals.beta_max[k] = (duals.beta_max[k] + phi0_beta * step * (p[k] - problem.p_max_w[k])).max(0.0);
            duals.beta_min[k] = (duals.beta_min[k] + phi0_beta * step * (problem.p_min_w[k] - p[k])).max(0.0);
        }
        let cand = (duals.omega + phi0_omega * step * g).max(0.0);
        let stalled = width > 0.5 * widths[0];
        widths = [widths[1], width];
        duals.omega = if cand > bracket.0 && cand < bracket.1 && !stalled {
            cand
        } else {
            0.5 * (bracket.0 + bracket.1)
        };
    }

    let mut a = PowerAllocation::from_powers(problem, best_p, iterations, converged);
    a.duals = duals;
    a
}
