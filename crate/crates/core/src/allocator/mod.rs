//! Per-cell power allocation: projected dual gradient, uniform baseline,
//! feasibility projection, and the exact joint association enumerator.

mod dual;
mod exact;
mod system;

pub use dual::{per_cell_dual_gradient, per_cell_dual_gradient_traced, write_trace_csv, TraceRow};
pub use exact::{exact_joint_enumeration, count_branches, EnumeratorParams, ExactSolution};
pub use system::{
    heuristic_pipeline, InterferenceModel, Network, PhyModel, Scenario, SystemAllocation, SystemRates,
};

use serde::{Deserialize, Serialize};

/// Floor on a user's rate inside the log utility, bit/s.
pub const RATE_FLOOR_BPS: f64 = 1.0;

/// Per-cell concave problem at frozen interference.
///
/// User `i` gets `R_i(P) = rate_scale[i] * ln(1 + coeff[i] * P)` bit/s,
/// where `coeff` is the SINR-argument per watt (including `e / 2 pi`) and
/// `rate_scale = duty * B / ln 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProblem {
    pub budget_w: f64,
    pub coeff: Vec<f64>,
    pub rate_scale: Vec<f64>,
    pub p_min_w: Vec<f64>,
    pub p_max_w: Vec<f64>,
}

impl CellProblem {
    pub fn len(&self) -> usize {
        self.coeff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff.is_empty()
    }

    pub fn rate(&self, i: usize, p: f64) -> f64 {
        self.rate_scale[i] * (self.coeff[i] * p.max(0.0)).ln_1p()
    }

    /// `sum ln R_u`, rates floored at [`RATE_FLOOR_BPS`].
    pub fn utility(&self, powers: &[f64]) -> f64 {
        powers.iter().enumerate().map(|(i, &p)| self.rate(i, p).max(RATE_FLOOR_BPS).ln()).sum()
    }

    /// Power actually committed at the optimum: the budget, or less if every
    /// user can sit at its upper bound.
    pub fn committed_w(&self) -> f64 {
        self.budget_w.min(self.p_max_w.iter().sum())
    }

    pub fn admission_feasible(&self) -> bool {
        self.p_min_w.iter().sum::<f64>() <= self.budget_w * (1.0 + 1e-12)
    }
}

/// Lagrange multipliers of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub omega: f64,
    pub beta_max: Vec<f64>,
    pub beta_min: Vec<f64>,
}

impl Duals {
    pub fn zero(n: usize) -> Self {
        Self { omega: 0.0, beta_max: vec![0.0; n], beta_min: vec![0.0; n] }
    }
}

/// Penalized per-cell Lagrangian
/// `sum ln R_u - omega (sum P - P^c) - sum beta_max (P - P_max) - sum beta_min (P_min - P)`.
pub fn cell_utility(powers: &[f64], problem: &CellProblem, duals: &Duals) -> f64 {
    let total: f64 = powers.iter().sum();
    let mut v = problem.utility(powers) - duals.omega * (total - problem.budget_w);
    for (i, &p) in powers.iter().enumerate() {
        v -= duals.beta_max[i] * (p - problem.p_max_w[i]);
        v -= duals.beta_min[i] * (problem.p_min_w[i] - p);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    /// Initial budget-multiplier step; `None` calibrates it per cell.
    pub phi0_omega: Option<f64>,
    /// Initial bound-multiplier step; `None` means `1 / max P_max`.
    pub phi0_beta: Option<f64>,
    pub max_iters: usize,
    /// Relative KKT residual tolerance.
    pub tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { phi0_omega: None, phi0_beta: None, max_iters: 5000, tol: 1e-6 }
    }
}

impl SolverParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok_step = |s: Option<f64>| s.is_none_or(|v| v > 0.0 && v.is_finite());
        if !ok_step(self.phi0_omega) || !ok_step(self.phi0_beta) {
            return Err(crate::Error::Config("solver step sizes must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(crate::Error::Config("solver needs tol > 0 and max_iters > 0".into()));
        }
        Ok(())
    }
}

/// Power allocation for the users of one cell, in the cell's user order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub power_w: Vec<f64>,
    pub consumed_w: f64,
    pub duals: Duals,
    pub iterations: usize,
    pub converged: bool,
    /// `sum P_min` exceeded the budget; powers are `P_min` scaled down.
    pub admission_infeasible: bool,
    /// `sum ln R_u` at `power_w`.
    pub objective: f64,
}

impl PowerAllocation {
    pub(crate) fn from_powers(problem: &CellProblem, power_w: Vec<f64>, iterations: usize, converged: bool) -> Self {
        let objective = problem.utility(&power_w);
        Self {
            consumed_w: power_w.iter().sum(),
            duals: Duals::zero(power_w.len()),
            power_w,
            iterations,
            converged,
            admission_infeasible: !problem.admission_feasible(),
            objective,
        }
    }
}

/// Bounds and budget hold to within `tol` watts.
pub fn is_feasible(power_w: &[f64], problem: &CellProblem, tol: f64) -> bool {
    let total: f64 = power_w.iter().sum();
    total <= problem.budget_w + tol
        && power_w
            .iter()
            .enumerate()
            .all(|(i, &p)| p >= problem.p_min_w[i] - tol && p <= problem.p_max_w[i] + tol)
}

/// Euclidean projection of `y` onto `{lo <= P <= hi, sum P = total}`.
///
/// When `sum lo > total` the bounds cannot hold and `lo` is scaled down to
/// `total` instead.
pub fn project_onto_face(y: &[f64], lo: &[f64], hi: &[f64], total: f64) -> Vec<f64> {
    let n = y.len();
    let sum_lo: f64 = lo.iter().sum();
    let sum_hi: f64 = hi.iter().sum();
    if n == 0 {
        return vec![];
    }
    if sum_lo >= total {
        let s = if sum_lo > 0.0 { total.max(0.0) / sum_lo } else { 0.0 };
        return lo.iter().map(|&l| l * s).collect();
    }
    if sum_hi <= total {
        return hi.to_vec();
    }
    let g = |tau: f64| -> f64 { (0..n).map(|i| (y[i] - tau).clamp(lo[i], hi[i])).sum() };
    // g is nonincreasing and piecewise linear with kinks at y - hi and y - lo.
    let mut kinks: Vec<f64> = (0..n).flat_map(|i| [y[i] - hi[i], y[i] - lo[i]]).collect();
    kinks.sort_by(f64::total_cmp);
    let mut k = 0;
    while k + 1 < kinks.len() && g(kinks[k + 1]) > total {
        k += 1;
    }
    let (a, b) = (kinks[k], kinks[(k + 1).min(kinks.len() - 1)]);
    let (ga, gb) = (g(a), g(b));
    let tau = if ga > gb { a + (ga - total) * (b - a) / (ga - gb) } else { a };
    let mut p: Vec<f64> = (0..n).map(|i| (y[i] - tau).clamp(lo[i], hi[i])).collect();
    // absorb rounding in a free coordinate
    let err = total - p.iter().sum::<f64>();
    if let Some(i) = (0..n).find(|&i| p[i] + err >= lo[i] && p[i] + err <= hi[i] && p[i] > lo[i] && p[i] < hi[i]) {
        p[i] += err;
    }
    p
}

/// Equal split of the budget, clamped to the bounds; if the clamp overshoots
/// the budget the split is projected back down.
pub fn uniform_allocation(problem: &CellProblem) -> PowerAllocation {
    let n = problem.len();
    if n == 0 {
        return PowerAllocation::from_powers(problem, vec![], 0, true);
    }
    let share = problem.budget_w / n as f64;
    let mut p: Vec<f64> = (0..n).map(|i| share.clamp(problem.p_min_w[i], problem.p_max_w[i])).collect();
    if p.iter().sum::<f64>() > problem.budget_w {
        p = project_onto_face(&p, &problem.p_min_w, &problem.p_max_w, problem.budget_w);
    }
    PowerAllocation::from_powers(problem, p, 0, true)
}

/// Project arbitrary per-user powers (e.g. a network output) onto the cell's
/// committed-budget face.
pub fn project_allocation(problem: &CellProblem, raw_w: &[f64]) -> PowerAllocation {
    let p = project_onto_face(raw_w, &problem.p_min_w, &problem.p_max_w, problem.committed_w());
    PowerAllocation::from_powers(problem, p, 0, true)
}
