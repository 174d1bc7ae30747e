use serde::{Deserialize, Serialize};

use super::{per_cell_dual_gradient, CellProblem, PowerAllocation, SolverParams, RATE_FLOOR_BPS};
use crate::association::{associate_active, AssociationMap, AssociationParams};
use crate::optics::{
    grouped_zf_gains, intercell_interference, noise_psd, zf_effective_gains, BeamModel, ChannelState, NoiseModel, ReceiverModel, ZfGains,
    RATE_BOUND_FACTOR,
};
use crate::topology::{Point, Topology};
use crate::{Error, Result};

/// What the other cells radiate when computing a user's interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceModel {
    /// Every other cell transmits its whole budget.
    #[default]
    FullLoad,
    /// Other cells transmit what they allocated, resolved by Gauss-Seidel sweeps.
    Transmitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyModel {
    pub beam: BeamModel,
    pub rx: ReceiverModel,
    pub noise: NoiseModel,
    pub interference: InterferenceModel,
    /// Outer sweeps for [`InterferenceModel::Transmitted`].
    pub sweeps: usize,
    /// Minimum ZF-to-channel-norm gain ratio for sharing a time slot; 0 puts
    /// every user in one ZF group (round-robin only when overloaded).
    pub zf_min_gain_ratio: f64,
}

impl Default for PhyModel {
    fn default() -> Self {
        Self::for_link_height(3.0)
    }
}

impl PhyModel {
    /// Beam shaped to a 0.6 m spot radius at the receiver plane.
    pub fn for_link_height(link_height_m: f64) -> Self {
        let v = BeamModel::VCSEL;
        Self {
            beam: BeamModel::with_spot_radius(0.6, link_height_m, v.wavelength_m, v.lens_index),
            rx: ReceiverModel::default(),
            noise: NoiseModel::default(),
            interference: InterferenceModel::FullLoad,
            sweeps: 1,
            zf_min_gain_ratio: 0.5,
        }
    }
}

/// One snapshot: receiver positions, activity, demands and the SNR knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<Point>,
    pub active: Vec<bool>,
    pub p_min_w: Vec<f64>,
    pub p_max_w: Vec<f64>,
    pub snr_db: f64,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.users.len();
        if self.active.len() != n || self.p_min_w.len() != n || self.p_max_w.len() != n {
            return Err(Error::Config("scenario vectors differ in length".into()));
        }
        for u in 0..n {
            if !(self.p_min_w[u] >= 0.0 && self.p_min_w[u] <= self.p_max_w[u]) {
                return Err(Error::Config(format!("user {u}: need 0 <= p_min <= p_max")));
            }
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Ok(())
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Allocation over the whole network, indexed by user and by cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAllocation {
    /// Per-user power, zero for unserved users.
    pub power_w: Vec<f64>,
    /// Per-cell result, `None` for cells without users.
    pub cells: Vec<Option<PowerAllocation>>,
    pub cell_tx_w: Vec<f64>,
    /// Some cell's Gram matrix needed the ridge.
    pub regularized: bool,
}

impl SystemAllocation {
    pub fn admission_infeasible(&self) -> bool {
        self.cells.iter().flatten().any(|c| c.admission_infeasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRates {
    /// `sum ln R_u` over served users.
    pub utility: f64,
    pub sum_rate_bps: f64,
    pub per_user_bps: Vec<f64>,
    pub served: usize,
}

/// Channel, noise and interference context for evaluating one scenario on
/// one topology.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub phy: PhyModel,
    pub scenario: Scenario,
    pub channel: ChannelState,
    /// Electrical noise variance per user after the SNR scaling.
    pub noise_var: Vec<f64>,
    pub noise_scale: f64,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl Network {
    /// Noise is scaled by one factor so that the median active user's
    /// best-AP SNR `(R h_max)^2 p_ap / v^2` equals `snr_db`.
    pub fn new(topology: &Topology, phy: &PhyModel, scenario: &Scenario) -> Self {
        let mut net = Self::with_noise_scale(topology, phy, scenario, 1.0);
        let p_ap = topology.aps.iter().map(|a| a.tx_power_w).sum::<f64>() / topology.aps.len().max(1) as f64;
        let snr: Vec<f64> = (0..scenario.len())
            .filter(|&u| scenario.active[u])
            .map(|u| (phy.rx.responsivity_a_per_w * net.channel.best_ap_gain(u)).powi(2) * p_ap / net.noise_var[u])
            .filter(|s| s.is_finite() && *s > 0.0)
            .collect();
        let target = 10f64.powf(scenario.snr_db / 10.0);
        let scale = median(snr).map(|m| m / target).unwrap_or(1.0);
        net.noise_var.iter_mut().for_each(|v| *v *= scale);
        net.noise_scale = scale;
        net
    }

    /// Noise variance scaled by a fixed factor instead of calibrating to
    /// `snr_db`; keeps noise comparable across snapshots of one trace.
    pub fn with_noise_scale(topology: &Topology, phy: &PhyModel, scenario: &Scenario, noise_scale: f64) -> Self {
        let channel = ChannelState::compute(topology, &scenario.users, &phy.beam, &phy.rx);
        let b = phy.noise.bandwidth_hz;
        let noise_var = (0..scenario.len())
            .map(|u| {
                let p_rx: f64 = topology.aps.iter().map(|a| channel.gains[u][a.id] * a.tx_power_w).sum();
                noise_psd(p_rx, &phy.noise, &phy.rx).total() * b * noise_scale
            })
            .collect();
        Self { topology: topology.clone(), phy: phy.clone(), scenario: scenario.clone(), channel, noise_var, noise_scale }
    }

    pub fn cells(&self) -> usize {
        self.topology.cells().len()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.topology.cells().iter().map(|c| c.budget_w).collect()
    }

    /// Heuristic association of the active users.
    pub fn associate(&self, params: &AssociationParams) -> AssociationMap {
        associate_active(&self.scenario.users, &self.scenario.active, &self.topology.partition, params)
    }

    /// ZF schedule and gains of `users` in `cell`.
    pub fn zf_gains(&self, cell: usize, users: &[usize]) -> ZfGains {
        let c = &self.topology.cells()[cell];
        if self.phy.zf_min_gain_ratio > 0.0 {
            grouped_zf_gains(c, users, &self.channel.gains, self.phy.zf_min_gain_ratio)
        } else {
            zf_effective_gains(c, users, &self.channel.gains)
        }
    }

    /// Concave problem for `users` in `cell` with other cells radiating
    /// `cell_tx_w`. Also reports whether ZF was regularized.
    pub fn cell_problem(&self, cell: usize, users: &[usize], cell_tx_w: &[f64]) -> (CellProblem, bool) {
        let c = &self.topology.cells()[cell];
        let zf = self.zf_gains(cell, users);
        let r = self.phy.rx.responsivity_a_per_w;
        let b = self.phy.noise.bandwidth_hz;
        let mut coeff = Vec::with_capacity(users.len());
        let mut rate_scale = Vec::with_capacity(users.len());
        for (i, &u) in users.iter().enumerate() {
            let interference = intercell_interference(cell, &self.channel.interference_gains[u], cell_tx_w, &self.phy.rx);
            coeff.push(RATE_BOUND_FACTOR * (r * zf.effective[i]).powi(2) / (self.noise_var[u] + interference));
            rate_scale.push(zf.duty[i] * b / std::f64::consts::LN_2);
        }
        let problem = CellProblem {
            budget_w: c.budget_w,
            coeff,
            rate_scale,
            p_min_w: users.iter().map(|&u| self.scenario.p_min_w[u]).collect(),
            p_max_w: users.iter().map(|&u| self.scenario.p_max_w[u]).collect(),
        };
        (problem, zf.regularized)
    }

    /// Run `solve` on every non-empty cell, with interference sweeps when
    /// other cells' transmitted power matters.
    pub fn allocate_with<F>(&self, assoc: &AssociationMap, mut solve: F) -> SystemAllocation
    where
        F: FnMut(usize, &[usize], &CellProblem) -> PowerAllocation,
    {
        let n_cells = self.cells();
        let mut cell_tx = self.budgets();
        let sweeps = match self.phy.interference {
            InterferenceModel::FullLoad => 1,
            InterferenceModel::Transmitted => {
                for (c, users) in assoc.cell_users.iter().enumerate() {
                    if users.is_empty() {
                        cell_tx[c] = 0.0;
                    }
                }
                self.phy.sweeps.clamp(1, 5)
            }
        };
        let mut cells: Vec<Option<PowerAllocation>> = vec![None; n_cells];
        let mut regularized = false;
        for _ in 0..sweeps {
            for (c, users) in assoc.cell_users.iter().enumerate() {
                if users.is_empty() {
                    continue;
                }
                let (problem, reg) = self.cell_problem(c, users, &cell_tx);
                regularized |= reg;
                let a = solve(c, users, &problem);
                if self.phy.interference == InterferenceModel::Transmitted {
                    cell_tx[c] = a.consumed_w;
                }
                cells[c] = Some(a);
            }
        }
        let mut power_w = vec![0.0; self.scenario.len()];
        for (c, users) in assoc.cell_users.iter().enumerate() {
            if let Some(a) = &cells[c] {
                for (i, &u) in users.iter().enumerate() {
                    power_w[u] = a.power_w[i];
                }
            }
        }
        let cell_tx_w = cells.iter().map(|a| a.as_ref().map_or(0.0, |a| a.consumed_w)).collect();
        SystemAllocation { power_w, cells, cell_tx_w, regularized }
    }

    pub fn allocate_dual_gradient(&self, assoc: &AssociationMap, params: &SolverParams) -> SystemAllocation {
        self.allocate_with(assoc, |_, _, p| per_cell_dual_gradient(p, params))
    }

    pub fn allocate_uniform(&self, assoc: &AssociationMap) -> SystemAllocation {
        self.allocate_with(assoc, |_, _, p| super::uniform_allocation(p))
    }

    /// Interference level each cell sees when rates are evaluated.
    fn evaluation_tx(&self, alloc: &SystemAllocation) -> Vec<f64> {
        match self.phy.interference {
            InterferenceModel::FullLoad => self.budgets(),
            InterferenceModel::Transmitted => alloc.cell_tx_w.clone(),
        }
    }

    /// Per-user rates, the log objective over served users, and the sum rate.
    pub fn evaluate(&self, assoc: &AssociationMap, alloc: &SystemAllocation) -> SystemRates {
        let tx = self.evaluation_tx(alloc);
        let mut per_user_bps = vec![0.0; self.scenario.len()];
        let mut utility = 0.0;
        let mut served = 0;
        for (c, users) in assoc.cell_users.iter().enumerate() {
            if users.is_empty() {
                continue;
            }
            let (problem, _) = self.cell_problem(c, users, &tx);
            for (i, &u) in users.iter().enumerate() {
                let r = problem.rate(i, alloc.power_w[u]);
                per_user_bps[u] = r;
                utility += r.max(RATE_FLOOR_BPS).ln();
                served += 1;
            }
        }
        SystemRates { utility, sum_rate_bps: per_user_bps.iter().sum(), per_user_bps, served }
    }
}

/// Heuristic association followed by per-cell dual gradient.
pub fn heuristic_pipeline(
    net: &Network,
    assoc_params: &AssociationParams,
    solver: &SolverParams,
) -> (AssociationMap, SystemAllocation, SystemRates) {
    let assoc = net.associate(assoc_params);
    let alloc = net.allocate_dual_gradient(&assoc, solver);
    let rates = net.evaluate(&assoc, &alloc);
    (assoc, alloc, rates)
}
