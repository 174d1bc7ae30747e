//! Gaussian-beam propagation, line-of-sight gains, zero-forcing effective
//! gains, receiver noise and the achievable-rate lower bound.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::topology::{Cell, Point, Topology};

/// `e / (2 pi)`, the constant in the intensity-modulation rate lower bound.
pub const RATE_BOUND_FACTOR: f64 = std::f64::consts::E / (2.0 * PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamModel {
    /// Beam waist `w0` of the propagating Gaussian.
    pub waist_m: f64,
    pub wavelength_m: f64,
    pub lens_index: f64,
}

impl BeamModel {
    /// Bare VCSEL beam: 5 um waist at 1550 nm, lens index 1.55.
    pub const VCSEL: BeamModel = BeamModel { waist_m: 5e-6, wavelength_m: 1550e-9, lens_index: 1.55 };

    /// Post-lens beam whose spot radius equals `spot_radius_m` after `distance_m`.
    ///
    /// Takes the small-waist (divergence-dominated) root of
    /// `w0^2 + (z lambda / pi)^2 / w0^2 = w(z)^2`.
    pub fn with_spot_radius(spot_radius_m: f64, distance_m: f64, wavelength_m: f64, lens_index: f64) -> Self {
        let k = distance_m * wavelength_m / PI;
        let w2 = spot_radius_m * spot_radius_m;
        let disc = (w2 * w2 - 4.0 * k * k).max(0.0);
        // (w2 - sqrt(disc)) / 2 rewritten to avoid cancellation
        let s = 2.0 * k * k / (w2 + disc.sqrt());
        Self { waist_m: s.sqrt(), wavelength_m, lens_index }
    }

    pub fn rayleigh_range_m(&self) -> f64 {
        PI * self.waist_m * self.waist_m / self.wavelength_m
    }
}

/// Spot radius `w(z) = w0 sqrt(1 + (z / z_R)^2)`.
pub fn beam_radius(z: f64, beam: &BeamModel) -> f64 {
    let zr = beam.rayleigh_range_m();
    beam.waist_m * (1.0 + (z / zr).powi(2)).sqrt()
}

/// Gaussian intensity at radial offset `r` and axial distance `z`, W/m^2.
pub fn beam_intensity(r: f64, z: f64, p_t: f64, beam: &BeamModel) -> f64 {
    let w = beam_radius(z, beam);
    let w2 = w * w;
    2.0 * p_t / (PI * w2) * (-2.0 * r * r / w2).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverModel {
    pub responsivity_a_per_w: f64,
    pub fov_half_angle_rad: f64,
    pub detector_area_m2: f64,
    pub cpc_gain: f64,
    pub faces: usize,
    pub pds_per_face: usize,
}

impl Default for ReceiverModel {
    fn default() -> Self {
        let fov = 30f64.to_radians();
        Self {
            responsivity_a_per_w: 0.9,
            fov_half_angle_rad: fov,
            detector_area_m2: 1e-6,
            cpc_gain: cpc_gain(BeamModel::VCSEL.lens_index, fov),
            faces: 1,
            pds_per_face: 1,
        }
    }
}

/// Ideal non-imaging concentrator gain `n^2 / sin^2(fov)`.
pub fn cpc_gain(index: f64, fov_half_angle_rad: f64) -> f64 {
    index * index / fov_half_angle_rad.sin().powi(2)
}

/// Gain of one PD to one AP; zero outside the field of view.
pub fn los_channel_gain(ap: Point, user: Point, link_height_m: f64, beam: &BeamModel, rx: &ReceiverModel) -> f64 {
    let r = ap.distance(user);
    let incidence = r.atan2(link_height_m);
    if incidence > rx.fov_half_angle_rad {
        return 0.0;
    }
    // Intensity per unit transmitted power.
    let irradiance = beam_intensity(r, link_height_m, 1.0, beam);
    (irradiance * rx.detector_area_m2 * rx.cpc_gain).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub temperature_k: f64,
    pub tia_feedback_ohm: f64,
    pub tia_noise_figure: f64,
    pub electron_charge_c: f64,
    pub rin_db_per_hz: f64,
    pub bandwidth_hz: f64,
    pub boltzmann_j_per_k: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            temperature_k: 300.0,
            tia_feedback_ohm: 1.0e3,
            tia_noise_figure: 1.5,
            electron_charge_c: 1.602_176_634e-19,
            rin_db_per_hz: -155.0,
            bandwidth_hz: 3.5e9,
            boltzmann_j_per_k: 1.380_649e-23,
        }
    }
}

impl NoiseModel {
    pub fn rin_per_hz(&self) -> f64 {
        10f64.powf(self.rin_db_per_hz / 10.0)
    }
}

/// One-sided noise PSD split by source, A^2/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePsd {
    pub thermal: f64,
    pub shot: f64,
    pub rin: f64,
}

impl NoisePsd {
    pub fn total(&self) -> f64 {
        self.thermal + self.shot + self.rin
    }
}

pub fn noise_psd(p_rx_w: f64, noise: &NoiseModel, rx: &ReceiverModel) -> NoisePsd {
    let current = rx.responsivity_a_per_w * p_rx_w;
    NoisePsd {
        thermal: 4.0 * noise.boltzmann_j_per_k * noise.temperature_k * noise.tia_noise_figure / noise.tia_feedback_ohm,
        shot: 2.0 * noise.electron_charge_c * current,
        rin: noise.rin_per_hz() * current * current,
    }
}

/// Rate lower bound `B log2(1 + e/(2 pi) (R H)^2 P / (v^2 + I))`, bit/s.
pub fn user_rate(gain: f64, power_w: f64, interference_w: f64, noise_var: f64, rx: &ReceiverModel, b_hz: f64) -> f64 {
    let signal = (rx.responsivity_a_per_w * gain).powi(2) * power_w;
    b_hz * (1.0 + RATE_BOUND_FACTOR * signal / (noise_var + interference_w)).log2()
}

/// `H_u^c`: sum of the user's gains over the cell's APs (PDs already combined
/// into `gains`).
pub fn aggregate_cell_gain(user: usize, cell: &Cell, gains: &[Vec<f64>]) -> f64 {
    cell.ap_ids.iter().map(|&a| gains[user][a]).sum()
}

/// Mean squared per-AP gain of a cell, `sum_a H_{u,a}^2 / A_c`.
///
/// An interfering cell spreads its power evenly over its APs and the APs'
/// contributions add in power, so this is the cell's gain for interference.
pub fn interference_cell_gain(user: usize, cell: &Cell, gains: &[Vec<f64>]) -> f64 {
    if cell.ap_ids.is_empty() {
        return 0.0;
    }
    cell.ap_ids.iter().map(|&a| gains[user][a].powi(2)).sum::<f64>() / cell.ap_ids.len() as f64
}

/// Received interference `sum_{c' != c} R^2 G_u^{c'} P_tx^{c'}`, where
/// `G_u^{c'}` is [`interference_cell_gain`]. For single-AP cells this is
/// `sum (R H_u^{c'})^2 P_tx^{c'}`.
pub fn intercell_interference(
    serving_cell: usize,
    cell_power_gains: &[f64],
    cell_tx_power_w: &[f64],
    rx: &ReceiverModel,
) -> f64 {
    let r2 = rx.responsivity_a_per_w * rx.responsivity_a_per_w;
    cell_power_gains
        .iter()
        .zip(cell_tx_power_w)
        .enumerate()
        .filter(|(c, _)| *c != serving_cell)
        .map(|(_, (&g, &p))| r2 * g * p)
        .sum()
}

/// Zero-forcing outcome for the users of one cell, in `served_users` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfGains {
    pub effective: Vec<f64>,
    /// Fraction of time each user is scheduled (1 unless the cell is overloaded).
    pub duty: Vec<f64>,
    /// Set when the Gram matrix had to be regularized.
    pub regularized: bool,
    /// Users precoded together in each time slot, as indices into
    /// `served_users`.
    pub groups: Vec<Vec<usize>>,
}

/// Relative ridge added to a singular Gram matrix.
pub const ZF_RIDGE: f64 = 1e-9;

fn gram_inverse_diag(rows: &[&[f64]]) -> (Vec<f64>, bool) {
    let n = rows.len();
    let gram = DMatrix::from_fn(n, n, |i, j| rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum::<f64>());
    let trace = gram.trace();
    let mut regularized = false;
    let inv = match gram.clone().cholesky() {
        Some(ch) if well_conditioned(&ch.l(), trace / n as f64) => ch.inverse(),
        _ => {
            regularized = true;
            let ridge = ZF_RIDGE * (trace / n as f64).max(f64::MIN_POSITIVE);
            let mut g = gram;
            for i in 0..n {
                g[(i, i)] += ridge;
            }
            g.cholesky().map(|c| c.inverse()).unwrap_or_else(|| DMatrix::zeros(n, n))
        }
    };
    ((0..n).map(|i| inv[(i, i)]).collect(), regularized)
}

fn well_conditioned(l: &DMatrix<f64>, scale: f64) -> bool {
    (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > 1e-14 * scale)
}

/// Effective per-user gains after ZF precoding with unit-norm precoder columns.
///
/// For `U_c <= A_c` the gain of user `u` is `1 / sqrt([(H H^T)^-1]_uu)`.
/// Overloaded cells are time-shared round-robin over windows of `A_c`
/// consecutive users; a user's gain is the mean over the windows it is in
/// and its duty factor is `A_c / U_c`.
pub fn zf_effective_gains(cell: &Cell, served_users: &[usize], gains: &[Vec<f64>]) -> ZfGains {
    let n = served_users.len();
    let a = cell.ap_ids.len();
    let rows: Vec<Vec<f64>> =
        served_users.iter().map(|&u| cell.ap_ids.iter().map(|&ap| gains[u][ap]).collect()).collect();
    if n == 0 {
        return ZfGains { effective: vec![], duty: vec![], regularized: false, groups: vec![] };
    }
    if n <= a {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (diag, regularized) = gram_inverse_diag(&refs);
        let effective = diag.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        return ZfGains { effective, duty: vec![1.0; n], regularized, groups: vec![(0..n).collect()] };
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut regularized = false;
    let mut groups = Vec::with_capacity(n);
    for slot in 0..n {
        let group: Vec<usize> = (0..a).map(|j| (slot + j) % n).collect();
        groups.push(group.clone());
        let refs: Vec<&[f64]> = group.iter().map(|&i| rows[i].as_slice()).collect();
        let (diag, reg) = gram_inverse_diag(&refs);
        regularized |= reg;
        for (&i, &d) in group.iter().zip(&diag) {
            sum[i] += if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
            count[i] += 1;
        }
    }
    let duty = a as f64 / n as f64;
    ZfGains {
        effective: sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect(),
        duty: vec![duty; n],
        regularized,
        groups,
    }
}

/// ZF with semi-orthogonal user grouping and slot reuse.
///
/// Users are taken in decreasing channel-norm order and added to the first
/// group of fewer than `A_c` users in which every member keeps a ZF gain of at
/// least `min_ratio` times its own channel norm; otherwise they open a new
/// group. Each group is one round-robin slot. Afterwards every slot is filled
/// with any other user that passes the same test, so users that conflict with
/// nobody are served in every slot. A user's duty is the fraction of slots it
/// is in and its gain is the smallest ZF gain over those slots.
pub fn grouped_zf_gains(cell: &Cell, served_users: &[usize], gains: &[Vec<f64>], min_ratio: f64) -> ZfGains {
    let n = served_users.len();
    let a = cell.ap_ids.len();
    let rows: Vec<Vec<f64>> =
        served_users.iter().map(|&u| cell.ap_ids.iter().map(|&ap| gains[u][ap]).collect()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    // ZF gains of `group` if every member keeps `min_ratio` of its norm.
    let admit = |group: &[usize]| -> Option<Vec<f64>> {
        if group.len() > a {
            return None;
        }
        let refs: Vec<&[f64]> = group.iter().map(|&k| rows[k].as_slice()).collect();
        let (diag, reg) = gram_inverse_diag(&refs);
        let eff: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        (!reg && group.iter().zip(&eff).all(|(&k, &e)| e >= min_ratio * norms[k])).then_some(eff)
    };

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        let slot = groups.iter().position(|g| {
            let mut trial = g.clone();
            trial.push(i);
            admit(&trial).is_some()
        });
        match slot {
            Some(s) => groups[s].push(i),
            None => groups.push(vec![i]),
        }
    }
    if groups.len() > 1 {
        for g in groups.iter_mut() {
            for &i in &order {
                if g.contains(&i) {
                    continue;
                }
                let mut trial = g.clone();
                trial.push(i);
                if admit(&trial).is_some() {
                    *g = trial;
                }
            }
        }
    }

    let mut effective = vec![f64::INFINITY; n];
    let mut slots = vec![0usize; n];
    let mut regularized = false;
    for g in &groups {
        let eff = admit(g).unwrap_or_else(|| {
            // singleton groups of zero-norm users fail the ratio test
            regularized = true;
            g.iter().map(|&k| norms[k]).collect()
        });
        for (&k, &e) in g.iter().zip(&eff) {
            effective[k] = effective[k].min(e);
            slots[k] += 1;
        }
    }
    let total = groups.len().max(1) as f64;
    ZfGains {
        effective: effective.iter().map(|&e| if e.is_finite() { e } else { 0.0 }).collect(),
        duty: slots.iter().map(|&s| s as f64 / total).collect(),
        regularized,
        groups,
    }
}

/// Largest `|cross gain| / direct gain` after applying the normalized ZF
/// precoder to the cell channel. Only meaningful for `U_c <= A_c`.
pub fn zf_residual(cell: &Cell, served_users: &[usize], gains: &[Vec<f64>]) -> f64 {
    let n = served_users.len();
    if n <= 1 {
        return 0.0;
    }
    let a = cell.ap_ids.len();
    let h = DMatrix::from_fn(n, a, |i, j| gains[served_users[i]][cell.ap_ids[j]]);
    // H^T = Q R gives H^+ = Q R^-T without squaring the condition number.
    let qr = h.transpose().qr();
    let Some(r_inv) = qr.r().try_inverse() else { return f64::INFINITY };
    let mut w = qr.q() * r_inv.transpose();
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let hw = &h * &w;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                worst = worst.max(hw[(i, j)].abs() / hw[(j, j)].abs());
            }
        }
    }
    worst
}

/// Per-(user, AP) line-of-sight gains for a set of receiver positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// `gains[u][a]`, PD-combined.
    pub gains: Vec<Vec<f64>>,
    /// `cell_gains[u][c] = H_u^c`.
    pub cell_gains: Vec<Vec<f64>>,
    /// `interference_gains[u][c]`, see [`interference_cell_gain`].
    pub interference_gains: Vec<Vec<f64>>,
}

impl ChannelState {
    pub fn compute(topology: &Topology, users: &[Point], beam: &BeamModel, rx: &ReceiverModel) -> Self {
        let z = topology.room.link_height_m();
        let pds = (rx.pds_per_face * rx.faces.min(1)) as f64;
        let gains: Vec<Vec<f64>> = users
            .iter()
            .map(|&u| topology.aps.iter().map(|ap| pds * los_channel_gain(ap.position, u, z, beam, rx)).collect())
            .collect();
        let cell_gains = (0..users.len())
            .map(|u| topology.cells().iter().map(|c| aggregate_cell_gain(u, c, &gains)).collect())
            .collect();
        let interference_gains = (0..users.len())
            .map(|u| topology.cells().iter().map(|c| interference_cell_gain(u, c, &gains)).collect())
            .collect();
        Self { gains, cell_gains, interference_gains }
    }

    pub fn users(&self) -> usize {
        self.gains.len()
    }

    /// Strongest single-AP gain of a user.
    pub fn best_ap_gain(&self, user: usize) -> f64 {
        self.gains[user].iter().copied().fold(0.0, f64::max)
    }
}
