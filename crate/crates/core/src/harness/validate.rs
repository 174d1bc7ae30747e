use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{csv_document, fixed_scenario, ExperimentConfig};
use crate::allocator::{exact_joint_enumeration, is_feasible, EnumeratorParams};
use crate::association::validate_association;
use crate::lab::Lab;
use crate::optics::{beam_intensity, noise_psd, user_rate, zf_residual};
use crate::rng::{derive_seed, seeded};
use crate::topology::PartitionScheme;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub instances: usize,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub digest: String,
    pub seed: u64,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<String> = self
            .checks
            .iter()
            .map(|c| format!("{},{},{},{:e},{:e}", c.name, c.instances, u8::from(c.passed), c.worst, c.limit))
            .collect();
        csv_document(&self.digest, self.seed, "check,instances,passed,worst,limit", &rows)
    }
}

fn check(name: &str, instances: usize, worst: f64, limit: f64) -> ValidationCheck {
    ValidationCheck { name: name.into(), instances, passed: worst <= limit, worst, limit }
}

/// Simpson's rule over `[0, 6 w]` of `I(r) 2 pi r`.
fn integrated_beam_power(lab: &Lab, p_t: f64) -> f64 {
    let z = lab.base.room.link_height_m();
    let w = crate::optics::beam_radius(z, &lab.phy.beam);
    let n = 20_000;
    let h = 6.0 * w / n as f64;
    let f = |r: f64| beam_intensity(r, z, p_t, &lab.phy.beam) * 2.0 * std::f64::consts::PI * r;
    let mut s = f(0.0) + f(6.0 * w);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Physics, association and allocator invariants on `instances` seeded
/// random scenarios per check.
pub fn run_validation(cfg: &ExperimentConfig, lab: &Lab, instances: usize) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    let p_t = lab.base.aps[0].tx_power_w;
    checks.push(check("beam_power_conservation", 1, (integrated_beam_power(lab, p_t) - p_t).abs() / p_t, 1e-6));

    let thermal = noise_psd(0.0, &lab.phy.noise, &lab.phy.rx).thermal.sqrt();
    checks.push(check("thermal_noise_5pA", 1, (thermal / 5e-12 - 1.0).abs(), 0.01));

    let mut rng = seeded(derive_seed(cfg.seed, 0x7661_6c31));
    let mut mono_worst: f64 = 0.0;
    for _ in 0..instances {
        let g = 1e-6 * (0.1 + rng.random::<f64>());
        let (p, i, v) = (0.05 * rng.random::<f64>(), 1e-12 * rng.random::<f64>(), 1e-12 * (0.1 + rng.random::<f64>()));
        let rx = &lab.phy.rx;
        let b = lab.phy.noise.bandwidth_hz;
        let r = user_rate(g, p, i, v, rx, b);
        // each comparison must not go the wrong way
        let bad = [
            user_rate(g, p * 1.1 + 1e-6, i, v, rx, b) < r,
            user_rate(g * 1.1, p, i, v, rx, b) < r,
            user_rate(g, p, i * 1.1 + 1e-15, v, rx, b) > r,
            user_rate(g, p, i, v * 1.1, rx, b) > r,
        ];
        if bad.iter().any(|&x| x) {
            mono_worst = 1.0;
        }
    }
    checks.push(check("rate_monotonicity", instances, mono_worst, 0.0));

    let mut assoc_bad = 0.0;
    let mut feas_bad: f64 = 0.0;
    let mut zf_worst: f64 = 0.0;
    let mut dominance_worst: f64 = f64::NEG_INFINITY;
    let mut zf_cells = 0;
    for k in 0..instances {
        let scheme = if k % 2 == 0 { PartitionScheme::MAP4 } else { PartitionScheme::Traditional };
        let topo = lab.topology(scheme)?;
        let users = 1 + k % 8;
        let snr = 10.0 + 20.0 * rng.random::<f64>();
        let scenario = fixed_scenario(&lab.base.room, &cfg.dataset.traffic, users, snr, derive_seed(cfg.seed, k as u64));
        let net = lab.network(&topo, &scenario);
        let params = lab.association(&topo);
        let assoc = net.associate(&params);
        // brute force: nearest centroid within the threshold, ties to the lower id
        let brute: Vec<Option<usize>> = scenario
            .users
            .iter()
            .map(|p| {
                let mut best: Option<(f64, usize)> = None;
                for c in topo.cells() {
                    let d = p.distance(c.centroid);
                    if d <= params.d_th_m && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, c.id));
                    }
                }
                best.map(|b| b.1)
            })
            .collect();
        if !validate_association(&assoc).is_empty() || brute != assoc.assignment {
            assoc_bad += 1.0;
        }
        let alloc = net.allocate_dual_gradient(&assoc, &lab.solver);
        for (c, members) in assoc.cell_users.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let (problem, _) = net.cell_problem(c, members, &net.budgets());
            let powers: Vec<f64> = members.iter().map(|&u| alloc.power_w[u]).collect();
            if problem.admission_feasible() && !is_feasible(&powers, &problem, 1e-9) {
                feas_bad += 1.0;
            }
            // residual of every co-scheduled group, as precoded
            let cell = &topo.cells()[c];
            for group in net.zf_gains(c, members).groups {
                let users: Vec<usize> = group.iter().map(|&i| members[i]).collect();
                zf_worst = zf_worst.max(zf_residual(cell, &users, &net.channel.gains));
                zf_cells += 1;
            }
        }
        if users <= 4 {
            let exact = exact_joint_enumeration(&net, &EnumeratorParams::new(params.d_th_m))?;
            let heuristic = net.evaluate(&assoc, &alloc);
            // infeasible associations rank below feasible ones
            let (e_ok, h_ok) = (!exact.allocation.admission_infeasible(), !alloc.admission_infeasible());
            let excess = match (e_ok, h_ok) {
                (false, true) => f64::INFINITY,
                (true, false) => f64::NEG_INFINITY,
                _ => (heuristic.utility - exact.rates.utility) / exact.rates.utility.abs(),
            };
            dominance_worst = dominance_worst.max(excess);
        }
    }
    checks.push(check("association_partition_and_nearest", instances, assoc_bad, 0.0));
    checks.push(check("dual_gradient_feasibility", instances, feas_bad, 0.0));
    checks.push(check("zf_residual", zf_cells, zf_worst, 1e-9));
    checks.push(check("exact_dominates_heuristic", instances.div_ceil(2), dominance_worst.max(0.0), 1e-6));
    Ok(ValidationReport { digest: cfg.digest(), seed: cfg.seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_defaults() {
        let cfg = ExperimentConfig::default();
        let lab = cfg.lab().unwrap();
        let r = run_validation(&cfg, &lab, 40).unwrap();
        assert!(r.all_passed(), "{}", r.to_csv());
        assert_eq!(r.checks.len(), 7);
    }

    #[test]
    fn broken_noise_constant_fails() {
        let mut cfg = ExperimentConfig::default();
        cfg.optics.noise.tia_feedback_ohm = 2.0e3;
        let lab = cfg.lab().unwrap();
        let r = run_validation(&cfg, &lab, 4).unwrap();
        assert!(!r.all_passed());
        assert!(!r.checks.iter().find(|c| c.name == "thermal_noise_5pA").unwrap().passed);
    }
}
