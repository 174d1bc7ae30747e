use serde::{Deserialize, Serialize};

use super::{Network, SolverParams, SystemAllocation, SystemRates};
use crate::association::{candidate_cells, AssociationMap, AssociationParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumeratorParams {
    pub d_th_m: f64,
    /// Largest branch count accepted.
    pub cap: u64,
    pub solver: SolverParams,
}

impl EnumeratorParams {
    pub fn new(d_th_m: f64) -> Self {
        Self { d_th_m, cap: 1_000_000, solver: SolverParams { tol: 1e-9, ..SolverParams::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub association: AssociationMap,
    pub allocation: SystemAllocation,
    pub rates: SystemRates,
    pub branches: u64,
    /// Branches skipped because some cell could not meet its users' minimum demand.
    pub infeasible_branches: u64,
}

/// Candidate cells per active user, ascending cell id.
fn candidates(net: &Network, d_th_m: f64) -> Vec<Vec<usize>> {
    let params = AssociationParams { d_th_m };
    (0..net.scenario.len())
        .map(|u| {
            if !net.scenario.active[u] {
                return vec![];
            }
            let mut c: Vec<usize> =
                candidate_cells(net.scenario.users[u], &net.topology.partition, &params).into_iter().map(|x| x.0).collect();
            c.sort_unstable();
            c
        })
        .collect()
}

/// Number of one-hot associations over the pruned candidate sets.
pub fn count_branches(net: &Network, d_th_m: f64) -> u128 {
    candidates(net, d_th_m).iter().filter(|c| !c.is_empty()).map(|c| c.len() as u128).product()
}

/// Exhaustive search over associations with a dual-gradient solve per cell.
///
/// Branches run in lexicographic order of the users' cell ids; among
/// objectives equal to within `1e-12` relative the first branch is kept.
/// Branches where some cell's minimum demands exceed its budget are skipped
/// unless every branch is like that.
pub fn exact_joint_enumeration(net: &Network, params: &EnumeratorParams) -> Result<ExactSolution> {
    let cand = candidates(net, params.d_th_m);
    let branches = count_branches(net, params.d_th_m);
    if branches > params.cap as u128 {
        return Err(Error::EnumerationCap { branches, cap: params.cap });
    }
    let free: Vec<usize> = (0..cand.len()).filter(|&u| !cand[u].is_empty()).collect();
    let budgets = net.budgets();
    let n_cells = budgets.len();

    let mut best: Option<(f64, AssociationMap, SystemAllocation, SystemRates)> = None;
    let mut infeasible = 0u64;
    for admit_all in [false, true] {
        let mut digits = vec![0usize; free.len()];
        let mut demand = vec![0.0; n_cells];
        loop {
            let mut assignment = vec![None; cand.len()];
            demand.iter_mut().for_each(|d| *d = 0.0);
            for (k, &u) in free.iter().enumerate() {
                let c = cand[u][digits[k]];
                assignment[u] = Some(c);
                demand[c] += net.scenario.p_min_w[u];
            }
            let admissible = demand.iter().zip(&budgets).all(|(d, b)| *d <= b * (1.0 + 1e-12));
            if !admit_all && !admissible {
                infeasible += 1;
            }
            if admit_all || admissible {
                let assoc = AssociationMap::from_assignment(assignment, n_cells, &net.scenario.active);
                let alloc = net.allocate_dual_gradient(&assoc, &params.solver);
                let rates = net.evaluate(&assoc, &alloc);
                let obj = rates.utility;
                let better = match &best {
                    None => true,
                    Some((b, ..)) => obj > b + 1e-12 * b.abs(),
                };
                if better {
                    best = Some((obj, assoc, alloc, rates));
                }
            }
            // mixed-radix increment, last user fastest
            let mut k = free.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < cand[free[k]].len() {
                    break;
                }
                digits[k] = 0;
                if k == 0 {
                    k = usize::MAX;
                    break;
                }
            }
            if k == usize::MAX || free.is_empty() {
                break;
            }
        }
        if best.is_some() {
            break;
        }
    }
    let (_, association, allocation, rates) = best.expect("at least one branch is evaluated");
    Ok(ExactSolution { association, allocation, rates, branches: branches as u64, infeasible_branches: infeasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::{heuristic_pipeline, PhyModel, Scenario};
    use crate::rng::seeded;
    use crate::topology::{PartitionScheme, Point, Topology};
    use rand::Rng as _;

    fn scenario(points: &[(f64, f64)]) -> Scenario {
        let n = points.len();
        Scenario {
            users: points.iter().map(|&(x, y)| Point::new(x, y)).collect(),
            active: vec![true; n],
            p_min_w: vec![0.01; n],
            p_max_w: vec![0.05; n],
            snr_db: 20.0,
        }
    }

    #[test]
    fn single_user_picks_best_cell() {
        let topo = Topology::reference(PartitionScheme::MAP4);
        let net = Network::new(&topo, &PhyModel::default(), &scenario(&[(2.3, 2.6)]));
        let params = EnumeratorParams::new(topo.covering_threshold(0.05));
        let sol = exact_joint_enumeration(&net, &params).unwrap();
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..4 {
            let assoc = AssociationMap::from_assignment(vec![Some(c)], 4, &[true]);
            let r = net.evaluate(&assoc, &net.allocate_dual_gradient(&assoc, &params.solver));
            if r.sum_rate_bps > best.0 {
                best = (r.sum_rate_bps, c);
            }
        }
        assert_eq!(sol.association.assignment, vec![Some(best.1)]);
    }

    #[test]
    fn counts_two_to_the_three() {
        let topo = Topology::reference(PartitionScheme::MAP4);
        // on the x = 2.5 line, away from y = 2.5: two MAP-4 cells within reach
        let net = Network::new(&topo, &PhyModel::default(), &scenario(&[(2.5, 0.6), (2.5, 1.0), (2.5, 4.2)]));
        assert_eq!(count_branches(&net, 1.5), 8);
        let sol = exact_joint_enumeration(&net, &EnumeratorParams::new(1.5)).unwrap();
        assert_eq!(sol.branches, 8);
    }

    #[test]
    fn refuses_over_cap() {
        let topo = Topology::reference(PartitionScheme::MAP4);
        let net = Network::new(&topo, &PhyModel::default(), &scenario(&[(2.5, 2.5); 6]));
        let mut p = EnumeratorParams::new(3.0);
        p.cap = 1000;
        match exact_joint_enumeration(&net, &p) {
            Err(Error::EnumerationCap { branches, cap }) => assert_eq!((branches, cap), (4096, 1000)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dominates_heuristic() {
        let mut rng = seeded(5);
        for scheme in [PartitionScheme::MAP4, PartitionScheme::Traditional] {
            let topo = Topology::reference(scheme);
            let d_th = topo.covering_threshold(0.05);
            for _ in 0..20 {
                let n = rng.random_range(1..=4);
                let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0)).collect();
                let net = Network::new(&topo, &PhyModel::default(), &scenario(&pts));
                let params = EnumeratorParams::new(d_th);
                let (_, h_alloc, h) = heuristic_pipeline(&net, &AssociationParams { d_th_m: d_th }, &params.solver);
                let sol = exact_joint_enumeration(&net, &params).unwrap();
                if !h_alloc.admission_infeasible() {
                    assert!(sol.rates.utility >= h.utility - 1e-12 * h.utility.abs());
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let topo = Topology::reference(PartitionScheme::MAP4);
        let net = Network::new(&topo, &PhyModel::default(), &scenario(&[(1.0, 2.4), (2.6, 2.4), (3.3, 3.0)]));
        let p = EnumeratorParams::new(topo.covering_threshold(0.05));
        assert_eq!(exact_joint_enumeration(&net, &p).unwrap(), exact_joint_enumeration(&net, &p).unwrap());
    }
}
