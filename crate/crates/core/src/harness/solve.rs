use serde::{Deserialize, Serialize};

use super::{csv_document, fixed_scenario, ExperimentConfig, Method, MethodKind};
use crate::allocator::{Network, Scenario, SystemRates};
use crate::association::AssociationMap;
use crate::lab::Lab;
use crate::rng::derive_seed;
use crate::topology::PartitionScheme;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub users: usize,
    pub snr_db: f64,
    pub scheme: PartitionScheme,
    pub method: MethodKind,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { users: 8, snr_db: 20.0, scheme: PartitionScheme::MAP4, method: MethodKind::Oracle }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub digest: String,
    pub seed: u64,
    pub method: MethodKind,
    pub scheme: PartitionScheme,
    pub scenario: Scenario,
    pub association: AssociationMap,
    pub power_w: Vec<f64>,
    pub rates: SystemRates,
}

/// One seeded scenario solved with one method.
pub fn run_solve(cfg: &ExperimentConfig, lab: &Lab, method: Method<'_>) -> Result<SolveResult> {
    let sc = &cfg.solve;
    let topo = lab.topology(sc.scheme)?;
    let scenario = fixed_scenario(&lab.base.room, &cfg.dataset.traffic, sc.users, sc.snr_db, derive_seed(cfg.seed, 0x736f_6c76));
    let net = Network::new(&topo, &lab.phy, &scenario);
    let (association, alloc) = method.run(lab, &net)?;
    let rates = net.evaluate(&association, &alloc);
    Ok(SolveResult {
        digest: cfg.digest(),
        seed: cfg.seed,
        method: method.kind(),
        scheme: sc.scheme,
        scenario,
        association,
        power_w: alloc.power_w,
        rates,
    })
}

impl SolveResult {
    pub fn users_csv(&self) -> String {
        let rows: Vec<String> = (0..self.scenario.len())
            .map(|u| {
                let p = self.scenario.users[u];
                let cell = self.association.assignment[u].map_or(String::new(), |c| c.to_string());
                format!(
                    "{u},{},{},{},{},{},{},{},{}",
                    p.x,
                    p.y,
                    self.scenario.p_min_w[u],
                    self.scenario.p_max_w[u],
                    cell,
                    self.power_w[u],
                    self.rates.per_user_bps[u],
                    self.method.label()
                )
            })
            .collect();
        csv_document(&self.digest, self.seed, "user_id,x_m,y_m,p_min_w,p_max_w,cell,power_w,rate_bps,method", &rows)
    }

    pub fn summary_csv(&self) -> String {
        let row = format!(
            "{},{},{},{},{},{},{}",
            self.method.label(),
            self.scheme.label(),
            self.scenario.len(),
            self.scenario.snr_db,
            self.rates.served,
            self.rates.sum_rate_bps,
            self.rates.utility
        );
        csv_document(&self.digest, self.seed, "method,partition,users,snr_db,served,sum_rate_bps,utility", &[row])
    }
}
