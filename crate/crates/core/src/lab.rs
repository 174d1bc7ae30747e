//! Physical setup shared by dataset generation and experiments.

use serde::{Deserialize, Serialize};

use crate::allocator::{heuristic_pipeline, Network, PhyModel, Scenario, SolverParams, SystemAllocation, SystemRates};
use crate::association::{AssociationMap, AssociationParams};
use crate::topology::{PartitionScheme, Topology};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    /// AP grid; its partition is replaced per experiment.
    pub base: Topology,
    pub phy: PhyModel,
    pub solver: SolverParams,
    /// Fixed association threshold; `None` uses each partition's covering
    /// threshold plus `d_th_margin_m`.
    pub d_th_m: Option<f64>,
    pub d_th_margin_m: f64,
}

impl Default for Lab {
    fn default() -> Self {
        Self {
            base: Topology::reference(PartitionScheme::MAP4),
            phy: PhyModel::default(),
            solver: SolverParams::default(),
            d_th_m: None,
            d_th_margin_m: 0.05,
        }
    }
}

impl Lab {
    pub fn topology(&self, scheme: PartitionScheme) -> Result<Topology> {
        self.base.with_scheme(scheme)
    }

    pub fn d_th(&self, topology: &Topology) -> f64 {
        self.d_th_m.unwrap_or_else(|| topology.covering_threshold(self.d_th_margin_m))
    }

    pub fn association(&self, topology: &Topology) -> AssociationParams {
        AssociationParams { d_th_m: self.d_th(topology) }
    }

    pub fn network(&self, topology: &Topology, scenario: &Scenario) -> Network {
        Network::new(topology, &self.phy, scenario)
    }

    /// Heuristic association plus dual gradient (the labelling oracle).
    pub fn oracle(&self, net: &Network) -> (AssociationMap, SystemAllocation, SystemRates) {
        heuristic_pipeline(net, &self.association(&net.topology), &self.solver)
    }
}
