//! Seeded fixtures shared by the benchmarks.

use owc_core::allocator::Network;
use owc_core::harness::{fixed_scenario, ExperimentConfig};
use owc_core::lab::Lab;
use owc_core::neural::{build_paper_cnn, CanvasLayout, NeuralModel, Normalization};
use owc_core::topology::{PartitionScheme, Topology};

pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub lab: Lab,
    pub topo: Topology,
}

impl Fixture {
    pub fn new(scheme: PartitionScheme) -> Self {
        let cfg = ExperimentConfig::default();
        let lab = cfg.lab().expect("default lab");
        let topo = lab.topology(scheme).expect("default topology");
        Self { cfg, lab, topo }
    }

    pub fn network(&self, users: usize, seed: u64) -> Network {
        let s = fixed_scenario(&self.lab.base.room, &self.cfg.dataset.traffic, users, 20.0, seed);
        self.lab.network(&self.topo, &s)
    }
}

/// Untrained CNN; inference cost does not depend on the weights.
pub fn untrained_cnn() -> NeuralModel {
    let layout = CanvasLayout::default();
    let mut m = build_paper_cnn(layout.shape(), layout.u_max, 0.2, 1).expect("cnn");
    m.normalization = Some(Normalization {
        layout,
        feature_lo: vec![0.0, 0.01, 0.01, 0.05, 0.0, 0.01, 0.01, 0.0, 10.0, 0.01, 0.0, -5.0, 0.0],
        feature_hi: vec![1.0, 0.05, 0.05, 0.2, 16.0, 0.4, 0.4, 2.0, 40.0, 0.05, 0.2, 5.0, 10.0],
        label_lo_w: -0.02,
        label_hi_w: 0.02,
    });
    m
}
