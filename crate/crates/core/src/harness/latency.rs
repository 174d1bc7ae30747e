use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{csv_document, fixed_scenario, median, percentile, ExperimentConfig};
use crate::allocator::{exact_joint_enumeration, EnumeratorParams, Network};
use crate::lab::Lab;
use crate::neural::{cnn_allocate, encode_input, raw_features, NeuralModel};
use crate::rng::derive_seed;
use crate::topology::PartitionScheme;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub warmup: usize,
    pub samples: usize,
    /// The enumerator takes seconds per run, so it gets its own counts.
    pub enumerator_warmup: usize,
    pub enumerator_samples: usize,
    pub users: usize,
    pub snr_db: f64,
    pub scheme: PartitionScheme,
    /// Candidate radius of the timed enumerator.
    pub enumerator_d_th_m: f64,
    pub enumerator_cap: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            warmup: 100,
            samples: 1000,
            enumerator_warmup: 1,
            enumerator_samples: 5,
            users: 8,
            snr_db: 20.0,
            scheme: PartitionScheme::Traditional,
            enumerator_d_th_m: 1.5,
            enumerator_cap: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: String,
    pub params: usize,
    pub samples: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub sum_rate_bps: f64,
    pub pct_of_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub digest: String,
    pub seed: u64,
    pub users: usize,
    pub cells: usize,
    pub branches: u64,
    pub rows: Vec<LatencyRow>,
}

fn time_ms<T>(warmup: usize, samples: usize, mut f: impl FnMut() -> Result<T>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = Instant::now();
        std::hint::black_box(f()?);
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

/// Wall-clock decision latency of the networks, the heuristic oracle and
/// the exact enumerator on one seeded scenario.
pub fn run_latency_bench(cfg: &ExperimentConfig, lab: &Lab, cnn: &NeuralModel, fc: &NeuralModel) -> Result<LatencyTable> {
    let lc = &cfg.latency;
    let topo = lab.topology(lc.scheme)?;
    let scenario = fixed_scenario(&lab.base.room, &cfg.dataset.traffic, lc.users, lc.snr_db, derive_seed(cfg.seed, 0x6c61_7431));
    let net = Network::new(&topo, &lab.phy, &scenario);
    let assoc_params = lab.association(&topo);

    let exact_params =
        EnumeratorParams { d_th_m: lc.enumerator_d_th_m, cap: lc.enumerator_cap, ..EnumeratorParams::new(lc.enumerator_d_th_m) };
    let exact = exact_joint_enumeration(&net, &exact_params)?;
    let exact_rate = exact.rates.sum_rate_bps;
    let pct = |r: f64| 100.0 * r / exact_rate;

    let mut rows = Vec::new();
    let assoc = net.associate(&assoc_params);
    for (name, model) in [("cnn", cnn), ("fc_dnn", fc)] {
        let norm = model
            .normalization
            .as_ref()
            .ok_or_else(|| Error::Model(format!("{name} model carries no normalization constants")))?;
        let input = encode_input(&raw_features(&net, &assoc, &norm.layout)?, norm);
        let (alloc, _) = cnn_allocate(model, &net, &assoc)?;
        let rate = net.evaluate(&assoc, &alloc).sum_rate_bps;
        let infer = time_ms(lc.warmup, lc.samples, || model.infer(&input))?;
        let pipeline = time_ms(lc.warmup, lc.samples, || {
            let a = net.associate(&assoc_params);
            cnn_allocate(model, &net, &a)
        })?;
        for (suffix, t) in [("inference", infer), ("pipeline", pipeline)] {
            rows.push(LatencyRow {
                method: format!("{name}_{suffix}"),
                params: model.param_count(),
                samples: t.len(),
                median_ms: median(&t),
                p95_ms: percentile(&t, 0.95),
                sum_rate_bps: rate,
                pct_of_exact: pct(rate),
            });
        }
    }

    let (oa, oalloc, _) = lab.oracle(&net);
    let oracle_rate = net.evaluate(&oa, &oalloc).sum_rate_bps;
    let t = time_ms(lc.warmup, lc.samples, || {
        let a = net.associate(&assoc_params);
        Ok(net.allocate_dual_gradient(&a, &lab.solver))
    })?;
    rows.push(LatencyRow {
        method: "oracle_pipeline".into(),
        params: 0,
        samples: t.len(),
        median_ms: median(&t),
        p95_ms: percentile(&t, 0.95),
        sum_rate_bps: oracle_rate,
        pct_of_exact: pct(oracle_rate),
    });

    let t = time_ms(lc.enumerator_warmup, lc.enumerator_samples, || exact_joint_enumeration(&net, &exact_params))?;
    rows.push(LatencyRow {
        method: "exact_enumerator".into(),
        params: 0,
        samples: t.len(),
        median_ms: median(&t),
        p95_ms: percentile(&t, 0.95),
        sum_rate_bps: exact_rate,
        pct_of_exact: 100.0,
    });
    Ok(LatencyTable {
        digest: cfg.digest(),
        seed: cfg.seed,
        users: lc.users,
        cells: net.cells(),
        branches: exact.branches,
        rows,
    })
}

impl LatencyTable {
    pub fn row(&self, method: &str) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Median enumerator latency over median CNN pipeline latency.
    pub fn speedup(&self) -> f64 {
        match (self.row("exact_enumerator"), self.row("cnn_pipeline")) {
            (Some(e), Some(c)) => e.median_ms / c.median_ms,
            _ => f64::NAN,
        }
    }

    /// Timing columns are wall-clock and vary between runs; every other
    /// column is deterministic.
    pub fn to_csv(&self) -> String {
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.method,
                    self.users,
                    self.cells,
                    self.branches,
                    r.params,
                    r.samples,
                    r.sum_rate_bps,
                    r.pct_of_exact,
                    r.median_ms,
                    r.p95_ms
                )
            })
            .collect();
        csv_document(
            &self.digest,
            self.seed,
            "method,users,cells,branches,params,samples,sum_rate_bps,pct_of_exact,median_ms,p95_ms",
            &rows,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_fc_dnn, build_paper_cnn, CanvasLayout, Normalization};

    #[test]
    fn table_shape_and_composition() {
        let layout = CanvasLayout::default();
        let mut cnn = build_paper_cnn(layout.shape(), layout.u_max, 0.2, 1).unwrap();
        let mut fc = build_fc_dnn(layout.shape(), layout.u_max, 0.2, 2).unwrap();
        cnn.normalization = Some(Normalization::fixed_for_tests());
        fc.normalization = cnn.normalization.clone();
        let mut cfg = ExperimentConfig::default();
        cfg.latency = LatencyConfig {
            warmup: 2,
            samples: 20,
            enumerator_warmup: 0,
            enumerator_samples: 1,
            users: 4,
            enumerator_d_th_m: 1.0,
            ..LatencyConfig::default()
        };
        let lab = cfg.lab().unwrap();
        let t = run_latency_bench(&cfg, &lab, &cnn, &fc).unwrap();
        let names: Vec<&str> = t.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["cnn_inference", "cnn_pipeline", "fc_dnn_inference", "fc_dnn_pipeline", "oracle_pipeline", "exact_enumerator"]);
        assert_eq!(t.cells, 16);
        assert_eq!(t.row("cnn_inference").unwrap().params, 236_496);
        assert!(t.row("fc_dnn_inference").unwrap().params > 1_000_000);
        let (inf, pipe) = (t.row("cnn_inference").unwrap(), t.row("cnn_pipeline").unwrap());
        assert!(inf.median_ms > 0.0 && pipe.median_ms.is_finite() && pipe.median_ms > 0.0);
        assert_eq!(inf.samples, 20);
        assert!(t.rows.iter().all(|r| r.p95_ms >= r.median_ms));
        assert!(t.to_csv().lines().nth(1).unwrap().ends_with("median_ms,p95_ms"));
    }
}
